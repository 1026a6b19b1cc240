import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_nds
from qbnet import presets
from qbnet.errors import DomainError, ParameterError
from qbnet.model import (SCMBasis, embed_gamma, lump, network_blocks, normalize_gamma_xx, scm,
                         well_posed)


def test_scm_zero_and_identity():
    b = SCMBasis((np.eye(3), np.ones((3, 3))))
    assert np.array_equal(scm(b, [0, 0]), np.zeros((3, 3)))
    assert np.array_equal(scm(SCMBasis((np.eye(2),)), [2.0]), 2 * np.eye(2))


def test_scm_matches_entrywise_sum():
    rng = np.random.default_rng(1)
    mats = [rng.normal(size=(3, 4)) for _ in range(3)]
    th = rng.normal(size=3)
    expect = np.zeros((3, 4))
    for i in range(3):
        for j in range(4):
            expect[i, j] = sum(th[k] * mats[k][i, j] for k in range(3))
    assert np.allclose(scm(SCMBasis(tuple(mats)), th), expect, atol=1e-14)


def test_scm_rejects_wrong_length():
    with pytest.raises(ParameterError):
        scm(SCMBasis((np.eye(2),)), [1.0, 2.0])


def test_normalize_gamma_fold_rule():
    assert np.array_equal(normalize_gamma_xx([[3.0]], 1), [[3.0]])
    out = normalize_gamma_xx([[1.0, 2.0, 3.0, 4.0]], 2)
    assert np.array_equal(out, [[1.0, 5.0, 0.0, 4.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2 ** 31))
def test_normalize_gamma_preserves_quadratic_map(m, seed):
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(2, m * m))
    Gn = normalize_gamma_xx(G, m)
    for _ in range(5):
        x = rng.normal(size=m)
        assert np.allclose(G @ np.kron(x, x), Gn @ np.kron(x, x), rtol=1e-12, atol=1e-12)


def test_embed_gamma_single_and_scalar_pair():
    blk = np.arange(8.0).reshape(2, 4)
    assert np.array_equal(embed_gamma([blk], [2], [2]), blk)
    out = embed_gamma([[[2.0]], [[3.0]]], [1, 1], [1, 1])
    assert out.shape == (2, 4)
    assert np.array_equal(out, [[2.0, 0, 0, 0], [0, 0, 0, 3.0]])


def test_embed_gamma_circuit_terms():
    subs, _, _ = presets.circuit()
    nb = network_blocks(subs)
    x = np.random.default_rng(2).normal(size=6)
    q = nb.Gamma_xx @ np.kron(x, x)
    C1, C2 = presets.CIRCUIT_CAPACITANCE
    expect = np.array([0, 0, x[1] * x[2] / C1, 0, 0, x[4] * x[5] / C2])
    assert np.allclose(q, expect, atol=1e-14)


def test_well_posed_cases():
    ok, rc = well_posed(np.zeros((2, 2)), np.eye(2))
    assert ok and rc == 1.0
    assert not well_posed(np.eye(2), np.eye(2))[0]
    rng = np.random.default_rng(3)
    D = rng.normal(size=(4, 4))
    D *= 0.5 / np.linalg.norm(D, 2)
    assert well_posed(D, np.eye(4))[0]


def test_lump_theta_zero_is_decoupled():
    rng = np.random.default_rng(4)
    subs, basis = random_nds(rng)
    nb = network_blocks(subs)
    m = lump(subs, basis, np.zeros(basis.m_theta))
    assert np.array_equal(m.A, nb.A_xx) and np.array_equal(m.B, nb.B_xu)
    assert np.array_equal(m.C, nb.C_yx) and np.array_equal(m.D, nb.D_yu)
    assert np.array_equal(m.Gamma_x, nb.Gamma_xx) and np.array_equal(m.Gamma_u, nb.Gamma_xu)


def test_lump_matches_pointwise_elimination():
    rng = np.random.default_rng(5)
    subs, basis = random_nds(rng)
    nb = network_blocks(subs)
    th = 0.3 * rng.normal(size=basis.m_theta)
    Th = scm(basis, th)
    m = lump(subs, basis, th)
    for _ in range(100):
        x, u = rng.normal(size=4), rng.normal(size=2)
        # solve v = Th z, z = Czx x + Dzv v + Dzu u directly
        v = np.linalg.solve(np.eye(2) - Th @ nb.D_zv, Th @ (nb.C_zx @ x + nb.D_zu @ u))
        f = (nb.A_xx @ x + nb.B_xv @ v + nb.B_xu @ u + nb.Gamma_xx @ np.kron(x, x)
             + nb.Gamma_xv @ np.kron(x, v) + nb.Gamma_xu @ np.kron(x, u))
        y = nb.C_yx @ x + nb.D_yv @ v + nb.D_yu @ u
        assert np.allclose(m.rhs(x, u), f, atol=1e-12)
        assert np.allclose(m.output(x, u), y, atol=1e-12)


def test_lump_circuit_h1_at_one_plus_i():
    m = presets.circuit_model()
    s = 1 + 1j
    H = m.C @ np.linalg.solve(s * m.E - m.A, m.B) + m.D
    assert np.allclose(H[:, 0], presets.circuit_h1(s), rtol=1e-12)


def test_lump_ill_posed_raises():
    rng = np.random.default_rng(6)
    subs, _ = random_nds(rng)
    nb = network_blocks(subs)
    # pick Theta so that I - D_zv Theta is singular
    D = nb.D_zv
    basis = SCMBasis((np.linalg.inv(D),))
    with pytest.raises(DomainError):
        lump(subs, basis, [1.0])


def test_rhs_jacobian_finite_difference():
    m = presets.circuit_model()
    rng = np.random.default_rng(7)
    x, u = rng.normal(size=6), np.array([0.3])
    J = m.rhs_jacobian(x, u)
    h = 1e-6
    Jfd = np.column_stack([(m.rhs(x + h * e, u) - m.rhs(x - h * e, u)) / (2 * h) for e in np.eye(6)])
    assert np.allclose(J, Jfd, atol=1e-7)
