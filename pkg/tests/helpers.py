"""Random model factories shared by the test modules."""

import numpy as np

from qbnet.model import LumpedQBTI, SCMBasis, SubsystemQBTI


def stable_matrix(rng, n, margin=0.5):
    M = rng.normal(size=(n, n))
    shift = np.max(np.linalg.eigvals(M).real) + margin
    return M - shift * np.eye(n)


def random_model(rng, m_x=3, m_u=1, m_y=2, gamma=0.3, descriptor=False):
    """Small stable QBTI model; with ``descriptor`` the last state is algebraic."""
    A = stable_matrix(rng, m_x)
    E = np.eye(m_x)
    if descriptor and m_x > 1:
        E[-1, -1] = 0.0
        A[-1, -1] = -1.0 - abs(A[-1, -1])
    return LumpedQBTI(E=E, A=A, B=rng.normal(size=(m_x, m_u)), C=rng.normal(size=(m_y, m_x)),
                      D=rng.normal(size=(m_y, m_u)),
                      Gamma_x=gamma * rng.normal(size=(m_x, m_x * m_x)),
                      Gamma_u=gamma * rng.normal(size=(m_x, m_x * m_u)))


def random_subsystem(rng, m_x=2, m_v=1, m_z=1, m_u=1, m_y=1, index=0):
    return SubsystemQBTI(
        E=np.eye(m_x), A_xx=stable_matrix(rng, m_x, 1.0),
        B_xv=rng.normal(size=(m_x, m_v)), B_xu=rng.normal(size=(m_x, m_u)),
        C_zx=rng.normal(size=(m_z, m_x)), C_yx=rng.normal(size=(m_y, m_x)),
        D_zv=0.2 * rng.normal(size=(m_z, m_v)), D_zu=rng.normal(size=(m_z, m_u)),
        D_yv=rng.normal(size=(m_y, m_v)), D_yu=rng.normal(size=(m_y, m_u)),
        Gamma_xx=0.2 * rng.normal(size=(m_x, m_x * m_x)),
        Gamma_xv=0.2 * rng.normal(size=(m_x, m_x * m_v)),
        Gamma_xu=0.2 * rng.normal(size=(m_x, m_x * m_u)),
        index=index)


def random_nds(rng, n_sub=2, m_x=2):
    """Two-port-per-subsystem network with an off-diagonal coupling basis."""
    subs = [random_subsystem(rng, m_x, index=i) for i in range(n_sub)]
    basis = SCMBasis((np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [1.0, 0.0]]),
                      np.eye(2)))
    return subs, basis
