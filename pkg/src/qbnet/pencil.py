"""Analysis of the descriptor pencil ``s E - A``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla

from .errors import DomainError, NumericError, ParameterError

INFINITE_EIG = 1e10
RESOLVENT_RCOND = 1e-12


@dataclass(frozen=True, eq=False)
class PencilSpectrum:
    """Finite generalized eigenvalues of ``(E, A)`` and, optionally, residues.

    ``residues[i]`` is the matrix ``P_i`` of the partial fraction expansion
    ``(sE - A)^-1 = constant + sum_i P_i / (s - eigenvalues[i])``. The
    constant term is the polynomial part of an impulse-free pencil with
    singular ``E`` (it vanishes when ``E`` is invertible). When a semisimple
    eigenvalue is repeated, the whole cluster residue is attached to its first
    member and the others carry zero matrices.
    """

    eigenvalues: np.ndarray
    rank_E: int
    right: np.ndarray = None
    left: np.ndarray = None
    residues: tuple = None
    constant: np.ndarray = None

    def expand(self, s):
        """Evaluate the partial fraction expansion at ``s``."""
        out = np.array(self.constant, dtype=complex, copy=True)
        for P, l in zip(self.residues, self.eigenvalues):
            out += P / (s - l)
        return out

    def __len__(self):
        return len(self.eigenvalues)

    def is_stable(self, margin=0.0):
        return bool(np.all(self.eigenvalues.real < -margin))


def _check_square(E, A):
    E = np.atleast_2d(np.asarray(E, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if E.shape != A.shape or E.shape[0] != E.shape[1]:
        raise ParameterError(f"E and A must be square with equal shape, got {E.shape}, {A.shape}")
    return E, A


def _equilibrate(E, A, return_norms=False):
    """Scale rows of ``[E A]`` to unit norm; eigenvalues are unaffected."""
    norms = np.sqrt(np.sum(E * E, axis=1) + np.sum(A * A, axis=1))
    norms[norms == 0] = 1.0
    if return_norms:
        return E / norms[:, None], A / norms[:, None], norms
    return E / norms[:, None], A / norms[:, None]


def rank_E(E, rtol=1e-10):
    E = np.atleast_2d(np.asarray(E, dtype=float))
    if E.size == 0:
        return 0
    sv = np.linalg.svd(E, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def _sample_points(n, radius):
    # Chebyshev points of the first kind on [-radius, radius]
    k = np.arange(n)
    return radius * np.cos((2 * k + 1) * np.pi / (2 * n))


def _det_samples(E, A, pts):
    dets = np.empty(len(pts))
    scales = np.empty(len(pts))
    for i, s in enumerate(pts):
        M = s * E - A
        dets[i] = np.linalg.det(M)
        scales[i] = np.prod(np.linalg.norm(M, axis=1))
    return dets, scales


def is_regular(E, A, tol=1e-10, seed=0):
    """True iff ``det(sE - A)`` is not identically zero.

    The determinant is sampled at ``m_x + 1`` random real points; the pencil is
    declared regular when any sample exceeds ``tol`` times the product of the
    row norms of ``sE - A`` at that point.
    """
    E, A = _check_square(E, A)
    n = E.shape[0]
    if n == 0:
        return True
    E, A = _equilibrate(E, A)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-2.0, 2.0, n + 1) * (1.0 + np.linalg.norm(A, 2))
    dets, scales = _det_samples(E, A, pts)
    return bool(np.any(np.abs(dets) > tol * np.where(scales > 0, scales, 1.0)))


def det_degree(E, A, tol=1e-10):
    """Degree of the polynomial ``det(sE - A)`` from sampled values.

    After row equilibration the determinant is interpolated at ``m_x + 1``
    Chebyshev points of ``[-r, r]`` with ``r = 1 + |A|``. The degree is the
    highest power whose coefficient, measured at ``|s| = r``, exceeds ``tol``
    times the largest row-norm product seen among the samples.
    """
    E, A = _check_square(E, A)
    n = E.shape[0]
    if n == 0:
        return 0
    E, A = _equilibrate(E, A)
    radius = 1.0 + np.linalg.norm(A, 2)
    pts = _sample_points(n + 1, radius)
    dets, scales = _det_samples(E, A, pts)
    coef = np.polynomial.chebyshev.chebfit(pts / radius, dets, n)
    mono = np.polynomial.chebyshev.cheb2poly(coef)
    floor = tol * max(np.max(scales), np.finfo(float).tiny)
    nonzero = np.nonzero(np.abs(mono) > floor)[0]
    return int(nonzero[-1]) if nonzero.size else 0


def is_impulse_free(E, A, tol=1e-10):
    """True iff ``deg det(sE - A) == rank(E)`` for a regular pencil."""
    E, A = _check_square(E, A)
    if not is_regular(E, A):
        raise DomainError("pencil is not regular")
    return det_degree(E, A, tol) == rank_E(E, tol)


def generalized_eigs(E, A, residual_tol=1e-8):
    """Finite generalized eigenvalues with right/left eigenvectors.

    Infinite eigenvalues (modulus above ``1e10`` after row equilibration) are
    discarded. Raises :class:`NumericError` if QZ fails or an eigenpair does
    not satisfy ``|(lam E - A) v| <= residual_tol (|A| + |lam| |E|)``.
    """
    E0, A0 = _check_square(E, A)
    n = E0.shape[0]
    rE = rank_E(E0)
    if n == 0:
        return PencilSpectrum(np.zeros(0, complex), 0, np.zeros((0, 0)), np.zeros((0, 0)))
    Eb, Ab, row_scale = _equilibrate(E0, A0, return_norms=True)
    try:
        w, vl, vr = spla.eig(Ab, Eb, left=True, right=True, homogeneous_eigvals=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"QZ iteration failed: {exc}") from exc
    alpha, beta = w
    finite = np.abs(beta) > np.abs(alpha) / INFINITE_EIG
    lam = np.full(n, np.inf, dtype=complex)
    lam[finite] = alpha[finite] / beta[finite]
    finite &= np.abs(lam) < INFINITE_EIG
    lam, vl, vr = lam[finite], vl[:, finite], vr[:, finite]
    # left eigenvectors of the row-scaled pencil map back through the scaling
    vl = vl / row_scale[:, None]
    nA, nE = np.linalg.norm(A0, 2), np.linalg.norm(E0, 2)
    for i, l in enumerate(lam):
        v = vr[:, i] / np.linalg.norm(vr[:, i])
        res = np.linalg.norm((l * E0 - A0) @ v)
        if res > residual_tol * max(nA + abs(l) * nE, 1.0):
            raise NumericError(f"eigenpair {i} (lambda={l:.6g}) has residual {res:.3e}")
    order = np.lexsort((lam.imag, lam.real))
    return PencilSpectrum(lam[order], rE, vr[:, order], vl[:, order])


def _clusters(lam, rtol):
    groups, used = [], np.zeros(len(lam), bool)
    for i in range(len(lam)):
        if used[i]:
            continue
        scale = max(1.0, abs(lam[i]))
        members = [j for j in range(i, len(lam))
                   if not used[j] and abs(lam[j] - lam[i]) <= rtol * scale]
        used[members] = True
        groups.append(members)
    return groups


def residues(E, A, spectrum: PencilSpectrum | None = None, *, semisimple=False,
             gap=1e-8, check=True, n_check=10, check_tol=1e-8, seed=0):
    """Partial fraction residues ``P_i`` of ``(sE - A)^-1``.

    For simple eigenvalues ``P_i = x_i y_i^H / (y_i^H E x_i)`` with right and
    left eigenvectors ``x_i``, ``y_i``. Repeated eigenvalues raise
    :class:`DomainError` unless ``semisimple=True``, in which case each cluster
    with a full set of eigenvectors gets the residue ``X (Y^H E X)^-1 Y^H``.

    The constant polynomial part is taken from one resolvent evaluation away
    from the spectrum. With ``check=True`` the whole expansion is verified at
    ``n_check`` random points.
    """
    E, A = _check_square(E, A)
    if spectrum is None:
        spectrum = generalized_eigs(E, A)
    lam, X, Y = spectrum.eigenvalues, spectrum.right, spectrum.left
    n = E.shape[0]
    if len(lam) != spectrum.rank_E:
        raise DomainError(f"pencil is not impulse free: {len(lam)} finite eigenvalues, "
                          f"rank(E) = {spectrum.rank_E}")
    P = [np.zeros((n, n), complex) for _ in lam]
    for members in _clusters(lam, gap):
        if len(members) > 1 and not semisimple:
            raise DomainError(
                f"repeated generalized eigenvalue {lam[members[0]]:.6g} (multiplicity "
                f"{len(members)}); distinct eigenvalues are required")
        Xc, Yc = X[:, members], Y[:, members]
        M = Yc.conj().T @ E @ Xc
        sv = np.linalg.svd(M, compute_uv=False)
        if sv[-1] <= 1e-10 * max(sv[0], 1e-300):
            raise DomainError(f"eigenvalue {lam[members[0]]:.6g} is defective")
        P[members[0]] = Xc @ np.linalg.solve(M, Yc.conj().T)
    if spectrum.rank_E == n:
        const = np.zeros((n, n), complex)
    else:
        s0 = _probe_point(lam)
        const = resolvent(E, A, s0) - sum((Pi / (s0 - l) for Pi, l in zip(P, lam)),
                                          np.zeros((n, n), complex))
    spec = PencilSpectrum(lam, spectrum.rank_E, X, Y, tuple(P), const)
    if check and len(lam):
        err = reconstruction_error(E, A, spec, n_check, seed)
        if err > check_tol:
            raise NumericError(f"residue expansion does not reproduce the resolvent: error {err:.3e}")
    return spec


def _probe_point(lam):
    # a point well separated from every eigenvalue
    scale = 1.0 + (np.max(np.abs(lam)) if len(lam) else 0.0)
    return 2.0 * scale * np.exp(0.7j)


def reconstruction_error(E, A, spectrum: PencilSpectrum, n_points=10, seed=0, points=None):
    """Max relative gap between ``(sE - A)^-1`` and its partial fraction expansion."""
    lam = spectrum.eigenvalues
    if points is None:
        rng = np.random.default_rng(seed)
        scale = 1.0 + (np.max(np.abs(lam)) if len(lam) else 0.0)
        points = scale * (rng.normal(size=n_points) + 1j * rng.normal(size=n_points))
    worst = 0.0
    for s in np.atleast_1d(points):
        direct = resolvent(E, A, s)
        gap = np.linalg.norm(direct - spectrum.expand(s))
        worst = max(worst, gap / max(np.linalg.norm(direct), 1e-300))
    return worst


def resolvent(E, A, s, rcond=RESOLVENT_RCOND):
    """Solve ``(sE - A) X = I``.

    Raises :class:`NumericError` carrying the smallest singular value when
    ``sE - A`` is numerically singular.
    """
    E = np.asarray(E)
    A = np.asarray(A)
    M = s * E - A
    n = M.shape[0]
    if n == 0:
        return np.zeros((0, 0), complex)
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] <= rcond * sv[0]:
        raise NumericError(f"sE - A is singular at s = {complex(s):.6g}: "
                           f"smallest singular value {sv[-1]:.3e}")
    lu = spla.lu_factor(M.astype(complex))
    return spla.lu_solve(lu, np.eye(n, dtype=complex))


def solve_shifted(E, A, s, rhs, rcond=RESOLVENT_RCOND):
    """Solve ``(sE - A) X = rhs`` with the same singularity guard as :func:`resolvent`."""
    M = s * np.asarray(E) - np.asarray(A)
    if M.shape[0] == 0:
        return np.zeros(np.shape(rhs), complex)
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] <= rcond * sv[0]:
        raise NumericError(f"sE - A is singular at s = {complex(s):.6g}: "
                           f"smallest singular value {sv[-1]:.3e}")
    return np.linalg.solve(M.astype(complex), rhs)


def transfer_poles(E, A, B, C, rtol=1e-8, spectrum: PencilSpectrum | None = None):
    """Eigenvalues that actually appear in ``C (sE - A)^-1 B``.

    Modes whose residue contribution ``C P_i B`` is below ``rtol`` times the
    largest one are uncontrollable or unobservable and are left out.
    Repeated semisimple eigenvalues are allowed here.
    """
    E, A = _check_square(E, A)
    spec = residues(E, A, spectrum, semisimple=True) if spectrum is None or spectrum.residues is None \
        else spectrum
    B = np.asarray(B, dtype=float).reshape(E.shape[0], -1)
    C = np.asarray(C, dtype=float).reshape(-1, E.shape[0])
    weights = np.array([np.linalg.norm(C @ P @ B) for P in spec.residues])
    if not weights.size:
        return weights.astype(complex)
    keep = weights > rtol * max(np.max(weights), np.finfo(float).tiny)
    return spec.eigenvalues[keep]
