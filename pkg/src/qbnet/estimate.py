"""Nonparametric tangential estimates from sampled data and parameter fitting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations_with_replacement, permutations

import numpy as np

from .errors import DomainError, NumericError, ParameterError
from .model import NetworkBlocks, SCMBasis, as_theta, lump, network_blocks, scm
from .psgs import DEFAULT_MAX_ORDER, PSGSEigen
from .simulate import SampledRecord
from . import volterra

DEFAULT_MAX_WRAP = 8
ALIAS_TOL = 1e-8
LFT_RCOND = 1e-12
PENALTY = 1e6


# -- geometric sums -----------------------------------------------------------

def _expm1_complex(a, b):
    """``exp(a + i b) - 1`` without cancellation for small arguments."""
    return np.expm1(a) * np.cos(b) - 2.0 * np.sin(b / 2) ** 2 + 1j * np.exp(a) * np.sin(b)


def lemma4_sum(n, alpha, beta):
    """Closed form of ``sum_{k=0}^{n} exp(k (alpha + i beta))``.

    Evaluated as ``expm1((n + 1) z) / expm1(z)`` with ``z = alpha + i beta``
    and a cancellation-free complex ``expm1``; ``beta`` is first reduced
    to ``[-pi, pi]``. At the removable singularity ``z = 0`` (or a subnormal
    ``expm1(z)``) the limit ``n + 1`` is returned. Accepts arrays.
    """
    n, a, b = np.broadcast_arrays(np.asarray(n), np.asarray(alpha, dtype=float),
                                  np.asarray(beta, dtype=float))
    # nearest-multiple reduction keeps angles close to 2 pi l small and exact
    b = b - 2 * np.pi * np.rint(b / (2 * np.pi))
    den = _expm1_complex(a, b)
    num = _expm1_complex((n + 1) * a, (n + 1) * b)
    # below the smallest normal number the limit is exact to working precision
    singular = np.abs(den) < np.finfo(float).tiny
    with np.errstate(divide="ignore", invalid="ignore"):
        out = num / np.where(singular, 1.0, den)
    out = np.where(singular, (n + 1).astype(float) + 0j, out)
    return out[()] if out.ndim == 0 else out


def leakage_gain(n, freq_gap, T):
    """``|S(n, 0, gap T)| / (n + 1)``: leakage of a tone ``gap`` rad/s off the target bin."""
    return np.abs(lemma4_sum(n, 0.0, np.asarray(freq_gap) * T)) / (np.asarray(n) + 1)


# -- nonparametric estimates --------------------------------------------------

@dataclass(frozen=True, eq=False)
class TangentialEstimate:
    tuple: tuple
    frequency: complex
    phi_hat: np.ndarray
    n_used: int
    T: float

    def as_dict(self):
        return {"tuple": list(self.tuple),
                "frequency": [self.frequency.real, self.frequency.imag],
                "phi_hat": [[float(v.real), float(v.imag)] for v in self.phi_hat],
                "n_used": int(self.n_used), "T": float(self.T)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["tuple"]), complex(*d["frequency"]),
                   np.array([complex(r, i) for r, i in d["phi_hat"]]), int(d["n_used"]), float(d["T"]))


def estimates_to_json(estimates, path=None):
    text = json.dumps([e.as_dict() for e in estimates], indent=2)
    if path is not None:
        with open(path, "w", newline="\n") as fh:
            fh.write(text + "\n")
    return text


def estimates_from_json(text):
    return [TangentialEstimate.from_dict(d) for d in json.loads(text)]


@dataclass(frozen=True)
class AliasEntry:
    tuple: tuple
    sign: int
    wrap: int
    magnitude: float | None


def _wrap_count(x):
    return int(np.rint(x / (2 * np.pi)))


def alias_sets(tup, eig: PSGSEigen, T, max_order=DEFAULT_MAX_ORDER, max_wrap=DEFAULT_MAX_WRAP,
               model=None, tol=ALIAS_TOL):
    """Mode combinations whose sampled frequency meets ``+-`` that of ``tup``.

    Every multiset of generator indices up to ``max_order`` whose frequency
    ``w`` satisfies ``w T = sign * w_tup T + 2 pi wrap`` with ``|wrap| <=
    max_wrap`` is listed. With ``model`` given, each entry carries the norm of
    the summed steady-state coefficient of that multiset.
    """
    tup = tuple(sorted(tup))
    w0 = eig.tuple_lambda(tup).imag * T
    out = []
    cache = {}
    for k in range(1, max_order + 1):
        for combo in combinations_with_replacement(range(1, eig.m_xi + 1), k):
            w = eig.tuple_lambda(combo).imag * T
            for sign in (1, -1):
                p = _wrap_count(w - sign * w0)
                if abs(p) > max_wrap or abs(w - sign * w0 - 2 * np.pi * p) > tol * max(1.0, abs(w)):
                    continue
                mag = None
                if model is not None:
                    mag = _group_magnitude(model, eig, combo, cache)
                out.append(AliasEntry(combo, sign, p, mag))
                break
    return out


def _group_magnitude(model, eig, combo, cache):
    try:
        total = sum(volterra.phi_u(model, eig, t, cache) for t in set(permutations(combo)))
    except NumericError:
        total = volterra.symmetric_group_phi(model, eig, combo)
    return float(np.linalg.norm(total))


def _check_estimable(tup, eig, T, max_order, max_wrap):
    bad = [i for i in tup if not 1 <= i <= eig.m_xi_plus]
    if bad:
        raise ParameterError(f"tuple indices {bad} must lie in 1..{eig.m_xi_plus} "
                             "(nonnegative-frequency generator modes)")
    for entry in alias_sets(tup, eig, T, max_order, max_wrap):
        if entry.wrap != 0:
            raise DomainError(
                f"tuple {tuple(tup)} aliases with combination {entry.tuple} at T = {T:g} "
                f"({'+' if entry.sign > 0 else '-'} frequency, wrapped {entry.wrap} times)")


def corr_estimate(record: SampledRecord, eig: PSGSEigen, tup, max_order=DEFAULT_MAX_ORDER,
                  max_wrap=DEFAULT_MAX_WRAP, check=True) -> TangentialEstimate:
    """Correlation estimate ``mean_k exp(-i w k T) y_m(kT)`` at ``w`` of ``tup``.

    The conjugate phase isolates the ``exp(+i w t)`` component, i.e. the
    coefficient of the tuple itself rather than of its conjugate.
    """
    tup = tuple(int(i) for i in tup)
    if check:
        _check_estimable(tup, eig, record.T, max_order, max_wrap)
    lam = eig.tuple_lambda(tup)
    y = np.asarray(record.y_m)
    n = len(y)
    ph = np.exp(-1j * lam.imag * record.T * np.arange(n))
    return TangentialEstimate(tup, lam, ph @ y / n, n, record.T)


def corr_estimates_prefix(record: SampledRecord, eig: PSGSEigen, tup, N_list,
                          max_order=DEFAULT_MAX_ORDER, max_wrap=DEFAULT_MAX_WRAP, check=True):
    """:func:`corr_estimate` on each prefix ``k = 0..N_d`` for ``N_d`` in ``N_list``."""
    tup = tuple(int(i) for i in tup)
    if check:
        _check_estimable(tup, eig, record.T, max_order, max_wrap)
    lam = eig.tuple_lambda(tup)
    y = np.asarray(record.y_m)
    ph = np.exp(-1j * lam.imag * record.T * np.arange(len(y)))
    csum = np.cumsum(ph[:, None] * y, axis=0)
    out = []
    for N in N_list:
        if not 0 <= N <= record.N_d:
            raise ParameterError(f"N_d = {N} outside the record length {record.N_d}")
        out.append(TangentialEstimate(tup, lam, csum[N] / (N + 1), N + 1, record.T))
    return out


# -- LFT evaluation -----------------------------------------------------------

def _blocks(network, input_map=None):
    if isinstance(network, NetworkBlocks):
        return network
    return network_blocks(network, input_map)


@dataclass(frozen=True, eq=False)
class LFTFactors:
    """Parameter-independent transfer blocks of an interconnection at one ``s``."""

    s: complex
    G_xx: np.ndarray
    G_zv: np.ndarray
    G_zu: np.ndarray
    G_yv: np.ndarray
    G_yu: np.ndarray
    G_zx: np.ndarray
    G_xv: np.ndarray
    G_xu: np.ndarray


def lft_factors(network, s, input_map=None) -> LFTFactors:
    b = _blocks(network, input_map)
    M = s * b.E - b.A_xx
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[-1] <= LFT_RCOND * sv[0]:
        raise NumericError(f"subsystem pencil is singular at s = {complex(s):.6g} "
                           f"(rcond {sv[-1] / sv[0]:.3e})")
    G_xx = np.linalg.solve(M.astype(complex), np.eye(M.shape[0]))
    G_xv = G_xx @ b.B_xv
    G_xu = G_xx @ b.B_xu
    return LFTFactors(
        s=complex(s), G_xx=G_xx,
        G_zv=b.C_zx @ G_xv + b.D_zv, G_zu=b.C_zx @ G_xu + b.D_zu,
        G_yv=b.C_yx @ G_xv + b.D_yv, G_yu=b.C_yx @ G_xu + b.D_yu,
        G_zx=b.C_zx @ G_xx, G_xv=G_xv, G_xu=G_xu)


def _lft_core(F: LFTFactors, Theta):
    core = np.eye(Theta.shape[0]) - Theta @ F.G_zv
    if core.size:
        sv = np.linalg.svd(core, compute_uv=False)
        if sv[-1] <= LFT_RCOND * sv[0]:
            raise NumericError(f"LFT core I - Theta G_zv is singular at s = {F.s:.6g} "
                               f"(rcond {sv[-1] / sv[0]:.3e})")
    return np.linalg.solve(core, Theta.astype(complex))


def lft_h1_from(F: LFTFactors, Theta):
    return F.G_yu + F.G_yv @ _lft_core(F, Theta) @ F.G_zu


def lft_h1(network, basis: SCMBasis, theta, s, input_map=None):
    """``H(s, theta) = G_yu + G_yv [I - Theta G_zv]^-1 Theta G_zu``."""
    Theta = scm(basis, as_theta(theta, basis))
    return lft_h1_from(lft_factors(network, s, input_map), Theta)


def lft_resolvent(network, basis: SCMBasis, theta, s, input_map=None):
    """``[sE - A(theta)]^-1 = G_xx + G_xv [I - Theta G_zv]^-1 Theta G_zx``."""
    F = lft_factors(network, s, input_map)
    Theta = scm(basis, as_theta(theta, basis))
    return F.G_xx + F.G_xv @ _lft_core(F, Theta) @ F.G_zx


def lft_g1(network, basis: SCMBasis, theta, s, input_map=None):
    """``[sE - A(theta)]^-1 B(theta) = G_xu + G_xv [I - Theta G_zv]^-1 Theta G_zu``."""
    F = lft_factors(network, s, input_map)
    Theta = scm(basis, as_theta(theta, basis))
    return F.G_xu + F.G_xv @ _lft_core(F, Theta) @ F.G_zu


# -- parametric fit -----------------------------------------------------------

KINDS = ("kernel", "summed")


@dataclass(eq=False)
class FitProblem:
    """Least squares match of estimates to model tangential conditions.

    ``kinds[l]`` is ``"kernel"`` (model value ``H(lam_i1, ..., lam_ik)`` along
    ``psi_u(i1) (x) ... (x) psi_u(ik)``) or ``"summed"`` (first-order
    ``H(lam_i1 + ... + lam_ik)`` along the elementwise product of the
    ``psi_u``). ``weights`` holds one value per estimate or one row of
    per-channel values per estimate.
    """

    estimates: list
    network: object
    basis: SCMBasis
    eig: PSGSEigen
    theta0: np.ndarray
    kinds: list = None
    weights: np.ndarray = None
    bounds: tuple = None
    input_map: np.ndarray = None
    directions: list = field(init=False, default=None)

    def __post_init__(self):
        if not self.estimates:
            raise ParameterError("at least one estimate is required")
        self.network = _blocks(self.network, self.input_map)
        n = len(self.estimates)
        self.kinds = ["kernel"] * n if self.kinds is None else list(self.kinds)
        if len(self.kinds) != n or any(k not in KINDS for k in self.kinds):
            raise ParameterError(f"kinds must be {n} entries from {KINDS}")
        m_y = len(self.estimates[0].phi_hat)
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float)
        w = np.broadcast_to(w.reshape(n, -1), (n, m_y)).copy()
        if np.any(w < 0) or not np.any(w > 0):
            raise ParameterError("weights must be nonnegative with at least one positive")
        self.weights = w
        self.theta0 = as_theta(self.theta0, self.basis)
        if self.bounds is not None:
            lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), self.theta0.shape) for b in self.bounds)
            self.bounds = (lo, hi)
        self.directions = []
        self._factors = []
        for est, kind in zip(self.estimates, self.kinds):
            psis = [self.eig.psi_u[i - 1] for i in est.tuple]
            if kind == "summed" or len(est.tuple) == 1:
                d = np.prod(psis, axis=0)
                self._factors.append(lft_factors(self.network, est.frequency))
            else:
                d = volterra.direction(self.eig, est.tuple)
                self._factors.append(None)
            self.directions.append(d)

    def model_values(self, theta):
        theta = as_theta(theta, self.basis)
        Theta = scm(self.basis, theta)
        out, lumped, cache = [], None, {}
        for est, F, d in zip(self.estimates, self._factors, self.directions):
            if F is not None:
                out.append(lft_h1_from(F, Theta) @ d)
            else:
                if lumped is None:
                    lumped = lump(self.network, self.basis, theta)
                lam = [self.eig.lam[i - 1] for i in est.tuple]
                out.append(volterra.hk(lumped, lam, cache) @ d)
        return out


def residuals(problem: FitProblem, theta):
    """Stacked ``sqrt(w) (Re, Im)(phi_hat - model)`` over all estimates."""
    sw = np.sqrt(problem.weights)
    keep = problem.weights > 0
    try:
        vals = problem.model_values(theta)
    except (NumericError, DomainError):
        big = PENALTY * max(np.linalg.norm(e.phi_hat) for e in problem.estimates)
        return np.full(2 * int(np.sum(keep)), max(big, PENALTY))
    parts = []
    for l, (est, v) in enumerate(zip(problem.estimates, vals)):
        diff = sw[l] * (est.phi_hat - v)
        k = keep[l]
        parts.append(np.concatenate([diff.real[k], diff.imag[k]]))
    return np.concatenate(parts)


@dataclass(frozen=True, eq=False)
class FitResult:
    theta_hat: np.ndarray
    residual_norm: float
    jacobian_rcond: float
    iterations: int
    converged: bool
    gradient_norm: float = np.nan


def _project(theta, bounds):
    if bounds is None:
        return theta
    return np.clip(theta, bounds[0], bounds[1])


def _fd_jacobian(fun, theta, r0, bounds):
    J = np.empty((len(r0), len(theta)))
    for j in range(len(theta)):
        h = 1e-7 * (1.0 + abs(theta[j]))
        tp = theta.copy()
        tp[j] += h
        if bounds is not None and tp[j] > bounds[1][j]:
            tp[j] = theta[j] - h
        tp = _project(tp, bounds)
        J[:, j] = (fun(tp) - r0) / (tp[j] - theta[j])
    return J


def _rcond(J):
    sv = np.linalg.svd(J, compute_uv=False)
    return float(sv[-1] / sv[0]) if sv.size and sv[0] > 0 else 0.0


def fit_theta(problem: FitProblem, max_iter=200, gtol=1e-10, xtol=1e-12, max_rel_step=0.5,
              step_floor=1e-3) -> FitResult:
    """Levenberg-Marquardt fit with forward-difference Jacobians.

    Stops when the gradient infinity norm drops to ``gtol`` or an accepted
    step is below ``xtol``; box bounds are enforced by projection. The
    damping is also raised until no parameter moves by more than
    ``max_rel_step * max(|theta_j|, step_floor)`` in one step, which keeps
    the iteration from jumping across the zero of a parameter into a
    spurious basin.
    """
    fun = lambda th: residuals(problem, th)
    theta = _project(problem.theta0.astype(float).copy(), problem.bounds)
    r = fun(theta)
    cost = r @ r
    mu = 1e-3
    converged = False
    J = _fd_jacobian(fun, theta, r, problem.bounds)
    g = J.T @ r
    steps = 0
    while steps < max_iter:
        if np.max(np.abs(g)) <= gtol:
            converged = True
            break
        JtJ = J.T @ J
        scale = np.maximum(np.diag(JtJ), 1e-300)
        accepted = False
        cap = max_rel_step * np.maximum(np.abs(theta), step_floor)
        while mu < 1e20:
            step = np.linalg.solve(JtJ + mu * np.diag(scale), -g)
            if np.any(np.abs(step) > cap):
                mu *= 4.0
                continue
            trial = _project(theta + step, problem.bounds)
            r_new = fun(trial)
            c_new = r_new @ r_new
            if c_new < cost:
                accepted = True
                break
            mu *= 4.0
        if not accepted:
            # no descent direction left at working precision
            converged = True
            break
        steps += 1
        dx = trial - theta
        theta, r, cost = trial, r_new, c_new
        mu = max(mu / 3.0, 1e-12)
        J = _fd_jacobian(fun, theta, r, problem.bounds)
        g = J.T @ r
        if np.max(np.abs(dx)) <= xtol * max(1.0, np.max(np.abs(theta))):
            converged = True
            break
    return FitResult(theta, float(np.sqrt(cost)), _rcond(J), steps, bool(converged),
                     float(np.max(np.abs(g))))
