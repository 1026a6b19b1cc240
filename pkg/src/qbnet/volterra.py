"""Generalized transfer functions and steady-state synthesis for QBTI models."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations, product
from math import factorial

import numpy as np

from .errors import NumericError, ParameterError
from .model import LumpedQBTI
from .pencil import RESOLVENT_RCOND, solve_shifted
from .psgs import PSGSEigen

DEFAULT_ORDER = 3


def _solve(model, s, rhs, what):
    try:
        return solve_shifted(model.E, model.A, s, rhs, RESOLVENT_RCOND)
    except NumericError as exc:
        raise NumericError(f"{what}: partial sum s = {complex(s):.6g} hits the pencil spectrum "
                           f"({exc})") from exc


def g1(model: LumpedQBTI, s):
    """``(sE - A)^-1 B``."""
    return _solve(model, s, model.B.astype(complex), "first-order kernel")


def gk(model: LumpedQBTI, s_list, cache=None):
    """Generalized kernel ``G(s_1, ..., s_k)`` of shape ``m_x x m_u^k``.

    Built by the recursion over splits of the argument list; results are
    memoized on contiguous argument ranges in ``cache`` (a dict, optional).
    """
    s = tuple(complex(v) for v in s_list)
    if not s:
        raise ParameterError("kernel needs at least one frequency argument")
    memo = {} if cache is None else cache
    return _gk(model, s, memo)


def _gk(model, s, memo):
    hit = memo.get(s)
    if hit is not None:
        return hit
    k = len(s)
    if k == 1:
        out = g1(model, s[0])
    elif model.is_linear:
        out = np.zeros((model.m_x, model.m_u ** k), complex)
    else:
        acc = np.zeros((model.m_x, model.m_u ** k), complex)
        if np.any(model.Gamma_x):
            quad = sum(np.kron(_gk(model, s[:l], memo), _gk(model, s[l:], memo))
                       for l in range(1, k))
            acc += model.Gamma_x @ quad
        if np.any(model.Gamma_u):
            acc += model.Gamma_u @ np.kron(_gk(model, s[:-1], memo), np.eye(model.m_u))
        out = _solve(model, sum(s), acc, f"order-{k} kernel")
    memo[s] = out
    return out


def hk(model: LumpedQBTI, s_list, cache=None):
    """Output kernel: ``C G + D`` at order one, ``C G`` above."""
    s = tuple(np.atleast_1d(s_list))
    G = gk(model, s, cache)
    if len(s) == 1:
        return model.C @ G + model.D
    return model.C @ G


def _kron_all(vectors):
    out = np.ones(1, complex)
    for v in vectors:
        out = np.kron(out, v)
    return out


def psi_s(model: LumpedQBTI, eig: PSGSEigen, tup, cache=None):
    """Steady-state state coefficient of the mode combination ``tup``.

    ``tup`` holds 1-based generator eigenvalue indices.
    """
    tup = _check_tuple(eig, tup)
    memo = {} if cache is None else cache
    return _psi(model, eig, tup, memo)


def _psi(model, eig, tup, memo):
    hit = memo.get(tup)
    if hit is not None:
        return hit
    k = len(tup)
    lam = eig.tuple_lambda(tup)
    if k == 1:
        rhs = model.B @ eig.psi_u[tup[0] - 1]
    elif model.is_linear:
        memo[tup] = out = np.zeros(model.m_x, complex)
        return out
    else:
        rhs = np.zeros(model.m_x, complex)
        if np.any(model.Gamma_x):
            rhs += model.Gamma_x @ sum(np.kron(_psi(model, eig, tup[:l], memo),
                                               _psi(model, eig, tup[l:], memo))
                                       for l in range(1, k))
        if np.any(model.Gamma_u):
            rhs += model.Gamma_u @ np.kron(_psi(model, eig, tup[:-1], memo),
                                           eig.psi_u[tup[-1] - 1])
    out = _solve(model, lam, rhs, f"tuple {tup}")
    memo[tup] = out
    return out


def phi_u(model: LumpedQBTI, eig: PSGSEigen, tup, cache=None):
    """Tangential condition ``H(lam tuple) (psi_u (x) ... (x) psi_u)``."""
    tup = _check_tuple(eig, tup)
    out = model.C @ psi_s(model, eig, tup, cache)
    if len(tup) == 1:
        out = out + model.D @ eig.psi_u[tup[0] - 1]
    return out


def direction(eig: PSGSEigen, tup):
    """``psi_u(i_1) (x) ... (x) psi_u(i_k)``."""
    tup = _check_tuple(eig, tup)
    return _kron_all(eig.psi_u[i - 1] for i in tup)


def _check_tuple(eig, tup):
    tup = tuple(int(i) for i in np.atleast_1d(tup))
    if not tup:
        raise ParameterError("empty tuple")
    bad = [i for i in tup if not 1 <= i <= eig.m_xi]
    if bad:
        raise ParameterError(f"tuple indices {bad} outside 1..{eig.m_xi}")
    return tup


# contour perturbation directions; equal argument keeps every subset sum nonzero
_PERTURB = np.exp(0.37j) * (1.0 + 0.618 * np.arange(16))


def symmetric_group_phi(model: LumpedQBTI, eig: PSGSEigen, multiset, radius=None,
                        n_points=8):
    """Sum of ``phi_u`` over all distinct orderings of ``multiset``.

    Evaluated as the mean over a small contour of perturbed, distinct
    arguments, so that singularities which cancel across orderings are
    removed. Raises :class:`NumericError` when the perturbed sum does not
    converge as the contour shrinks, i.e. a genuine resonance.
    """
    ms = tuple(sorted(_check_tuple(eig, multiset)))
    k = len(ms)
    if k > len(_PERTURB):
        raise ParameterError(f"order {k} exceeds the supported contour order {len(_PERTURB)}")
    lam = np.array([eig.lam[i - 1] for i in ms])
    psi = [eig.psi_u[i - 1] for i in ms]
    mult = 1
    for i in set(ms):
        mult *= factorial(ms.count(i))
    if radius is None:
        radius = 1e-3 * max(1.0, float(np.max(np.abs(lam))))

    def value(eps):
        total = np.zeros(model.m_y, complex)
        s = lam + eps * _PERTURB[:k]
        for perm in permutations(range(k)):
            G = gk(model, [s[p] for p in perm])
            total += model.C @ (G @ _kron_all(psi[p] for p in perm))
        return total / mult

    def ring(r):
        vals = np.array([value(r * np.exp(2j * np.pi * (m + 0.5) / n_points))
                         for m in range(n_points)])
        mean = vals.mean(axis=0)
        return mean, np.max(np.linalg.norm(vals - mean, axis=1))

    mean, spread = ring(radius)
    _, spread_half = ring(radius / 2)
    floor = 1e-9 * max(np.linalg.norm(mean), 1e-300)
    if spread > floor and spread_half > 0.75 * spread:
        raise NumericError(f"mode combination {ms} is a genuine resonance with the plant "
                           f"(contour spread {spread:.3e} -> {spread_half:.3e})")
    if k == 1:
        mean = mean + model.D @ psi[0]
    return mean


@dataclass
class SteadyStateExpansion:
    """Steady-state output ``sum exp(lam t) phi`` over mode combinations.

    Keys are ordered index tuples. When singular orderings were resolved by
    grouping, the key is the sorted tuple and the value is the total over all
    orderings of that multiset (listed in ``grouped``).
    """

    terms: dict
    order: int
    grouped: set = field(default_factory=set)

    def lambdas(self):
        return np.array([v[0] for v in self.terms.values()])

    def phis(self):
        return np.array([v[1] for v in self.terms.values()])

    def order_norms(self):
        """Norm of the summed coefficient of each order ``1..K``."""
        out = np.zeros(self.order)
        for tup, (_, phi) in self.terms.items():
            out[len(tup) - 1] += np.linalg.norm(phi)
        return out

    def evaluate(self, t, check=True):
        t_arr = np.asarray(t, dtype=float)
        if not self.terms:
            m_y = 0
            return np.zeros(t_arr.shape + (m_y,))
        lam, phi = self.lambdas(), self.phis()
        val = np.exp(np.multiply.outer(t_arr, lam)) @ phi
        if check:
            scale = np.abs(np.exp(np.multiply.outer(t_arr, lam))) @ np.abs(phi)
            worst = np.max(np.abs(val.imag) - 1e-8 * np.maximum(scale, 1e-300), initial=-1.0)
            if worst > 0:
                raise NumericError("steady-state sum is not real; conjugate closure is broken "
                                   f"(imaginary part {np.max(np.abs(val.imag)):.3e})")
        return val.real


def steady_state(model: LumpedQBTI, eig: PSGSEigen, K=DEFAULT_ORDER,
                 resolve_removable=False) -> SteadyStateExpansion:
    """Steady-state expansion up to order ``K`` over all ordered tuples.

    With ``resolve_removable=True``, orderings whose recursion meets the plant
    spectrum are combined per multiset and evaluated by
    :func:`symmetric_group_phi`; otherwise such a collision raises.
    """
    if K < 1:
        raise ParameterError("truncation order must be at least 1")
    terms, grouped = {}, set()
    cache = {}
    m = eig.m_xi
    for k in range(1, K + 1):
        failed = {}
        for tup in product(range(1, m + 1), repeat=k):
            key = tuple(sorted(tup))
            if key in failed:
                failed[key].append(tup)
                continue
            try:
                terms[tup] = (eig.tuple_lambda(tup), phi_u(model, eig, tup, cache))
            except NumericError:
                if not resolve_removable:
                    raise
                failed[key] = [tup]
        for key in failed:
            # drop any orderings of this multiset evaluated before the failure
            for tup in set(permutations(key)):
                terms.pop(tup, None)
            terms[key] = (eig.tuple_lambda(key), symmetric_group_phi(model, eig, key))
            grouped.add(key)
    return SteadyStateExpansion(terms, K, grouped)


def y_steady(model: LumpedQBTI, eig: PSGSEigen, K, t, resolve_removable=False,
             expansion: SteadyStateExpansion | None = None):
    """Truncated steady-state output at time(s) ``t``."""
    if expansion is None:
        expansion = steady_state(model, eig, K, resolve_removable)
    if eig.m_xi == 0:
        return np.zeros(np.shape(t) + (model.m_y,))
    return expansion.evaluate(t)


def decay_bound(model: LumpedQBTI, eig: PSGSEigen, K=DEFAULT_ORDER):
    """Contraction factor of the steady-state recursion over orders ``2..K``.

    Maximum over the combinations used of
    ``sigma_max([(sum s)E - A]^-1) (|Gx| sum |psi_s| + |Gu| max |psi_u|)``;
    ``inf`` when a partial sum meets the spectrum.
    """
    gx, gu = np.linalg.norm(model.Gamma_x, 2), np.linalg.norm(model.Gamma_u, 2)
    pu = max((np.linalg.norm(v) for v in eig.psi_u), default=0.0)
    cache, worst = {}, 0.0
    for k in range(2, K + 1):
        for tup in product(range(1, eig.m_xi + 1), repeat=k):
            M = eig.tuple_lambda(tup) * model.E - model.A
            sv = np.linalg.svd(M, compute_uv=False)
            if sv[-1] <= RESOLVENT_RCOND * sv[0]:
                return np.inf
            try:
                ps = sum(np.linalg.norm(psi_s(model, eig, tup[:l], cache))
                         for l in range(1, k))
            except NumericError:
                return np.inf
            worst = max(worst, (gx * ps + gu * pu) / sv[-1])
    return worst
