"""Time-domain simulation of lumped QBTI descriptor models and sampled measurements."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.linalg import lu_factor, lu_solve

from .errors import DomainError, NumericError, ParameterError
from .model import LumpedQBTI
from .psgs import PSGS, PSGSEigen, eigen, u_at

NEWTON_TOL = 1e-10
NEWTON_MAXITER = 25
RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    constraint_residuals: np.ndarray

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def to_csv(self, path=None):
        return write_csv(path, self.times, self.outputs)


@dataclass(frozen=True, eq=False)
class SampledRecord:
    T: float
    y_m: np.ndarray
    sigma: float
    seed: int | None

    @property
    def N_d(self):
        return len(self.y_m) - 1

    @property
    def times(self):
        return self.T * np.arange(len(self.y_m))

    def prefix(self, N_d):
        """Record restricted to the first ``N_d + 1`` samples."""
        if not 0 <= N_d <= self.N_d:
            raise ParameterError(f"prefix length {N_d} outside 0..{self.N_d}")
        return SampledRecord(self.T, self.y_m[:N_d + 1], self.sigma, self.seed)

    def to_csv(self, path=None):
        return write_csv(path, self.times, self.y_m)


def write_csv(path, times, values):
    """CSV with header ``t,y1,...,ym``, 17 significant digits, LF endings.

    Returns the text when ``path`` is None.
    """
    values = np.asarray(values).reshape(len(times), -1)
    buf = io.StringIO()
    header = ",".join(["t"] + [f"y{i + 1}" for i in range(values.shape[1])])
    np.savetxt(buf, np.column_stack([times, values]), fmt="%.17g", delimiter=",",
               header=header, comments="", newline="\n")
    text = buf.getvalue()
    if path is None:
        return text
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return text


def input_on_grid(source, times, m_u):
    """Evaluate an input description on ``times``; returns shape ``(n, m_u)``."""
    if source is None:
        return np.zeros((len(times), m_u))
    if isinstance(source, PSGS):
        source = eigen(source)
    if isinstance(source, PSGSEigen):
        if source.m_xi == 0:
            return np.zeros((len(times), m_u))
        U = u_at(source, times)
    elif callable(source):
        U = np.array([np.atleast_1d(source(t)) for t in times], dtype=float)
    else:
        raise ParameterError(f"unsupported input source {type(source).__name__}")
    U = U.reshape(len(times), -1)
    if U.shape[1] != m_u:
        raise ParameterError(f"input has {U.shape[1]} channels, model expects {m_u}")
    return U


def _grid(t_end, dt):
    if not (dt > 0 and t_end >= 0):
        raise ParameterError("need dt > 0 and t_end >= 0")
    n = int(round(t_end / dt))
    if abs(n * dt - t_end) > 1e-9 * max(1.0, t_end):
        n = int(np.ceil(t_end / dt))
    return dt * np.arange(n + 1)


class _Compressed:
    """Row compression ``U^T E = [E1; 0]`` of the descriptor equations."""

    def __init__(self, E):
        U, S, Vt = np.linalg.svd(E)
        r = int(np.sum(S > RANK_RTOL * S[0])) if S.size and S[0] > 0 else 0
        self.r = r
        self.Ut = U.T
        self.E1 = (U.T @ E)[:r]
        self.Vd = Vt[:r].T
        self.Va = Vt[r:].T


def _consistent(comp, x0, residual, jacobian, what="initial state"):
    """Adjust the algebraic coordinates of ``x0`` so the algebraic rows vanish."""
    x = np.array(x0, dtype=float)
    if comp.r == len(x):
        return x
    Va = comp.Va
    for it in range(NEWTON_MAXITER):
        g = (comp.Ut @ residual(x))[comp.r:]
        J = (comp.Ut @ jacobian(x))[comp.r:] @ Va
        try:
            dw = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError as exc:
            raise DomainError(f"{what}: algebraic equations are singular in the free coordinates") from exc
        x = x + Va @ dw
        if np.max(np.abs(dw), initial=0.0) <= NEWTON_TOL * max(1.0, np.max(np.abs(x))):
            return x
    raise DomainError(f"{what}: could not satisfy the algebraic equations "
                      f"(residual {np.max(np.abs(g)):.3e})")


def simulate_dae(model: LumpedQBTI, source, x0=None, t_end=1.0, dt=None, T=None) -> Trajectory:
    """Implicit trapezoidal integration of the descriptor model.

    Differential rows (after row compression of ``E``) use the trapezoidal
    rule, algebraic rows are imposed at every new step; each step is solved
    by Newton's method. ``source`` is a :class:`PSGS`, its modal form, a
    callable ``u(t)`` or None. The default step is ``T / 20`` when ``T`` is
    given, otherwise ``t_end / 1000``.
    """
    if dt is None:
        dt = T / 20 if T is not None else t_end / 1000
    times = _grid(t_end, dt)
    h = dt
    U = input_on_grid(source, times, model.m_u)
    comp = _Compressed(model.E)
    r = comp.r
    Ut = comp.Ut
    x0 = np.zeros(model.m_x) if x0 is None else np.asarray(x0, dtype=float)
    x = _consistent(comp, x0, lambda z: model.rhs(z, U[0]), lambda z: model.rhs_jacobian(z, U[0]))

    # equations rotated by U^T, with the quadratic terms as tensors
    m = model.m_x
    At, Bt = Ut @ model.A, Ut @ model.B
    Gx = (Ut @ model.Gamma_x).reshape(m, m, m)
    Gu = (Ut @ model.Gamma_u).reshape(m, m, model.m_u)
    Gsym = Gx + Gx.transpose(0, 2, 1)
    Gx2 = Gx.reshape(m, m * m)

    def rot_rhs(z, u):
        return At @ z + Bt @ u + Gx2 @ np.outer(z, z).ravel() + (Gu @ u) @ z

    n = len(times)
    X = np.empty((n, m))
    res = np.empty(n)
    X[0] = x
    f_prev = rot_rhs(x, U[0])
    res[0] = np.max(np.abs(f_prev[r:]), initial=0.0)
    # stacked step equations: Epad x - W f(x) = [const; 0]
    Epad = np.zeros((m, m))
    Epad[:r] = comp.E1 / h
    W = np.where(np.arange(m) < r, 0.5, -1.0)[:, None]
    diff_half = np.where(np.arange(m) < r, 0.5, 0.0)
    x_old = x
    for k in range(1, n):
        u = U[k]
        Ju = At + Gu @ u
        bu = Bt @ u
        # linear extrapolation as the Newton starting point
        xn = 2 * x - x_old if k > 1 else x.copy()
        const = Epad @ x + diff_half * f_prev
        for it in range(NEWTON_MAXITER):
            f = Ju @ xn + bu + Gx2 @ np.outer(xn, xn).ravel()
            try:
                dx = np.linalg.solve(Epad - W * (Ju + Gsym @ xn), const + W[:, 0] * f - Epad @ xn)
            except np.linalg.LinAlgError as exc:
                raise NumericError(f"singular Newton matrix at step {k} (t = {times[k]:.6g})") from exc
            xn += dx
            if np.max(np.abs(dx)) <= NEWTON_TOL * max(1.0, np.max(np.abs(xn))):
                break
        else:
            raise NumericError(f"Newton did not converge at step {k} (t = {times[k]:.6g}), "
                               f"last update {np.max(np.abs(dx)):.3e}")
        x_old, x = x, xn
        f_prev = rot_rhs(x, u)
        X[k] = x
        res[k] = np.max(np.abs(f_prev[r:]), initial=0.0)
    Y = model.output(X, U)
    return Trajectory(times, X, Y, U, res)


def simulate_cascade(model: LumpedQBTI, source, x0=None, K=3, t_end=1.0, dt=None, T=None,
                     return_stages=False):
    """Integrate the chain of linear descriptor systems of the Volterra cascade.

    Stage 1 is driven by ``B u`` and starts at ``x0``; stage ``k`` is driven
    by ``Gx sum_l x_l (x) x_(k-l) + Gu x_(k-1) (x) u`` and starts at rest.
    Every stage uses the trapezoidal scheme of :func:`simulate_dae` with one
    shared factorization. Returns the trajectory of ``sum_k x_k``.
    """
    if K < 1:
        raise ParameterError("cascade order must be at least 1")
    if dt is None:
        dt = T / 20 if T is not None else t_end / 1000
    times = _grid(t_end, dt)
    h = dt
    U = input_on_grid(source, times, model.m_u)
    comp = _Compressed(model.E)
    r, Ut = comp.r, comp.Ut
    A = model.A
    m = model.m_x
    gx, gu = model.Gamma_x, model.Gamma_u
    has_gx, has_gu = np.any(gx), np.any(gu)

    def forcing(stages, k, u):
        # input to stage k (0-based) given all stage states at one instant
        if k == 0:
            return model.B @ u
        out = np.zeros(m)
        if has_gx:
            out += gx @ sum(np.kron(stages[l], stages[k - 1 - l]) for l in range(k))
        if has_gu:
            out += gu @ np.kron(stages[k - 1], u)
        return out

    n = len(times)
    X = np.zeros((K, n, m))
    x0 = np.zeros(m) if x0 is None else np.asarray(x0, dtype=float)
    cur = []
    for k in range(K):
        start = x0 if k == 0 else np.zeros(m)
        frc = forcing(cur, k, U[0])
        cur.append(_consistent(comp, start, lambda z, f=frc: A @ z + f, lambda z: A,
                               f"stage {k + 1} initial state"))
    X[:, 0] = cur
    lhs = np.vstack([comp.E1 / h - 0.5 * (Ut @ A)[:r], (Ut @ A)[r:]])
    try:
        lu = lu_factor(lhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError("singular cascade step matrix") from exc
    E1h = comp.E1 / h
    prev_f = [Ut @ (A @ cur[k] + forcing(cur, k, U[0])) for k in range(K)]
    res = np.zeros(n)
    for i in range(1, n):
        u = U[i]
        new = []
        for k in range(K):
            g = Ut @ forcing(new, k, u)
            rhs = np.concatenate([E1h @ cur[k] + 0.5 * prev_f[k][:r] + 0.5 * g[:r], -g[r:]])
            new.append(lu_solve(lu, rhs))
        for k in range(K):
            prev_f[k] = Ut @ (A @ new[k] + forcing(new, k, u))
        res[i] = max(np.max(np.abs(pf[r:]), initial=0.0) for pf in prev_f)
        cur = new
        X[:, i] = cur
    total = X.sum(axis=0)
    traj = Trajectory(times, total, model.output(total, U), U, res)
    if return_stages:
        return traj, X
    return traj


def replica_rng(master_seed, k):
    """Generator for replica ``k``: seeded by the pair ``(master_seed, k)``."""
    return np.random.default_rng([int(master_seed), int(k)])


def sample_outputs(source, T, N_d, sigma=0.0, seed=None, rng=None) -> SampledRecord:
    """Samples ``y(kT) + n_k`` for ``k = 0..N_d`` with i.i.d. Gaussian noise.

    ``source`` is a :class:`Trajectory` (cubic Hermite interpolation on its
    grid) or a callable ``y(t)``. ``sigma`` is a scalar or one value per
    channel.
    """
    if not T > 0:
        raise ParameterError("sampling period must be positive")
    if N_d < 0:
        raise ParameterError("N_d must be nonnegative")
    t = T * np.arange(N_d + 1)
    if isinstance(source, Trajectory):
        if source.dt > T * (1 + 1e-12):
            raise ParameterError(f"integration step {source.dt:g} is coarser than the sampling period {T:g}")
        if t[-1] > source.times[-1] * (1 + 1e-12) + 1e-12:
            raise ParameterError(f"record needs t up to {t[-1]:g} but the trajectory ends at "
                                 f"{source.times[-1]:g}")
        t = np.minimum(t, source.times[-1])
        Y = source.outputs
        dY = np.gradient(Y, source.times, axis=0, edge_order=2)
        y = CubicHermiteSpline(source.times, Y, dY, axis=0)(t)
        # exact values where the sample hits a grid node
        idx = np.rint(t / source.dt).astype(int)
        on_grid = (idx < len(source.times)) & np.isclose(source.times[np.minimum(idx, len(source.times) - 1)], t,
                                                         rtol=0, atol=1e-9 * source.dt)
        y[on_grid] = Y[idx[on_grid]]
    elif callable(source):
        y = np.array([np.atleast_1d(source(tk)) for tk in t], dtype=float)
    else:
        raise ParameterError(f"unsupported output source {type(source).__name__}")
    y = y.reshape(len(t), -1)
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (y.shape[1],))
    if np.any(sig < 0):
        raise ParameterError("noise level must be nonnegative")
    if rng is None:
        rng = np.random.default_rng(seed)
    noise = rng.standard_normal(y.shape) * sig
    return SampledRecord(float(T), y + noise, float(np.max(sig)) if sig.size else 0.0, seed)
