"""Quadratic-bilinear subsystems, parameterized interconnections and lumping.

Kronecker convention used throughout the package: for vectors ``x`` and ``y``
the entry ``x[j] * y[k]`` of ``x (x) y`` sits at index ``j * len(y) + k``,
which is what :func:`numpy.kron` produces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as spla

from .errors import DomainError, ParameterError

WELL_POSED_RCOND = 1e-12


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _matrix(a, rows, cols, name):
    if a is None:
        return _frozen(np.zeros((rows, cols)))
    arr = np.atleast_2d(np.asarray(a, dtype=float))
    if arr.size == 0:
        arr = arr.reshape(rows, cols)
    if arr.shape != (rows, cols):
        raise ParameterError(f"{name} has shape {arr.shape}, expected {(rows, cols)}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} has non-finite entries")
    return _frozen(arr)


def normalize_gamma_xx(gamma, m_x):
    """Fold duplicate columns of a quadratic coefficient matrix.

    For every pair ``j < k`` the column multiplying ``x[k] * x[j]`` is added to
    the column multiplying ``x[j] * x[k]`` and then zeroed, so only the leftmost
    column of each duplicate group is nonzero. The quadratic map
    ``x -> gamma @ kron(x, x)`` is unchanged.
    """
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    if gamma.shape[1] != m_x * m_x:
        raise ParameterError(f"expected {m_x * m_x} columns, got {gamma.shape[1]}")
    g = gamma.reshape(gamma.shape[0], m_x, m_x).copy()
    upper = np.triu_indices(m_x, 1)
    g[:, upper[0], upper[1]] += g[:, upper[1], upper[0]]
    g[:, upper[1], upper[0]] = 0.0
    return g.reshape(gamma.shape[0], m_x * m_x)


@dataclass(frozen=True, eq=False)
class SubsystemQBTI:
    """One descriptor quadratic-bilinear subsystem.

    Dynamics::

        E x' = A_xx x + B_xv v + B_xu u + G_xx (x(x)x) + G_xv (x(x)v) + G_xu (x(x)u)
        z    = C_zx x + D_zv v + D_zu u
        y    = C_yx x + D_yv v + D_yu u

    ``v``/``z`` are the internal input/output (interconnection) channels and
    ``u``/``y`` the external ones. ``Gamma_xx`` is stored in folded form
    (see :func:`normalize_gamma_xx`).
    """

    E: np.ndarray
    A_xx: np.ndarray
    B_xv: np.ndarray
    B_xu: np.ndarray
    C_zx: np.ndarray
    C_yx: np.ndarray
    D_zv: np.ndarray = None
    D_zu: np.ndarray = None
    D_yv: np.ndarray = None
    D_yu: np.ndarray = None
    Gamma_xx: np.ndarray = None
    Gamma_xv: np.ndarray = None
    Gamma_xu: np.ndarray = None
    index: int = 0
    name: str = ""

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.E, dtype=float))
        m_x = E.shape[0]
        if E.shape != (m_x, m_x):
            raise ParameterError(f"E must be square, got {E.shape}")
        m_v = np.asarray(self.B_xv).reshape(m_x, -1).shape[1] if m_x else np.asarray(self.B_xv).size
        m_u = np.asarray(self.B_xu).reshape(m_x, -1).shape[1] if m_x else np.asarray(self.B_xu).size
        m_z = np.asarray(self.C_zx).reshape(-1, m_x).shape[0] if m_x else np.asarray(self.C_zx).size
        m_y = np.asarray(self.C_yx).reshape(-1, m_x).shape[0] if m_x else np.asarray(self.C_yx).size
        set_ = object.__setattr__
        set_(self, "E", _matrix(E, m_x, m_x, "E"))
        set_(self, "A_xx", _matrix(self.A_xx, m_x, m_x, "A_xx"))
        set_(self, "B_xv", _matrix(self.B_xv, m_x, m_v, "B_xv"))
        set_(self, "B_xu", _matrix(self.B_xu, m_x, m_u, "B_xu"))
        set_(self, "C_zx", _matrix(self.C_zx, m_z, m_x, "C_zx"))
        set_(self, "C_yx", _matrix(self.C_yx, m_y, m_x, "C_yx"))
        set_(self, "D_zv", _matrix(self.D_zv, m_z, m_v, "D_zv"))
        set_(self, "D_zu", _matrix(self.D_zu, m_z, m_u, "D_zu"))
        set_(self, "D_yv", _matrix(self.D_yv, m_y, m_v, "D_yv"))
        set_(self, "D_yu", _matrix(self.D_yu, m_y, m_u, "D_yu"))
        gxx = _matrix(self.Gamma_xx, m_x, m_x * m_x, "Gamma_xx")
        set_(self, "Gamma_xx", _frozen(normalize_gamma_xx(gxx, m_x)))
        set_(self, "Gamma_xv", _matrix(self.Gamma_xv, m_x, m_x * m_v, "Gamma_xv"))
        set_(self, "Gamma_xu", _matrix(self.Gamma_xu, m_x, m_x * m_u, "Gamma_xu"))

    @property
    def m_x(self):
        return self.E.shape[0]

    @property
    def m_u(self):
        return self.B_xu.shape[1]

    @property
    def m_v(self):
        return self.B_xv.shape[1]

    @property
    def m_z(self):
        return self.C_zx.shape[0]

    @property
    def m_y(self):
        return self.C_yx.shape[0]

    def rhs(self, x, v, u):
        """Right-hand side of the state equation for given ``x``, ``v``, ``u``."""
        return (self.A_xx @ x + self.B_xv @ v + self.B_xu @ u
                + self.Gamma_xx @ np.kron(x, x) + self.Gamma_xv @ np.kron(x, v)
                + self.Gamma_xu @ np.kron(x, u))

    def internal_output(self, x, v, u):
        return self.C_zx @ x + self.D_zv @ v + self.D_zu @ u

    def output(self, x, v, u):
        return self.C_yx @ x + self.D_yv @ v + self.D_yu @ u


@dataclass(frozen=True, eq=False)
class SCMBasis:
    """Known basis matrices of the subsystem connection matrix."""

    basis: tuple

    def __post_init__(self):
        mats = [np.atleast_2d(np.asarray(b, dtype=float)) for b in self.basis]
        if not mats:
            raise ParameterError("SCM basis must contain at least one matrix")
        shape = mats[0].shape
        for i, m in enumerate(mats):
            if m.shape != shape:
                raise ParameterError(f"basis matrix {i} has shape {m.shape}, expected {shape}")
        object.__setattr__(self, "basis", tuple(_frozen(m) for m in mats))

    @property
    def m_theta(self):
        return len(self.basis)

    @property
    def shape(self):
        return self.basis[0].shape


def as_theta(theta, basis: SCMBasis | None = None):
    """Validate a parameter vector and return it as a read-only float array."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.ndim != 1:
        raise ParameterError("theta must be a vector")
    if not np.all(np.isfinite(theta)):
        raise ParameterError("theta has non-finite entries")
    if basis is not None and theta.size != basis.m_theta:
        raise ParameterError(f"theta has length {theta.size}, basis has {basis.m_theta} matrices")
    return _frozen(theta)


def scm(basis: SCMBasis, theta) -> np.ndarray:
    """Subsystem connection matrix ``sum_i theta[i] * basis[i]``."""
    theta = as_theta(theta, basis)
    return np.tensordot(theta, np.stack(basis.basis), axes=1)


def embed_gamma(blocks: Sequence[np.ndarray], x_dims: Sequence[int], star_dims: Sequence[int]):
    """Assemble the network coefficient of ``x (x) star`` from per-subsystem blocks.

    ``blocks[i]`` multiplies ``x_i (x) star_i``. The result multiplies the
    stacked ``x (x) star`` and is zero on all cross-subsystem products.
    """
    if not (len(blocks) == len(x_dims) == len(star_dims)):
        raise ParameterError("blocks, x_dims and star_dims must have equal length")
    m_x, m_s = int(sum(x_dims)), int(sum(star_dims))
    out = np.zeros((m_x, m_x * m_s))
    x_off = np.concatenate([[0], np.cumsum(x_dims)]).astype(int)
    s_off = np.concatenate([[0], np.cumsum(star_dims)]).astype(int)
    for i, blk in enumerate(blocks):
        mx, ms = int(x_dims[i]), int(star_dims[i])
        blk = np.asarray(blk, dtype=float).reshape(mx, mx * ms)
        for j in range(mx):
            col0 = (x_off[i] + j) * m_s + s_off[i]
            out[x_off[i]:x_off[i] + mx, col0:col0 + ms] = blk[:, j * ms:(j + 1) * ms]
    return out


def well_posed(D_zv, Theta, tol=WELL_POSED_RCOND):
    """Check invertibility of ``I - D_zv @ Theta``.

    Returns ``(ok, rcond)`` where ``rcond`` is the reciprocal 2-norm condition
    number of the matrix.
    """
    D_zv = np.atleast_2d(np.asarray(D_zv, dtype=float))
    Theta = np.atleast_2d(np.asarray(Theta, dtype=float))
    if D_zv.shape[1] != Theta.shape[0] or D_zv.shape[0] != Theta.shape[1]:
        raise ParameterError(f"incompatible shapes {D_zv.shape} and {Theta.shape}")
    M = np.eye(D_zv.shape[0]) - D_zv @ Theta
    if M.size == 0:
        return True, 1.0
    sv = np.linalg.svd(M, compute_uv=False)
    rcond = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
    return bool(rcond >= tol), rcond


@dataclass(frozen=True, eq=False)
class LumpedQBTI:
    """Network model ``E x' = A x + B u + Gx (x(x)x) + Gu (x(x)u)``, ``y = C x + D u``."""

    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray = None
    Gamma_x: np.ndarray = None
    Gamma_u: np.ndarray = None
    theta: np.ndarray = None
    _gx_tensor: np.ndarray = field(init=False, repr=False, default=None)
    _gu_tensor: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.E, dtype=float))
        m_x = E.shape[0]
        B = np.asarray(self.B, dtype=float).reshape(m_x, -1)
        C = np.asarray(self.C, dtype=float).reshape(-1, m_x)
        m_u, m_y = B.shape[1], C.shape[0]
        set_ = object.__setattr__
        set_(self, "E", _matrix(E, m_x, m_x, "E"))
        set_(self, "A", _matrix(self.A, m_x, m_x, "A"))
        set_(self, "B", _matrix(B, m_x, m_u, "B"))
        set_(self, "C", _matrix(C, m_y, m_x, "C"))
        set_(self, "D", _matrix(self.D, m_y, m_u, "D"))
        set_(self, "Gamma_x", _matrix(self.Gamma_x, m_x, m_x * m_x, "Gamma_x"))
        set_(self, "Gamma_u", _matrix(self.Gamma_u, m_x, m_x * m_u, "Gamma_u"))
        if self.theta is not None:
            set_(self, "theta", as_theta(self.theta))
        set_(self, "_gx_tensor", self.Gamma_x.reshape(m_x, m_x, m_x))
        set_(self, "_gu_tensor", self.Gamma_u.reshape(m_x, m_x, m_u))

    @property
    def m_x(self):
        return self.E.shape[0]

    @property
    def m_u(self):
        return self.B.shape[1]

    @property
    def m_y(self):
        return self.C.shape[0]

    @property
    def is_linear(self):
        return not (np.any(self.Gamma_x) or np.any(self.Gamma_u))

    def rhs(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return (self.A @ x + self.B @ u
                + np.einsum("ijk,j,k->i", self._gx_tensor, x, x)
                + np.einsum("ijk,j,k->i", self._gu_tensor, x, u))

    def rhs_jacobian(self, x, u):
        """Jacobian of :meth:`rhs` with respect to ``x``."""
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        g = self._gx_tensor
        return (self.A + np.einsum("ijk,k->ij", g, x) + np.einsum("ijk,j->ik", g, x)
                + np.einsum("ijk,k->ij", self._gu_tensor, u))

    def output(self, x, u):
        """Output ``C x + D u``; accepts stacked rows of ``x`` and ``u``."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.ndim == 1:
            return self.C @ x + self.D @ np.atleast_1d(u)
        return x @ self.C.T + u.reshape(x.shape[0], -1) @ self.D.T

    def linear_part(self):
        return LumpedQBTI(self.E, self.A, self.B, self.C, self.D, theta=self.theta)


def _block_diag(mats, rows, cols):
    out = np.zeros((int(sum(rows)), int(sum(cols))))
    r = c = 0
    for m, nr, nc in zip(mats, rows, cols):
        out[r:r + nr, c:c + nc] = m
        r += nr
        c += nc
    return out


@dataclass(frozen=True, eq=False)
class NetworkBlocks:
    """Block-diagonal, parameter independent matrices of an interconnection."""

    E: np.ndarray
    A_xx: np.ndarray
    B_xv: np.ndarray
    B_xu: np.ndarray
    C_zx: np.ndarray
    C_yx: np.ndarray
    D_zv: np.ndarray
    D_zu: np.ndarray
    D_yv: np.ndarray
    D_yu: np.ndarray
    Gamma_xx: np.ndarray
    Gamma_xv: np.ndarray
    Gamma_xu: np.ndarray
    input_map: np.ndarray


def network_blocks(subsystems: Sequence[SubsystemQBTI], input_map=None) -> NetworkBlocks:
    """Stack subsystem matrices block-diagonally.

    ``input_map`` (shape ``sum(m_u_i) x m_ext``) maps an external input vector
    onto the stacked subsystem inputs; it lets several subsystems share one
    physical input. It is folded into ``B_xu``, ``D_zu``, ``D_yu`` and
    ``Gamma_xu``. ``None`` means the identity.
    """
    subs = list(subsystems)
    if not subs:
        raise ParameterError("need at least one subsystem")
    dx = [s.m_x for s in subs]
    du = [s.m_u for s in subs]
    dv = [s.m_v for s in subs]
    dz = [s.m_z for s in subs]
    dy = [s.m_y for s in subs]
    m_u = sum(du)
    J = np.eye(m_u) if input_map is None else np.atleast_2d(np.asarray(input_map, dtype=float))
    if J.shape[0] != m_u:
        raise ParameterError(f"input_map must have {m_u} rows, got {J.shape[0]}")
    m_x = sum(dx)
    bd = _block_diag
    return NetworkBlocks(
        E=bd([s.E for s in subs], dx, dx),
        A_xx=bd([s.A_xx for s in subs], dx, dx),
        B_xv=bd([s.B_xv for s in subs], dx, dv),
        B_xu=bd([s.B_xu for s in subs], dx, du) @ J,
        C_zx=bd([s.C_zx for s in subs], dz, dx),
        C_yx=bd([s.C_yx for s in subs], dy, dx),
        D_zv=bd([s.D_zv for s in subs], dz, dv),
        D_zu=bd([s.D_zu for s in subs], dz, du) @ J,
        D_yv=bd([s.D_yv for s in subs], dy, dv),
        D_yu=bd([s.D_yu for s in subs], dy, du) @ J,
        Gamma_xx=embed_gamma([s.Gamma_xx for s in subs], dx, dx),
        Gamma_xv=embed_gamma([s.Gamma_xv for s in subs], dx, dv),
        Gamma_xu=embed_gamma([s.Gamma_xu for s in subs], dx, du) @ np.kron(np.eye(m_x), J),
        input_map=J,
    )


def lump(subsystems, basis: SCMBasis, theta, input_map=None, tol=WELL_POSED_RCOND) -> LumpedQBTI:
    """Assemble the network QBTI model for parameter vector ``theta``.

    The interconnection ``v = Theta(theta) z`` is eliminated through

        K = Theta (I - D_zv Theta)^-1
        [A B; C D] = [A_xx B_xu; C_yx D_yu] + [B_xv; D_yv] K [C_zx D_zu]
        Gamma_x = Gamma_xx + Gamma_xv (I (x) K C_zx)
        Gamma_u = Gamma_xu + Gamma_xv (I (x) K D_zu)

    Raises :class:`DomainError` when ``I - D_zv Theta`` is numerically singular.
    """
    blocks = subsystems if isinstance(subsystems, NetworkBlocks) else network_blocks(subsystems, input_map)
    theta = as_theta(theta, basis)
    Theta = scm(basis, theta)
    if Theta.shape != (blocks.B_xv.shape[1], blocks.C_zx.shape[0]):
        raise ParameterError(f"SCM has shape {Theta.shape}, expected "
                             f"{(blocks.B_xv.shape[1], blocks.C_zx.shape[0])}")
    ok, rcond = well_posed(blocks.D_zv, Theta, tol)
    if not ok:
        raise DomainError(f"interconnection is ill-posed: rcond(I - D_zv Theta) = {rcond:.3e}")
    m_z = Theta.shape[1]
    K = spla.solve((np.eye(m_z) - blocks.D_zv @ Theta).T, Theta.T).T
    m_x = blocks.E.shape[0]
    I = np.eye(m_x)
    return LumpedQBTI(
        E=blocks.E,
        A=blocks.A_xx + blocks.B_xv @ K @ blocks.C_zx,
        B=blocks.B_xu + blocks.B_xv @ K @ blocks.D_zu,
        C=blocks.C_yx + blocks.D_yv @ K @ blocks.C_zx,
        D=blocks.D_yu + blocks.D_yv @ K @ blocks.D_zu,
        Gamma_x=blocks.Gamma_xx + blocks.Gamma_xv @ np.kron(I, K @ blocks.C_zx),
        Gamma_u=blocks.Gamma_xu + blocks.Gamma_xv @ np.kron(I, K @ blocks.D_zu),
        theta=theta,
    )
