"""Probing signal generators: autonomous LTI systems ``xi' = Xi xi, u = Pi xi``."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .errors import DomainError, NumericError, ParameterError

DEFAULT_MAX_ORDER = 4
EIG_GAP = 1e-10
AXIS_TOL = 1e-9
COLLISION_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class PSGS:
    Xi: np.ndarray
    Pi: np.ndarray
    xi0: np.ndarray

    def __post_init__(self):
        Xi = np.asarray(self.Xi, dtype=float)
        if Xi.size == 0:
            Xi = Xi.reshape(0, 0)
        xi0 = np.asarray(self.xi0, dtype=float).reshape(-1)
        Pi = np.asarray(self.Pi, dtype=float)
        if Pi.ndim == 1:
            Pi = Pi.reshape(1, -1) if Xi.shape[0] else Pi.reshape(-1, 0)
        if Xi.ndim != 2 or Xi.shape[0] != Xi.shape[1]:
            raise ParameterError(f"Xi must be square, got shape {Xi.shape}")
        if xi0.shape[0] != Xi.shape[0] or Pi.shape[1] != Xi.shape[0]:
            raise ParameterError(
                f"incompatible PSGS shapes: Xi {Xi.shape}, Pi {Pi.shape}, xi0 {xi0.shape}")
        for name, a in (("Xi", Xi), ("Pi", Pi), ("xi0", xi0)):
            if not np.all(np.isfinite(a)):
                raise ParameterError(f"{name} has non-finite entries")
            a.setflags(write=False)
        object.__setattr__(self, "Xi", Xi)
        object.__setattr__(self, "Pi", Pi)
        object.__setattr__(self, "xi0", xi0)

    @property
    def m_xi(self):
        return self.Xi.shape[0]

    @property
    def m_u(self):
        return self.Pi.shape[0]


def multisine(freqs, amplitudes, phases=None, m_u=1) -> PSGS:
    """Generator whose output is ``sum_j a_j sin(w_j t + phi_j)``.

    Each nonzero frequency contributes a rotation block ``[[0, w], [-w, 0]]``
    started from ``(1, 1)``; a zero frequency contributes a 1x1 zero block.
    The same signal is fed to every one of the ``m_u`` input channels.
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    amps = np.broadcast_to(np.asarray(amplitudes, dtype=float), freqs.shape)
    phases = np.zeros_like(freqs) if phases is None else np.broadcast_to(
        np.asarray(phases, dtype=float), freqs.shape)
    if np.any(freqs < 0) or not np.all(np.isfinite(freqs)):
        raise ParameterError("frequencies must be finite and nonnegative")
    if len(np.unique(freqs)) != len(freqs):
        raise ParameterError(f"duplicate frequencies {freqs.tolist()} give repeated generator eigenvalues")
    blocks, pi, x0 = [], [], []
    for w, a, p in zip(freqs, amps, phases):
        if w == 0.0:
            blocks.append(np.zeros((1, 1)))
            pi.append([a * np.sin(p)])
            x0.append([1.0])
        else:
            # xi = (sin wt + cos wt, cos wt - sin wt) from (1, 1)
            blocks.append(np.array([[0.0, w], [-w, 0.0]]))
            pi.append([a * (np.sin(p) + np.cos(p)) / 2, a * (np.sin(p) - np.cos(p)) / 2])
            x0.append([1.0, 1.0])
    n = sum(b.shape[0] for b in blocks)
    Xi = np.zeros((n, n))
    off = 0
    for b in blocks:
        k = b.shape[0]
        Xi[off:off + k, off:off + k] = b
        off += k
    row = np.concatenate(pi) if pi else np.zeros(0)
    Pi = np.tile(row, (m_u, 1))
    xi0 = np.concatenate(x0) if x0 else np.zeros(0)
    return PSGS(Xi, Pi, xi0)


@dataclass(frozen=True, eq=False)
class PSGSEigen:
    """Modal form of a generator: ``u(t) = sum_i exp(lam_i t) psi_u[i]``.

    The first ``m_xi_plus`` eigenvalues have nonnegative imaginary part and are
    sorted by it; the remaining ones are their conjugates in the same order.
    Indices used in tuples are 1-based into ``lam``.
    """

    lam: np.ndarray
    psi_u: np.ndarray
    m_xi_plus: int
    vectors: np.ndarray = field(default=None, repr=False)

    @property
    def m_xi(self):
        return len(self.lam)

    @property
    def m_u(self):
        return self.psi_u.shape[1]

    def conjugate_index(self, i):
        """1-based index of the conjugate partner of eigenvalue ``i``."""
        # layout: real eigenvalues, positive-frequency ones, their conjugates
        p = self.m_xi - self.m_xi_plus
        r = self.m_xi_plus - p
        if i <= r:
            return i
        return i + p if i <= self.m_xi_plus else i - p

    def conjugate_tuple(self, tup):
        return tuple(self.conjugate_index(i) for i in tup)

    def tuple_lambda(self, tup):
        return complex(sum(self.lam[i - 1] for i in tup))


def _order_eigen(lam, vecs):
    on_axis_real = np.abs(lam.imag) <= EIG_GAP * np.maximum(1.0, np.abs(lam))
    real_idx = [i for i in range(len(lam)) if on_axis_real[i]]
    pos_idx = [i for i in range(len(lam)) if not on_axis_real[i] and lam[i].imag > 0]
    neg_idx = [i for i in range(len(lam)) if not on_axis_real[i] and lam[i].imag < 0]
    if len(pos_idx) != len(neg_idx):
        raise DomainError("generator eigenvalues are not closed under conjugation")
    real_idx.sort(key=lambda i: lam[i].real)
    pos_idx.sort(key=lambda i: (lam[i].imag, lam[i].real))
    n = len(lam)
    out_lam = np.empty(n, complex)
    out_vec = np.empty_like(vecs, dtype=complex)
    k = 0
    for i in real_idx:
        v = vecs[:, i]
        # rotate to a real vector
        j = np.argmax(np.abs(v))
        v = v * np.exp(-1j * np.angle(v[j]))
        out_lam[k], out_vec[:, k] = lam[i].real, v.real
        k += 1
    for i in pos_idx:
        out_lam[k], out_vec[:, k] = lam[i], vecs[:, i]
        k += 1
    for i in pos_idx:
        out_lam[k], out_vec[:, k] = np.conj(lam[i]), np.conj(vecs[:, i])
        k += 1
    return out_lam, out_vec, len(real_idx) + len(pos_idx)


def eigen(psgs: PSGS) -> PSGSEigen:
    """Eigen-directions ``psi_u(i) = [T^-1 xi0]_i Pi T[:, i]`` of a generator."""
    n = psgs.m_xi
    if n == 0:
        return PSGSEigen(np.zeros(0, complex), np.zeros((0, psgs.m_u), complex), 0,
                         np.zeros((0, 0), complex))
    lam, vecs = np.linalg.eig(psgs.Xi)
    scale = max(1.0, np.max(np.abs(lam)))
    for i in range(n):
        for j in range(i + 1, n):
            if abs(lam[i] - lam[j]) <= EIG_GAP * scale:
                raise DomainError(
                    f"generator eigenvalue {lam[i]:.6g} is repeated; only diagonalizable "
                    "generators with distinct eigenvalues are supported")
    lam, T, m_plus = _order_eigen(lam, vecs)
    coeff = np.linalg.solve(T, psgs.xi0.astype(complex))
    psi = (psgs.Pi @ T) * coeff[None, :]
    return PSGSEigen(lam, psi.T.copy(), m_plus, T)


def u_at(eig: PSGSEigen, t):
    """Generator output at time(s) ``t``; shape ``(m_u,)`` or ``(len(t), m_u)``."""
    t_arr = np.asarray(t, dtype=float)
    phases = np.exp(np.multiply.outer(t_arr, eig.lam))
    val = phases @ eig.psi_u
    scale = np.abs(phases) @ np.abs(eig.psi_u)
    bad = np.abs(val.imag) > 1e-9 * np.maximum(scale, np.finfo(float).tiny)
    if np.any(bad):
        raise NumericError(f"generator output has imaginary part {np.max(np.abs(val.imag)):.3e}")
    return val.real


def _wrap(phase):
    # signed distance to the nearest multiple of 2 pi
    return (phase + np.pi) % (2 * np.pi) - np.pi


def combinations(lam, max_order, min_order=1):
    """Yield ``(index tuple, summed eigenvalue)`` for all multisets up to ``max_order``."""
    for k in range(min_order, max_order + 1):
        for combo in combinations_with_replacement(range(len(lam)), k):
            yield tuple(i + 1 for i in combo), complex(sum(lam[i] for i in combo))


@dataclass
class AssumptionReport:
    on_axis: bool
    distinct: bool
    no_phase_return: bool
    no_plant_resonance: bool
    no_sampled_collision: bool
    messages: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def ok(self):
        return all((self.on_axis, self.distinct, self.no_phase_return,
                    self.no_plant_resonance, self.no_sampled_collision))

    def as_dict(self):
        return {"on_axis": self.on_axis, "distinct": self.distinct,
                "no_phase_return": self.no_phase_return,
                "no_plant_resonance": self.no_plant_resonance,
                "no_sampled_collision": self.no_sampled_collision,
                "ok": self.ok, "messages": list(self.messages), "notes": list(self.notes)}


def check_assumptions(eig: PSGSEigen, plant=None, max_order=DEFAULT_MAX_ORDER, T=None,
                      tol=COLLISION_TOL) -> AssumptionReport:
    """Excitation checks for a generator against a plant spectrum and sampling period.

    Flags: (a) generator eigenvalues on the imaginary axis; (b) pairwise
    distinct; (c) no combination of the nonnegative-frequency eigenvalues of
    order ``1..max_order`` returns to phase zero after one sampling period;
    (d) no such combination hits a plant eigenvalue; (e) all signed
    combination frequencies of order ``<= max_order`` stay distinct modulo
    ``2 pi / T``. Checks (c) and (e) pass vacuously when ``T`` is None.
    Collisions of signed combinations with plant eigenvalues are reported in
    ``notes`` only.
    """
    lam = np.asarray(eig.lam)
    msgs, notes = [], []
    scale = max(1.0, np.max(np.abs(lam))) if len(lam) else 1.0

    off = [l for l in lam if abs(l.real) >= AXIS_TOL]
    on_axis = not off
    if off:
        msgs.append(f"(a) eigenvalues off the imaginary axis: {[complex(l) for l in off]}")

    distinct = True
    for i in range(len(lam)):
        for j in range(i + 1, len(lam)):
            if abs(lam[i] - lam[j]) <= EIG_GAP * scale:
                distinct = False
                msgs.append(f"(b) eigenvalues {i + 1} and {j + 1} coincide")

    plus = lam[:eig.m_xi_plus]
    no_return = True
    if T is not None:
        for idx, s in combinations(plus, max_order):
            if abs(_wrap(s.imag * T)) <= tol:
                no_return = False
                msgs.append(f"(c) combination {idx} has sampled phase {s.imag * T:.6g} = 0 mod 2pi")
                break

    plant_eigs = np.asarray(getattr(plant, "eigenvalues", plant if plant is not None else []),
                            dtype=complex)
    no_res = True
    if plant_eigs.size:
        for idx, s in combinations(plus, max_order):
            hit = np.abs(plant_eigs - s) <= tol * max(1.0, abs(s))
            if np.any(hit):
                no_res = False
                msgs.append(f"(d) combination {idx} = {s:.6g} equals plant eigenvalue "
                            f"{complex(plant_eigs[np.argmax(hit)]):.6g}")
        for idx, s in combinations(lam, max_order):
            hit = np.abs(plant_eigs - s) <= tol * max(1.0, abs(s))
            if np.any(hit) and not all(i <= eig.m_xi_plus for i in idx):
                notes.append(f"signed combination {idx} = {s:.6g} meets plant eigenvalue "
                             f"{complex(plant_eigs[np.argmax(hit)]):.6g}")

    no_coll = True
    if T is not None and len(lam):
        freqs = {}
        for idx, s in combinations(lam, max_order):
            key = round(s.imag / (tol * scale))
            freqs.setdefault(key, (idx, s.imag))
        items = sorted(freqs.values(), key=lambda p: p[1])
        for a in range(len(items)):
            for b in range(a + 1, len(items)):
                (ia, fa), (ib, fb) = items[a], items[b]
                if abs(fa - fb) <= tol * scale:
                    continue
                if abs(_wrap((fa - fb) * T)) <= tol:
                    no_coll = False
                    msgs.append(f"(e) combinations {ia} ({fa:.6g} rad/s) and {ib} ({fb:.6g} rad/s) "
                                f"alias at T = {T:g}")
    return AssumptionReport(on_axis, distinct, no_return, no_res, no_coll, msgs, notes)
