"""Ready-made networks."""

from __future__ import annotations

import numpy as np

from .model import SCMBasis, SubsystemQBTI, lump

CIRCUIT_CAPACITANCE = (20.0, 4.0)
CIRCUIT_SATURATION = (0.6, 0.6)
CIRCUIT_THETA = (0.04, 0.05)


def diode_capacitor(C, I_s, index=0):
    """Diode in parallel with a capacitor, driven by a series current ``u``.

    States are ``x1 = v``, ``x2 = i_c / V_th`` and ``x3 = exp(v / V_th) - 1``;
    the thermal voltage enters as the gain of the self loop ``v = V_th z``
    with ``z = x2``::

        x1' = v / C
        0   = -v - I_s x3 + u
        x3' = x2 / C + x2 x3 / C
        y   = x1
    """
    E = np.diag([1.0, 0.0, 1.0])
    A = np.zeros((3, 3))
    A[1, 2] = -I_s
    A[2, 1] = 1.0 / C
    gxx = np.zeros((3, 9))
    gxx[2, 1 * 3 + 2] = 1.0 / C
    return SubsystemQBTI(
        E=E, A_xx=A,
        B_xv=[[1.0 / C], [-1.0], [0.0]],
        B_xu=[[0.0], [1.0], [0.0]],
        C_zx=[[0.0, 1.0, 0.0]],
        C_yx=[[1.0, 0.0, 0.0]],
        Gamma_xx=gxx,
        index=index,
        name=f"diode-capacitor {index + 1}",
    )


def circuit(C=CIRCUIT_CAPACITANCE, I_s=CIRCUIT_SATURATION):
    """Two diode-capacitor cells in series sharing one current source.

    Returns ``(subsystems, basis, input_map)``; the parameters are the two
    thermal voltages.
    """
    subs = [diode_capacitor(c, i, k) for k, (c, i) in enumerate(zip(C, I_s))]
    basis = SCMBasis((np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [0.0, 1.0]])))
    input_map = np.ones((2, 1))
    return subs, basis, input_map


def circuit_model(theta=CIRCUIT_THETA, C=CIRCUIT_CAPACITANCE, I_s=CIRCUIT_SATURATION):
    subs, basis, J = circuit(C, I_s)
    return lump(subs, basis, theta, input_map=J)


def circuit_h1(s, theta=CIRCUIT_THETA, C=CIRCUIT_CAPACITANCE, I_s=CIRCUIT_SATURATION):
    """Closed-form first-order transfer function, one entry per cell."""
    return np.array([th / (c * th * s + i) for th, c, i in zip(theta, C, I_s)])


def circuit_h2(s1, s2, theta=CIRCUIT_THETA, C=CIRCUIT_CAPACITANCE, I_s=CIRCUIT_SATURATION):
    """Closed-form second-order kernel (recursion ordering, not symmetrized)."""
    out = []
    for th, c, i in zip(theta, C, I_s):
        out.append(-s1 / (s1 + s2) * i * th
                   / ((c * th * (s1 + s2) + i) * (c * th * s1 + i) * (c * th * s2 + i)))
    return np.array(out)


def circuit_state0():
    """Consistent zero state of the lifted circuit."""
    return np.zeros(6)
