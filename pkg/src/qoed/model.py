"""Dipole/exchange-coupled two-qubit model.

Basis order is ``{|uu>, |ud>, |du>, |dd>}`` with ``|u> = |0>`` the +1
eigenstate of sigma_z; hbar = 1 and all frequencies are dimensionless.

Two propagators are provided:

``"rwa"`` (default)
    Time-ordered exponential of the rotating-wave Hamiltonian::

        H(t) = G zz + F (exp(-2i dw t) |ud><du| + h.c.)

    It has the closed form ``U(t) = V(t) exp(-i K t)`` with ``V(t)`` a pair of
    local sigma_z rotations and ``K`` time independent.  This is the dynamics
    that reproduces the reference Fisher matrices.

``"closed"``
    The printed closed-form 4x4 propagator, evaluated verbatim.  It satisfies
    ``U(t) U(s) = U(t + s)`` and is generated by the static
    :func:`effective_hamiltonian`.

Both are exactly anti-periodic in ``G`` with period ``pi / t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError

PARAM_NAMES = ("F", "G", "delta_omega")
PROPAGATORS = ("rwa", "closed")

# sign of the detuning in the flip-flop phase, exp(FLIPFLOP_SIGN * 2i dw t) on |ud><du|
FLIPFLOP_SIGN = -1.0

_SERIES_CUTOFF = 1e-6


@dataclass(frozen=True)
class ModelParams:
    F: float
    G: float
    delta_omega: float = 1.0
    free: tuple = ("F", "G")
    propagator: str = "rwa"

    def __post_init__(self):
        for name in PARAM_NAMES:
            if not np.isfinite(getattr(self, name)):
                raise ContractError(f"{name} must be finite")
        if not self.free or any(n not in PARAM_NAMES for n in self.free):
            raise ContractError(f"free parameters must be a non-empty subset of {PARAM_NAMES}")
        if len(set(self.free)) != len(self.free):
            raise ContractError("duplicate free parameter")
        if self.propagator not in PROPAGATORS:
            raise ContractError(f"unknown propagator {self.propagator!r}")

    @property
    def omega(self) -> float:
        return float(np.hypot(self.F, self.delta_omega))

    @property
    def n_free(self) -> int:
        return len(self.free)

    def free_values(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.free], dtype=float)

    def with_free(self, values) -> "ModelParams":
        values = np.asarray(values, dtype=float).ravel()
        if values.size != self.n_free:
            raise ContractError(f"expected {self.n_free} values, got {values.size}")
        return replace(self, **{n: float(v) for n, v in zip(self.free, values)})

    def shifted(self, name: str, delta: float) -> "ModelParams":
        return replace(self, **{name: getattr(self, name) + delta})

    def key(self) -> tuple:
        return (self.F, self.G, self.delta_omega, self.propagator)


@dataclass(frozen=True)
class Propagator:
    u: np.ndarray = field(repr=False)
    t: float
    params: ModelParams


def _sinc_t(omega: float, t: float) -> float:
    """sin(omega t) / omega, with the omega -> 0 limit t."""
    x = omega * t
    if abs(x) < _SERIES_CUTOFF:
        return t * (1.0 - x * x / 6.0)
    return np.sin(x) / omega


def closed_matrix(F: float, G: float, dw: float, t: float) -> np.ndarray:
    omega = np.hypot(F, dw)
    c = np.cos(omega * t)
    s = _sinc_t(omega, t)
    ph = np.exp(-1j * (dw - G) * t)
    u = np.zeros((4, 4), dtype=complex)
    u[0, 0] = u[3, 3] = np.exp(-1j * G * t)
    u[1, 1] = ph * (c - 1j * dw * s)
    u[1, 2] = u[2, 1] = -1j * F * ph * s
    u[2, 2] = ph * (c + 1j * dw * s)
    return u


def rwa_matrix(F: float, G: float, dw: float, t: float) -> np.ndarray:
    sg = FLIPFLOP_SIGN
    omega = np.hypot(F, dw)
    c = np.cos(omega * t)
    s = _sinc_t(omega, t)
    # W = exp(iGt) [c - i s (F sx + sg dw sz)] on the {ud, du} block, then V = diag(e^{i sg dw t}, e^{-i sg dw t})
    eg = np.exp(1j * G * t)
    v1 = np.exp(1j * sg * dw * t)
    u = np.zeros((4, 4), dtype=complex)
    u[0, 0] = u[3, 3] = np.exp(-1j * G * t)
    u[1, 1] = v1 * eg * (c - 1j * sg * dw * s)
    u[1, 2] = v1 * eg * (-1j * F * s)
    u[2, 1] = np.conj(v1) * eg * (-1j * F * s)
    u[2, 2] = np.conj(v1) * eg * (c + 1j * sg * dw * s)
    return u


def unitary_closed(params: ModelParams, t: float) -> Propagator:
    if not np.isfinite(t):
        raise ContractError("t must be finite")
    return Propagator(closed_matrix(params.F, params.G, params.delta_omega, t), float(t), params)


def unitary_rwa(params: ModelParams, t: float) -> Propagator:
    if not np.isfinite(t):
        raise ContractError("t must be finite")
    return Propagator(rwa_matrix(params.F, params.G, params.delta_omega, t), float(t), params)


def unitary(params: ModelParams, t: float) -> Propagator:
    """Propagator selected by ``params.propagator``."""
    if params.propagator == "closed":
        return unitary_closed(params, t)
    return unitary_rwa(params, t)


def effective_hamiltonian(params: ModelParams) -> np.ndarray:
    """Static generator of the closed-form propagator: ``U(t) = exp(-i H t)``."""
    F, G, dw = params.F, params.G, params.delta_omega
    h = np.zeros((4, 4), dtype=complex)
    h[0, 0] = h[3, 3] = G
    h[1, 1] = 2.0 * dw - G
    h[2, 2] = -G
    h[1, 2] = h[2, 1] = F
    return h


def rwa_hamiltonian(params: ModelParams, t: float) -> np.ndarray:
    """Time-dependent rotating-wave Hamiltonian at time ``t``."""
    F, G, dw = params.F, params.G, params.delta_omega
    h = np.diag([G, -G, -G, G]).astype(complex)
    h[1, 2] = F * np.exp(FLIPFLOP_SIGN * 2j * dw * t)
    h[2, 1] = np.conj(h[1, 2])
    return h


def _rwa_hamiltonian_batch(params: ModelParams, s: np.ndarray) -> np.ndarray:
    h = np.zeros((len(s), 4, 4), dtype=complex)
    h[:, 0, 0] = h[:, 3, 3] = params.G
    h[:, 1, 1] = h[:, 2, 2] = -params.G
    h[:, 1, 2] = params.F * np.exp(FLIPFLOP_SIGN * 2j * params.delta_omega * s)
    h[:, 2, 1] = np.conj(h[:, 1, 2])
    return h


def _rk4(generators, t: float, steps: int) -> np.ndarray:
    """Classical RK4 for ``dU/dt = A(s) U`` with ``A = -i H``.

    For a linear system one RK4 step is ``U <- S_k U`` with ``S_k`` a
    polynomial in ``A`` at the step's start, middle and end; the step
    matrices are built in one batch and multiplied in order.
    """
    dt = t / steps
    s = np.arange(steps) * dt
    a0 = -1j * generators(s)
    am = -1j * generators(s + 0.5 * dt)
    a1 = -1j * generators(s + dt)
    eye = np.eye(4, dtype=complex)
    # k_i = B_i U with B_1 = a0, B_2 = am (I + dt/2 B_1), ...
    b1 = a0
    b2 = am @ (eye + 0.5 * dt * b1)
    b3 = am @ (eye + 0.5 * dt * b2)
    b4 = a1 @ (eye + dt * b3)
    step = eye + (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    u = eye
    for k in range(steps):
        u = step[k] @ u
    return u


def unitary_numeric(params: ModelParams, t: float, steps: int = 10_000) -> Propagator:
    """Fourth-order Runge-Kutta integration of ``dU/dt = -i H U`` from ``U(0) = I``.

    Integrates the static generator for ``propagator="closed"`` and the
    time-dependent rotating-wave Hamiltonian for ``"rwa"``; an independent
    check on the corresponding closed forms.
    """
    if steps < 100:
        raise ContractError("steps must be at least 100")
    if t == 0:
        return Propagator(np.eye(4, dtype=complex), 0.0, params)
    if params.propagator == "closed":
        h = effective_hamiltonian(params)
        u = _rk4(lambda s: np.broadcast_to(h, (len(s), 4, 4)), t, steps)
    else:
        u = _rk4(lambda s: _rwa_hamiltonian_batch(params, s), t, steps)
    return Propagator(u, float(t), params)
