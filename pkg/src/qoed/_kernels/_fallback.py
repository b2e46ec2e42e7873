"""Pure-numpy kernels; reference behaviour for the compiled ones."""
from __future__ import annotations

import numpy as np

RWA, CLOSED = 0, 1


def unitaries(F, G, dw, t, kind, sign):
    """Batched propagators; ``F``, ``G``, ``t`` broadcast together."""
    F, G, t = np.broadcast_arrays(np.asarray(F, float), np.asarray(G, float), np.asarray(t, float))
    omega = np.hypot(F, dw)
    x = omega * t
    c = np.cos(x)
    small = np.abs(x) < 1e-6
    s = np.where(small, t * (1.0 - x * x / 6.0), np.sin(x) / np.where(small, 1.0, omega))
    u = np.zeros(F.shape + (4, 4), dtype=complex)
    corner = np.exp(-1j * G * t)
    u[..., 0, 0] = corner
    u[..., 3, 3] = corner
    if kind == CLOSED:
        ph = np.exp(-1j * (dw - G) * t)
        u[..., 1, 1] = ph * (c - 1j * dw * s)
        u[..., 1, 2] = -1j * F * ph * s
        u[..., 2, 1] = -1j * F * ph * s
        u[..., 2, 2] = ph * (c + 1j * dw * s)
    else:
        eg = np.exp(1j * G * t)
        v1 = np.exp(1j * sign * dw * t)
        u[..., 1, 1] = v1 * eg * (c - 1j * sign * dw * s)
        u[..., 1, 2] = v1 * eg * (-1j * F * s)
        u[..., 2, 1] = np.conj(v1) * eg * (-1j * F * s)
        u[..., 2, 2] = np.conj(v1) * eg * (c + 1j * sign * dw * s)
    return u


def experiment_probs(F, G, dw, kind, sign, times, rho, povm):
    """Outcome probabilities ``(k, 4)`` of ``k`` experiments at one parameter point."""
    u = unitaries(F, G, dw, times, kind, sign)  # (k, 4, 4)
    rt = u @ rho @ np.conj(np.swapaxes(u, -1, -2))
    return np.einsum("koij,kji->ko", povm, rt).real


def grid_probs(f_axis, g_axis, dw, kind, sign, times, rho, povm):
    """Outcome probabilities ``(nf, ng, k, 4)`` over a parameter grid."""
    f_axis = np.asarray(f_axis, float)
    g_axis = np.asarray(g_axis, float)
    times = np.asarray(times, float)
    out = np.empty((f_axis.size, g_axis.size, times.size, 4))
    ff, gg = np.meshgrid(f_axis, g_axis, indexing="ij")
    for j, t in enumerate(times):
        u = unitaries(ff, gg, dw, t, kind, sign)  # (nf, ng, 4, 4)
        rt = u @ rho[j] @ np.conj(np.swapaxes(u, -1, -2))
        out[:, :, j, :] = np.einsum("oij,fgji->fgo", povm[j], rt).real
    return out
