"""Truncated Neumann-series inverse-Hessian estimates from ``b`` Hessian estimates.

With ``Q_0 = I`` and ``Q_i = I + (I - v_i / L) Q_{i-1}``, ``Q_b / L`` approximates
``inv(H)`` when every ``v_i`` approximates ``H``.  ``neumann_apply`` never forms
``Q_b``: it runs the same recursion on a vector.
"""

from __future__ import annotations

import numpy as np

from dsmo.errors import DimensionMismatch


def neumann_apply(v_samples, L_g, w) -> np.ndarray:
    """``(Q_b / L_g) @ w`` via ``w_i = w + (I - v_i/L_g) w_{i-1}``.

    Batched: ``v_samples`` may be ``(..., b, d, d)`` with ``w`` of shape ``(..., d)``.
    """
    w = np.asarray(w, dtype=float)
    v = np.asarray(v_samples, dtype=float)
    if v.size == 0:
        v = v.reshape(w.shape[:-1] + (0, w.shape[-1], w.shape[-1]))
    if v.ndim != w.ndim + 2 or v.shape[-2:] != (w.shape[-1], w.shape[-1]) or v.shape[:-3] != w.shape[:-1]:
        raise DimensionMismatch(f"Hessian samples {v.shape} incompatible with vector {w.shape}")
    out = w
    for i in range(v.shape[-3]):
        out = w + out - (v[..., i, :, :] @ out[..., None])[..., 0] / L_g
    return out / L_g


def neumann_matrix(v_samples, L_g) -> np.ndarray:
    """Materialize ``Q_b / L_g`` (debug and verification use)."""
    v = np.asarray(v_samples, dtype=float)
    d = v.shape[-1]
    eye = np.eye(d)
    Q = np.broadcast_to(eye, v.shape[:-3] + (d, d)).copy()
    for i in range(v.shape[-3]):
        Q = eye + (eye - v[..., i, :, :] / L_g) @ Q
    return Q / L_g
