"""Spectral norms by power iteration, with an exact fallback."""

from __future__ import annotations

import warnings
from typing import Optional

import numpy as np


class NumericalWarning(RuntimeWarning):
    pass


def batched_opnorm(Ms: np.ndarray, iters: int = 200, tol: float = 1e-10,
                   rng: Optional[np.random.Generator] = None, fallback_max_d: int = 64) -> np.ndarray:
    """Spectral norms of a stack of square matrices, shape ``(T, d, d)``.

    Power iteration runs on ``M'M``; the norm is the square root of the Rayleigh
    quotient. Stacks that have not converged to a relative change below ``tol``
    within ``iters`` iterations trigger a :class:`NumericalWarning` and, when
    ``d <= fallback_max_d``, are recomputed with a symmetric eigensolve.
    """
    Ms = np.asarray(Ms, dtype=np.float64)
    single = Ms.ndim == 2
    if single:
        Ms = Ms[None]
    T, d, _ = Ms.shape
    rng = np.random.default_rng(0) if rng is None else rng
    G = np.einsum("tki,tkj->tij", Ms, Ms)
    v = rng.standard_normal((T, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    lam = np.zeros(T)
    done = np.zeros(T, dtype=bool)
    for _ in range(iters):
        Gv = np.einsum("tij,tj->ti", G, v)
        new = np.einsum("ti,ti->t", v, Gv)
        nrm = np.linalg.norm(Gv, axis=1)
        zero = nrm == 0
        nrm[zero] = 1.0
        v = Gv / nrm[:, None]
        done = (np.abs(new - lam) <= tol * np.maximum(np.abs(new), 1e-300)) | zero
        lam = new
        if done.all():
            break
    out = np.sqrt(np.maximum(lam, 0.0))
    if not done.all():
        bad = ~done
        warnings.warn(f"power iteration did not converge for {int(bad.sum())} of {T} matrices", NumericalWarning,
                      stacklevel=2)
        if d <= fallback_max_d:
            sym = np.allclose(Ms[bad], np.swapaxes(Ms[bad], 1, 2))
            if sym:
                out[bad] = np.max(np.abs(np.linalg.eigvalsh(Ms[bad])), axis=1)
            else:
                out[bad] = np.sqrt(np.max(np.linalg.eigvalsh(G[bad]), axis=1))
    return out[0] if single else out
