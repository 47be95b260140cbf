"""Adam with per-group learning rates and sparse hash-table rows.

Hash tables only ever receive gradient at the rows that were touched at least
once (``ParamRef.live``). Untouched rows have zero moments, for which dense
Adam's update is exactly zero, so updating only the touched rows reproduces
dense Adam while skipping millions of idle rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-15

log = logging.getLogger(__name__)


@dataclass
class Moments:
    m: np.ndarray
    v: np.ndarray
    count: int = 0


@dataclass
class TrainState:
    """Optimizer and schedule state; ``moments`` is keyed like ``named_parameters``."""

    step: int = 0
    epoch: int = 0
    ao_enabled: bool = False
    moments: dict = field(default_factory=dict)


@numba.njit(cache=True, nogil=True)
def _adam_masked(p, g, m, v, live, lr, b1, b2, eps, bc1, bc2):
    for r in range(p.shape[0]):
        if not live[r]:
            continue
        for f in range(p.shape[1]):
            gi = g[r, f]
            mi = b1 * m[r, f] + (1.0 - b1) * gi
            vi = b2 * v[r, f] + (1.0 - b2) * gi * gi
            m[r, f] = mi
            v[r, f] = vi
            p[r, f] = p[r, f] - lr * (mi / bc1) / (np.sqrt(vi / bc2) + eps)


@numba.njit(cache=True, nogil=True)
def _masked_all_finite(g, live):
    for r in range(g.shape[0]):
        if live[r]:
            for f in range(g.shape[1]):
                if not np.isfinite(g[r, f]):
                    return False
    return True


def adam_update(p: np.ndarray, g: np.ndarray, mom: Moments, lr: float, live=None) -> None:
    """One in-place bias-corrected Adam update of ``p`` (only rows flagged in ``live`` if given)."""
    mom.count += 1
    bc1 = 1.0 - BETA1 ** mom.count
    bc2 = 1.0 - BETA2 ** mom.count
    if live is not None:
        _adam_masked(p, g, mom.m, mom.v, live, lr, BETA1, BETA2, EPS, bc1, bc2)
        return
    g = g.astype(np.float64, copy=False)
    m = BETA1 * mom.m + (1.0 - BETA1) * g
    v = BETA2 * mom.v + (1.0 - BETA2) * g * g
    mom.m[...] = m
    mom.v[...] = v
    p[...] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + EPS)


def named_parameters(models, include_ao: bool = True):
    """``[(key, ParamRef), ...]`` over all avatars with stable keys."""
    out = []
    for a, model in enumerate(models):
        for ref in model.parameters(include_ao=include_ao):
            out.append((f"avatar{a}/{ref.name}", ref))
    return out


def adam_step(state: TrainState, params, lrs: dict) -> list:
    """Update every group whose gradient is finite; returns the skipped group names.

    ``params`` is ``[(key, ParamRef), ...]``; ``lrs`` maps group name to rate.
    """
    finite = {}
    for _, ref in params:
        if ref.live is None:
            ok = bool(np.all(np.isfinite(ref.grad)))
        else:
            ok = bool(_masked_all_finite(ref.grad, ref.live))
        finite[ref.group] = finite.get(ref.group, True) and ok
    skipped = sorted(k for k, ok in finite.items() if not ok)
    for name in skipped:
        log.warning("non-finite gradient in group %r; update skipped", name)
    for key, ref in params:
        if not finite[ref.group]:
            continue
        mom = state.moments.get(key)
        if mom is None:
            dtype = ref.value.dtype
            mom = state.moments[key] = Moments(np.zeros(ref.value.shape, dtype), np.zeros(ref.value.shape, dtype))
        adam_update(ref.value, ref.grad, mom, lrs[ref.group], ref.live)
    return skipped
