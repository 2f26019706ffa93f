"""Soft Dice losses with exact analytic gradients.

All losses operate on H x W probability maps and binary masks. A region mask
restricts both the value and the gradients: pixels outside the region
contribute exactly zero.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimMismatch

log = logging.getLogger(__name__)

SMOOTH_EPS = 1e-6


@dataclass
class LossValue:
    """Scalar loss plus gradients w.r.t. the probability-map arguments.

    grad_q is the gradient w.r.t. the first map argument, grad_c w.r.t. the
    second (None where a loss has a constant target).
    """

    value: float
    grad_q: Optional[np.ndarray] = None
    grad_c: Optional[np.ndarray] = None
    empty_region: bool = field(default=False)


def _check_dims(*arrays: np.ndarray) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise DimMismatch(f"incompatible grid shapes: {sorted(shapes)}")


def _dice_core(p: np.ndarray, t: np.ndarray, r: np.ndarray):
    """Value and the shared numerator/denominator of the region soft Dice."""
    pr = p * r
    tr = t * r
    num = 2.0 * float((pr * tr).sum()) + SMOOTH_EPS
    den = float(pr.sum()) + float(tr.sum()) + SMOOTH_EPS
    return 1.0 - num / den, num, den


def soft_dice(pred, target, region) -> LossValue:
    """Region-restricted soft Dice of `pred` against a constant `target`.

    Empty regions yield a zero loss with a raised flag instead of an error so
    degenerate slices cannot abort a training epoch.
    """
    p = np.asarray(pred, dtype=float)
    t = np.asarray(target, dtype=float)
    r = np.asarray(region, dtype=float)
    _check_dims(p, t, r)
    if r.sum() == 0:
        log.warning("soft_dice: empty region, returning zero loss")
        return LossValue(0.0, np.zeros_like(p), empty_region=True)
    value, num, den = _dice_core(p, t, r)
    grad = -r * (2.0 * t * den - num) / den**2
    return LossValue(value, grad)


def supervised_loss(q_hat, c_hat, q, c) -> LossValue:
    """Sum of the two subnets' whole-slice soft Dice against their masks."""
    q_hat = np.asarray(q_hat, dtype=float)
    c_hat = np.asarray(c_hat, dtype=float)
    _check_dims(q_hat, c_hat, np.asarray(q), np.asarray(c))
    full = np.ones_like(q_hat)
    lq = soft_dice(q_hat, q, full)
    lc = soft_dice(c_hat, c, full)
    return LossValue(lq.value + lc.value, lq.grad_q, lc.grad_q)


def consistency_loss(q_hat, c_hat, region) -> LossValue:
    """Soft Dice between the two predictions, differentiated through both.

    With the whole slice as region this couples the subnets everywhere;
    with the ambiguous region it only acts where the supervision masks
    disagree.
    """
    p = np.asarray(q_hat, dtype=float)
    t = np.asarray(c_hat, dtype=float)
    r = np.asarray(region, dtype=float)
    _check_dims(p, t, r)
    if r.sum() == 0:
        log.warning("consistency_loss: empty region, returning zero loss")
        z = np.zeros_like(p)
        return LossValue(0.0, z, z.copy(), empty_region=True)
    value, num, den = _dice_core(p, t, r)
    grad_p = -r * (2.0 * t * den - num) / den**2
    grad_t = -r * (2.0 * p * den - num) / den**2
    return LossValue(value, grad_p, grad_t)


def total_loss(q_hat, c_hat, q, c, region, lam: float) -> LossValue:
    """Supervised loss plus `lam` times the region-restricted consistency loss.

    lam == 0 skips the consistency term entirely, so the result is
    bit-identical to supervised_loss.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    sup = supervised_loss(q_hat, c_hat, q, c)
    if lam == 0.0:
        return sup
    con = consistency_loss(q_hat, c_hat, region)
    return LossValue(
        sup.value + lam * con.value,
        sup.grad_q + lam * con.grad_q,
        sup.grad_c + lam * con.grad_c,
        empty_region=con.empty_region,
    )


def ensemble(q_hat, c_hat) -> np.ndarray:
    """Pixelwise average of the two predictions."""
    q_hat = np.asarray(q_hat, dtype=float)
    c_hat = np.asarray(c_hat, dtype=float)
    _check_dims(q_hat, c_hat)
    return (q_hat + c_hat) / 2.0
