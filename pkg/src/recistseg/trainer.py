"""Two-phase co-training of the subnet pair and thresholded inference.

Phase one optimizes the dual supervision term alone until the predictions
are credible under- and over-segmentations; phase two adds the weighted
consistency term, optionally restricted to the ambiguous region. Both
subnets are updated in the same step from the single combined loss, each
with its own AdaMax state.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .dataio import SliceSample, attach_supervision
from .errors import EmptyDataset, NonFiniteLoss, ShapeMismatch
from .losses import consistency_loss, ensemble, supervised_loss
from .metrics import dice_jaccard
from .model import (
    DEFAULT_LAYOUT,
    SegModelPair,
    backward,
    forward,
    init_params,
)

log = logging.getLogger(__name__)

ADAMAX_BETA1 = 0.9
ADAMAX_BETA2 = 0.999
ADAMAX_EPS = 1e-8

REGION_SLICE = "slice"          # consistency active on the whole slice
REGION_AMBIGUOUS = "ambiguous"  # consistency restricted to the ambiguous region

EARLY_SWITCH_DELTA = 1e-4
EARLY_SWITCH_PATIENCE = 5


@dataclass
class TrainConfig:
    lam: float = 0.4
    prepare_epochs: int = 30
    total_epochs: int = 80
    learning_rate: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    region_mode: str = REGION_AMBIGUOUS
    flip_augment: bool = True
    early_switch: bool = False
    layout: tuple[int, ...] = DEFAULT_LAYOUT
    threshold: float = 0.5

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.prepare_epochs > self.total_epochs:
            raise ValueError("prepare_epochs must be <= total_epochs")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.region_mode not in (REGION_SLICE, REGION_AMBIGUOUS):
            raise ValueError(f"unknown region_mode '{self.region_mode}'")


def adamax_step(arrays, grads, m, u, t, lr,
                beta1=ADAMAX_BETA1, beta2=ADAMAX_BETA2, eps=ADAMAX_EPS):
    """One AdaMax update, in place, over a flat list of parameter arrays.

    m <- b1*m + (1-b1)*g;  u <- max(b2*u, |g|);
    theta <- theta - (lr / (1 - b1^t)) * m / (u + eps)
    """
    scale = lr / (1.0 - beta1 ** t)
    for theta, g, mi, ui in zip(arrays, grads, m, u):
        mi *= beta1
        mi += (1.0 - beta1) * g
        np.maximum(beta2 * ui, np.abs(g), out=ui)
        theta -= scale * mi / (ui + eps)


def init_pair(config: TrainConfig) -> SegModelPair:
    sq, sc = np.random.SeedSequence(config.seed).spawn(2)
    return SegModelPair(
        params_q=init_params(sq, config.layout),
        params_c=init_params(sc, config.layout),
    )


def predict(pair: SegModelPair, image: np.ndarray, threshold: float = 0.5):
    """Averaging-ensemble probability map and its thresholded mask.

    Ties at the threshold map to foreground (>= rule).
    """
    q_hat, _ = forward(pair.params_q, image)
    c_hat, _ = forward(pair.params_c, image)
    m_hat = ensemble(q_hat, c_hat)
    return m_hat, (m_hat >= threshold).astype(np.uint8)


def _val_dice(pair: SegModelPair, samples: list[SliceSample], threshold: float):
    """Mean Dice of thresholded Q-hat, C-hat, and ensemble on gt slices."""
    with_gt = [s for s in samples if s.gt is not None and s.gt.any()]
    if not with_gt:
        return float("nan"), float("nan"), float("nan")
    batch = np.stack([s.image for s in with_gt]).astype(float)
    q_hat, _ = forward(pair.params_q, batch)
    c_hat, _ = forward(pair.params_c, batch)
    m_hat = ensemble(q_hat, c_hat)
    dq, dc, de = [], [], []
    for k, s in enumerate(with_gt):
        dq.append(dice_jaccard(q_hat[k] >= threshold, s.gt)[0])
        dc.append(dice_jaccard(c_hat[k] >= threshold, s.gt)[0])
        de.append(dice_jaccard(m_hat[k] >= threshold, s.gt)[0])
    return float(np.mean(dq)), float(np.mean(dc)), float(np.mean(de))


def _flip(arr: np.ndarray, horizontal: bool, vertical: bool) -> np.ndarray:
    if horizontal:
        arr = arr[:, ::-1]
    if vertical:
        arr = arr[::-1, :]
    return arr


def train(samples: list[SliceSample], config: TrainConfig,
          val_samples: list[SliceSample] | None = None):
    """Run the full schedule; returns the trained pair and per-epoch history.

    `samples` must carry supervision masks (attach_supervision is called for
    any that are missing them). Validation Dice is computed on `val_samples`
    when given, otherwise on the training slices that carry ground truth.
    """
    if not samples:
        raise EmptyDataset("no training slices")
    if any(s.q is None for s in samples):
        attach_supervision(samples)

    shapes = {s.image.shape for s in samples}
    if len(shapes) != 1:
        raise ShapeMismatch(f"mixed slice shapes in dataset: {sorted(shapes)}")

    pair = init_pair(config)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(3)[2])
    eval_samples = val_samples if val_samples is not None else samples

    images = np.stack([s.image for s in samples]).astype(float)
    q_masks = np.stack([s.q for s in samples]).astype(float)
    c_masks = np.stack([s.c for s in samples]).astype(float)
    a_masks = np.stack([s.ambiguous for s in samples]).astype(float)
    n = len(samples)

    history: list[dict] = []
    prepare_end = config.prepare_epochs
    recent_sup: list[float] = []

    for epoch in range(config.total_epochs):
        co_training = epoch >= prepare_end
        lam = config.lam if co_training else 0.0
        order = rng.permutation(n)
        sup_sum = 0.0
        con_sum = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            b_img = images[idx].copy()
            b_q = q_masks[idx].copy()
            b_c = c_masks[idx].copy()
            b_a = a_masks[idx].copy()
            if config.flip_augment:
                flips = rng.integers(0, 2, size=(len(idx), 2))
                for k in range(len(idx)):
                    fh, fv = bool(flips[k, 0]), bool(flips[k, 1])
                    for arr in (b_img, b_q, b_c, b_a):
                        arr[k] = _flip(arr[k], fh, fv)

            q_hat, cache_q = forward(pair.params_q, b_img)
            c_hat, cache_c = forward(pair.params_c, b_img)

            grad_q = np.zeros_like(q_hat)
            grad_c = np.zeros_like(c_hat)
            batch_sup = 0.0
            batch_con = 0.0
            inv_b = 1.0 / len(idx)
            for k in range(len(idx)):
                sup = supervised_loss(q_hat[k], c_hat[k], b_q[k], b_c[k])
                batch_sup += sup.value * inv_b
                grad_q[k] = sup.grad_q * inv_b
                grad_c[k] = sup.grad_c * inv_b
                if lam > 0.0:
                    region = b_a[k] if config.region_mode == REGION_AMBIGUOUS \
                        else np.ones_like(b_a[k])
                    con = consistency_loss(q_hat[k], c_hat[k], region)
                    batch_con += con.value * inv_b
                    grad_q[k] += lam * con.grad_q * inv_b
                    grad_c[k] += lam * con.grad_c * inv_b

            if not np.isfinite(batch_sup + batch_con):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch} "
                    f"(sup={batch_sup}, con={batch_con}, step={pair.step_count})"
                )

            g_q = backward(pair.params_q, cache_q, grad_q)
            g_c = backward(pair.params_c, cache_c, grad_c)
            pair.step_count += 1
            adamax_step(pair.params_q.arrays(), g_q, pair.m_q, pair.u_q,
                        pair.step_count, config.learning_rate)
            adamax_step(pair.params_c.arrays(), g_c, pair.m_c, pair.u_c,
                        pair.step_count, config.learning_rate)

            sup_sum += batch_sup
            con_sum += batch_con
            n_batches += 1

        loss_sup = sup_sum / n_batches
        loss_con = con_sum / n_batches
        vq, vc, ve = _val_dice(pair, eval_samples, config.threshold)
        history.append({
            "epoch": epoch,
            "phase": "cotrain" if co_training else "prepare",
            "loss_sup": loss_sup,
            "loss_con": loss_con,
            "val_dice_q": vq,
            "val_dice_c": vc,
            "val_dice_ens": ve,
        })

        if config.early_switch and not co_training:
            recent_sup.append(loss_sup)
            if len(recent_sup) > EARLY_SWITCH_PATIENCE:
                recent_sup.pop(0)
                if recent_sup[0] - min(recent_sup) < EARLY_SWITCH_DELTA:
                    log.info("supervised loss plateaued, switching to co-training "
                             "at epoch %d", epoch + 1)
                    prepare_end = epoch + 1

    return pair, history


HISTORY_COLUMNS = ["epoch", "phase", "loss_sup", "loss_con",
                   "val_dice_q", "val_dice_c", "val_dice_ens"]


def save_history(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow(row)
