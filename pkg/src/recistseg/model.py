"""A tiny fully-convolutional pixel scorer with hand-written backprop.

Stacked 3x3 same-padding convolutions with leaky-ReLU activations and a
final sigmoid; input and output share the spatial dims. Two independent
instances act as the under- and over-segmentation subnets. Everything runs
in float64 numpy so gradients can be checked against finite differences.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import CacheMismatch, ParseError, ShapeMismatch

KERNEL = 3
PAD = KERNEL // 2
LEAKY_SLOPE = 0.01
DEFAULT_LAYOUT = (1, 8, 8, 8, 1)


@dataclass
class SegNetParams:
    layout: tuple[int, ...]
    kernels: list[np.ndarray]  # per layer: (C_out, C_in, 3, 3)
    biases: list[np.ndarray]   # per layer: (C_out,)

    @property
    def param_count(self) -> int:
        return sum(k.size for k in self.kernels) + sum(b.size for b in self.biases)

    def arrays(self) -> list[np.ndarray]:
        """Flat list of parameter arrays in a fixed order (kernels then bias,
        layer by layer); the optimizer state mirrors this order."""
        out: list[np.ndarray] = []
        for k, b in zip(self.kernels, self.biases):
            out.append(k)
            out.append(b)
        return out


@dataclass
class SegModelPair:
    """The two subnets plus their AdaMax accumulators and the shared step count."""

    params_q: SegNetParams
    params_c: SegNetParams
    m_q: list[np.ndarray] = field(default_factory=list)
    u_q: list[np.ndarray] = field(default_factory=list)
    m_c: list[np.ndarray] = field(default_factory=list)
    u_c: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    def __post_init__(self):
        if not self.m_q:
            self.m_q = zeros_like_arrays(self.params_q)
            self.u_q = zeros_like_arrays(self.params_q)
            self.m_c = zeros_like_arrays(self.params_c)
            self.u_c = zeros_like_arrays(self.params_c)


def zeros_like_arrays(params: SegNetParams) -> list[np.ndarray]:
    return [np.zeros_like(a) for a in params.arrays()]


def init_params(seed: int, layout: tuple[int, ...] = DEFAULT_LAYOUT) -> SegNetParams:
    """Scaled-uniform (He-style) initialization, fully determined by the seed."""
    if len(layout) < 2 or layout[0] != 1 or layout[-1] != 1:
        raise ShapeMismatch(f"layout must map 1 channel to 1 channel, got {layout}")
    rng = np.random.default_rng(seed)
    kernels, biases = [], []
    for c_in, c_out in zip(layout[:-1], layout[1:]):
        fan_in = c_in * KERNEL * KERNEL
        limit = np.sqrt(6.0 / fan_in)
        kernels.append(rng.uniform(-limit, limit, size=(c_out, c_in, KERNEL, KERNEL)))
        biases.append(np.zeros(c_out))
    return SegNetParams(tuple(layout), kernels, biases)


def _conv_same(x: np.ndarray, k: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 same-padding cross-correlation on a (B, C, H, W) batch.

    Returns (output, padded input); the padded input is cached for backward.
    """
    xp = np.pad(x, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))  # (B,C,H,W,3,3)
    z = np.einsum("bchwuv,ocuv->bohw", win, k, optimize=True)
    z += b[None, :, None, None]
    return z, xp


def forward(params: SegNetParams, image: np.ndarray):
    """Run the net on one (H, W) slice or a (B, H, W) batch.

    Returns the probability map(s) with the same spatial dims plus the
    activation cache required by backward().
    """
    img = np.asarray(image, dtype=float)
    single = img.ndim == 2
    if single:
        img = img[None]
    if img.ndim != 3:
        raise ShapeMismatch(f"expected (H, W) or (B, H, W), got {img.shape}")
    if img.shape[1] < KERNEL or img.shape[2] < KERNEL:
        raise ShapeMismatch(f"image {img.shape[1:]} smaller than the kernel footprint")

    x = img[:, None]  # (B, 1, H, W)
    padded_inputs: list[np.ndarray] = []
    zs: list[np.ndarray] = []
    n_layers = len(params.kernels)
    for li, (k, b) in enumerate(zip(params.kernels, params.biases)):
        z, xp = _conv_same(x, k, b)
        padded_inputs.append(xp)
        zs.append(z)
        if li < n_layers - 1:
            x = np.where(z > 0, z, LEAKY_SLOPE * z)
        else:
            x = 1.0 / (1.0 + np.exp(-z))
    prob = x[:, 0]
    cache = {
        "layout": params.layout,
        "padded_inputs": padded_inputs,
        "zs": zs,
        "prob": prob,
        "single": single,
    }
    return (prob[0] if single else prob), cache


def backward(params: SegNetParams, cache: dict, grad_prob: np.ndarray) -> list[np.ndarray]:
    """Exact parameter gradients of a scalar loss given d(loss)/d(prob).

    The returned list mirrors SegNetParams.arrays().
    """
    if cache.get("layout") != params.layout:
        raise CacheMismatch("cache built for a different layout")
    g = np.asarray(grad_prob, dtype=float)
    if cache["single"]:
        g = g[None]
    prob = cache["prob"]
    if g.shape != prob.shape:
        raise CacheMismatch(f"grad_prob shape {g.shape} != prob shape {prob.shape}")

    # sigmoid head
    dz = (g * prob * (1.0 - prob))[:, None]  # (B, 1, H, W)

    grads_k: list[np.ndarray] = []
    grads_b: list[np.ndarray] = []
    h, w = prob.shape[1:]
    for li in range(len(params.kernels) - 1, -1, -1):
        xp = cache["padded_inputs"][li]
        win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))
        dk = np.einsum("bohw,bchwuv->ocuv", dz, win, optimize=True)
        db = dz.sum(axis=(0, 2, 3))
        grads_k.append(dk)
        grads_b.append(db)
        if li == 0:
            break
        k = params.kernels[li]
        dxp = np.zeros_like(xp)
        for u in range(KERNEL):
            for v in range(KERNEL):
                dxp[:, :, u:u + h, v:v + w] += np.einsum(
                    "bohw,oc->bchw", dz, k[:, :, u, v], optimize=True
                )
        dx = dxp[:, :, PAD:-PAD, PAD:-PAD]
        z_prev = cache["zs"][li - 1]
        dz = dx * np.where(z_prev > 0, 1.0, LEAKY_SLOPE)

    grads_k.reverse()
    grads_b.reverse()
    out: list[np.ndarray] = []
    for dk, db in zip(grads_k, grads_b):
        out.append(dk)
        out.append(db)
    return out


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, pair: SegModelPair) -> None:
    """Bit-exact dump of both subnets, optimizer state, and step count."""
    payload = {
        "version": np.array(CHECKPOINT_VERSION),
        "layout": np.array(pair.params_q.layout),
        "step_count": np.array(pair.step_count),
    }
    for tag, arrays in (
        ("pq", pair.params_q.arrays()),
        ("pc", pair.params_c.arrays()),
        ("mq", pair.m_q),
        ("uq", pair.u_q),
        ("mc", pair.m_c),
        ("uc", pair.u_c),
    ):
        for i, a in enumerate(arrays):
            payload[f"{tag}_{i:03d}"] = a
    with open(path, "wb") as f:
        np.savez(f, **payload)


def _params_from_arrays(layout: tuple[int, ...], arrays: list[np.ndarray]) -> SegNetParams:
    kernels = arrays[0::2]
    biases = arrays[1::2]
    return SegNetParams(layout, kernels, biases)


def load_checkpoint(path) -> SegModelPair:
    try:
        handle = np.load(path)
    except (OSError, ValueError) as e:
        raise ParseError(f"cannot read checkpoint {path}: {e}") from None
    with handle as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise CacheMismatch(f"unsupported checkpoint version {version}")
        layout = tuple(int(c) for c in data["layout"])
        n = 2 * (len(layout) - 1)

        def grab(tag):
            return [data[f"{tag}_{i:03d}"] for i in range(n)]

        pair = SegModelPair(
            params_q=_params_from_arrays(layout, grab("pq")),
            params_c=_params_from_arrays(layout, grab("pc")),
            m_q=grab("mq"),
            u_q=grab("uq"),
            m_c=grab("mc"),
            u_c=grab("uc"),
            step_count=int(data["step_count"]),
        )
    return pair
