"""VGG-style convolutional regressor with auxiliary-feature injection.

Layout is NCHW. Parameters are a plain ``dict`` of arrays keyed by layer name:

* ``g{i}c{j}.W`` (F, C, 3, 3) and ``g{i}c{j}.b`` (F,) for conv ``j`` of group ``i``
* ``d{k}.W`` (out, in) and ``d{k}.b`` for the hidden dense layers
* ``out.W`` (1, D + A) and ``out.b`` for the linear head

Each conv group is ``convs_per_group`` x (3x3 conv, ReLU) followed by a 2x2
max-pool. The flattened features go through the ReLU dense stack; the last
hidden output (width D) is concatenated with the standardized aux vector
(width A) before the linear head.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

Params = Dict[str, np.ndarray]


class NumericError(FloatingPointError):
    """Non-finite values in activations, losses or gradients."""


@dataclass(frozen=True)
class NetworkConfig:
    input_side: int = 64
    conv_groups: Tuple[Tuple[int, int], ...] = ((8, 2), (16, 2), (32, 2), (64, 2))
    dense_widths: Tuple[int, ...] = (128, 64)
    aux_dim: int = 1
    output_dim: int = 1
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "conv_groups", tuple((int(f), int(n)) for f, n in self.conv_groups))
        object.__setattr__(self, "dense_widths", tuple(int(d) for d in self.dense_widths))
        if not self.conv_groups or not self.dense_widths:
            raise ValueError("need at least one conv group and one dense layer")
        counts = [self.input_side, self.output_dim, self.in_channels, *self.dense_widths]
        counts += [c for g in self.conv_groups for c in g]
        if min(counts) < 1 or self.aux_dim < 0:
            raise ValueError(f"layer counts must be >= 1 (aux_dim >= 0): {self}")
        if self.input_side % (2 ** len(self.conv_groups)):
            raise ValueError(f"input_side {self.input_side} not divisible by 2^{len(self.conv_groups)}")

    @property
    def flat_dim(self) -> int:
        side = self.input_side >> len(self.conv_groups)
        return self.conv_groups[-1][0] * side * side

    @property
    def penultimate_width(self) -> int:
        return self.dense_widths[-1]

    def describe(self) -> str:
        groups = ",".join(f"{f}x{n}" for f, n in self.conv_groups)
        dense = ",".join(str(d) for d in self.dense_widths)
        return (f"input={self.input_side};channels={self.in_channels};groups={groups};"
                f"dense={dense};aux={self.aux_dim};out={self.output_dim}")

    def digest(self) -> bytes:
        return hashlib.sha256(self.describe().encode("ascii")).digest()

    def layer_shapes(self) -> List[Tuple[str, tuple, tuple]]:
        """(prefix, weight shape, bias shape) in forward order."""
        shapes = []
        c = self.in_channels
        for i, (filters, n) in enumerate(self.conv_groups):
            for j in range(n):
                shapes.append((f"g{i}c{j}", (filters, c, 3, 3), (filters,)))
                c = filters
        width = self.flat_dim
        for k, d in enumerate(self.dense_widths):
            shapes.append((f"d{k}", (d, width), (d,)))
            width = d
        shapes.append(("out", (self.output_dim, width + self.aux_dim), (self.output_dim,)))
        return shapes


DESK_CONFIG = NetworkConfig()
# 400 = 16 * 25 admits four 2x pools, not five
FULL_CONFIG = NetworkConfig(input_side=400,
                             conv_groups=((32, 2), (64, 2), (128, 3), (256, 3)),
                             dense_widths=(1024, 256))


def glorot_bound(n_in: int, n_out: int) -> float:
    return float(np.sqrt(6.0 / (n_in + n_out)))


def glorot_init(n_in: int, n_out: int, rng: np.random.Generator, shape=None,
                dtype=np.float64) -> np.ndarray:
    """Uniform(-b, b) with b = sqrt(6 / (n_in + n_out)); endpoints excluded."""
    if n_in < 1 or n_out < 1:
        raise ValueError("fan-in and fan-out must be >= 1")
    shape = (n_out, n_in) if shape is None else tuple(shape)
    b = glorot_bound(n_in, n_out)
    w = rng.uniform(-b, b, size=shape)
    bad = np.abs(w) >= b
    while bad.any():
        w[bad] = rng.uniform(-b, b, size=int(bad.sum()))
        bad = np.abs(w) >= b
    return w.astype(dtype)


def init_params(cfg: NetworkConfig, rng: np.random.Generator, dtype=np.float64) -> Params:
    params = {}
    for name, wshape, bshape in cfg.layer_shapes():
        if len(wshape) == 4:
            recept = wshape[2] * wshape[3]
            n_in, n_out = wshape[1] * recept, wshape[0] * recept
        else:
            n_out, n_in = wshape
        params[f"{name}.W"] = glorot_init(n_in, n_out, rng, wshape, dtype)
        params[f"{name}.b"] = np.zeros(bshape, dtype=dtype)
    return params


def check_params(cfg: NetworkConfig, params: Params) -> None:
    expected = {}
    for name, wshape, bshape in cfg.layer_shapes():
        expected[f"{name}.W"] = wshape
        expected[f"{name}.b"] = bshape
    if set(params) != set(expected):
        raise ValueError(f"parameter names do not match config: {sorted(set(params) ^ set(expected))}")
    for k, shape in expected.items():
        if params[k].shape != shape:
            raise ValueError(f"{k}: shape {params[k].shape}, config expects {shape}")


# -- layers -----------------------------------------------------------------

def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 cross-correlation, stride 1, zero padding 1."""
    return conv2d_forward(x, w, b)[0]


def _im2col(x):
    """(N, C, H, W) -> (N, C*9, H*W), taps ordered (c, ky, kx) like the kernel."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, 9, h, w), dtype=x.dtype)
    for k in range(9):
        i, j = divmod(k, 3)
        cols[:, :, k] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(n, c * 9, h * w)


def conv2d_forward(x, w, b):
    if x.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3) or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
    if b.shape != (w.shape[0],):
        raise ValueError(f"conv2d bias shape {b.shape} for kernel {w.shape}")
    n, _, h, wd = x.shape
    cols = _im2col(x)
    out = np.matmul(w.reshape(w.shape[0], -1), cols)  # N, F, H*W
    out += b[:, None]
    return out.reshape(n, w.shape[0], h, wd), (x.shape, cols, w)


def conv2d_backward(dout, cache):
    shape, cols, w = cache
    n, c, h, wd = shape
    f = w.shape[0]
    d2 = dout.reshape(n, f, h * wd)
    dw = np.matmul(d2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = d2.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(f, -1).T, d2).reshape(n, c, 9, h, wd)
    dxp = np.zeros((n, c, h + 2, wd + 2), dtype=dout.dtype)
    for k in range(9):
        i, j = divmod(k, 3)
        dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, k]
    return dxp[:, :, 1:-1, 1:-1], dw, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dout, x):
    # subgradient at exactly 0 is 0
    return dout * (x > 0)


def maxpool2(x: np.ndarray) -> np.ndarray:
    return maxpool2_forward(x)[0]


def maxpool2_forward(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)  # first max in row-major window order
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx)


def maxpool2_backward(dout, cache):
    shape, idx = cache
    n, c, h, w = shape
    win = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(win, idx[..., None], dout[..., None], axis=-1)
    return win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = W x + b for a vector, or row-wise for a (N, in) batch."""
    if x.shape[-1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ValueError(f"dense shape mismatch: x {x.shape}, W {w.shape}, b {b.shape}")
    return x @ w.T + b


def dense_backward(dout, x, w):
    """Gradients for a (N, out) upstream; returns dx, dW = dout^T x, db."""
    return dout @ w, dout.T @ x, dout.sum(axis=0)


# -- network ----------------------------------------------------------------

@dataclass
class ForwardCache:
    params: Params
    steps: list
    batch: int


def forward(cfg: NetworkConfig, params: Params, images: np.ndarray,
            aux: Optional[np.ndarray] = None) -> Tuple[np.ndarray, ForwardCache]:
    """Predictions (N,) for images (N, C, S, S) in [0, 1] and aux (N, A)."""
    # overflow surfaces as NumericError below rather than as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward(cfg, params, images, aux)


def _forward(cfg, params, images, aux):
    n = images.shape[0]
    if images.shape[1:] != (cfg.in_channels, cfg.input_side, cfg.input_side):
        raise ValueError(f"images {images.shape} do not match config input "
                         f"({cfg.in_channels}, {cfg.input_side}, {cfg.input_side})")
    if aux is None:
        aux = np.zeros((n, 0))
    aux = np.asarray(aux).reshape(n, -1)
    if aux.shape[1] != cfg.aux_dim:
        raise ValueError(f"aux width {aux.shape[1]} != aux_dim {cfg.aux_dim}")
    dtype = params["out.W"].dtype
    h = images.astype(dtype, copy=False)
    steps = []
    for i, (_, convs) in enumerate(cfg.conv_groups):
        for j in range(convs):
            name = f"g{i}c{j}"
            z, cc = conv2d_forward(h, params[f"{name}.W"], params[f"{name}.b"])
            steps.append(("conv", name, cc))
            h = relu(z)
            steps.append(("relu", None, z))
        h, pc = maxpool2_forward(h)
        steps.append(("pool", None, pc))
    steps.append(("flatten", None, h.shape))
    h = h.reshape(n, -1)
    for k in range(len(cfg.dense_widths)):
        name = f"d{k}"
        z = dense(h, params[f"{name}.W"], params[f"{name}.b"])
        steps.append(("dense", name, h))
        h = relu(z)
        steps.append(("relu", None, z))
    if cfg.aux_dim:
        steps.append(("concat", None, h.shape[1]))
        h = np.concatenate([h, aux.astype(dtype, copy=False)], axis=1)
    pred = dense(h, params["out.W"], params["out.b"])
    steps.append(("dense", "out", h))
    if not np.all(np.isfinite(pred)):
        raise NumericError("non-finite network output")
    return pred[:, 0] if cfg.output_dim == 1 else pred, ForwardCache(params, steps, n)


def backward(cfg: NetworkConfig, params: Params, cache: ForwardCache,
             loss_grad: np.ndarray) -> Params:
    """Exact parameter gradients given dLoss/dPrediction."""
    if cache.params is not params and any(cache.params[k] is not params[k] for k in params):
        raise ValueError("stale cache: parameters changed since forward")
    dtype = params["out.W"].dtype
    g = np.asarray(loss_grad, dtype=dtype).reshape(cache.batch, cfg.output_dim)
    grads = {}
    for kind, name, saved in reversed(cache.steps):
        if kind == "dense":
            g, grads[f"{name}.W"], grads[f"{name}.b"] = dense_backward(g, saved, params[f"{name}.W"])
        elif kind == "concat":
            g = g[:, :saved]  # aux inputs are data; their gradient is dropped
        elif kind == "relu":
            g = relu_backward(g, saved)
        elif kind == "flatten":
            g = g.reshape(saved)
        elif kind == "pool":
            g = maxpool2_backward(g, saved)
        elif kind == "conv":
            g, grads[f"{name}.W"], grads[f"{name}.b"] = conv2d_backward(g, saved)
    return {k: grads[k] for k in params}


def mse_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"pred {pred.shape} vs target {target.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    diff = pred - target
    loss = float(np.mean(diff ** 2))
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    return loss, 2.0 * diff / diff.size


@dataclass(frozen=True)
class AuxScaler:
    """Per-column z-scoring with statistics from the training fold."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values) -> "AuxScaler":
        v = np.asarray(values, dtype=np.float64)
        v = v.reshape(v.shape[0], -1)
        std = v.std(axis=0)
        # a constant column carries no information; keep it finite
        std = np.where(std > 0, std, 1.0)
        return cls(v.mean(axis=0), std)

    def transform(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        return (v.reshape(v.shape[0], -1) - self.mean) / self.std


def zero_like(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def param_count(params: Params) -> int:
    return int(sum(v.size for v in params.values()))


def images_to_batch(images: Sequence) -> np.ndarray:
    """Stack (H, W, C) uint8 arrays into (N, C, H, W) float64 in [0, 1]."""
    arr = np.stack([np.asarray(getattr(im, "pixels", im)) for im in images])
    return arr.transpose(0, 3, 1, 2).astype(np.float64) / 255.0
