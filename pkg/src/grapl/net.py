"""Small patch classifier with hand-derived gradients.

Architecture (applied per patch): input dropout, 3x3 unpadded conv (32
filters), batch norm, tanh, dropout, 3x3 unpadded conv (8 filters), batch
norm, tanh, dropout, dense head, softmax. Dropout is inverted (survivors
scaled by 1/keep) so evaluation reuses the same code path with identity
masks; evaluation also switches batch norm to its running statistics.

The same parameters drive two entry points: `forward_patches` classifies the
batch of grid patches, and `forward_full` slides the classifier over a whole
image by running the convolutions once and applying the dense head as one
more convolution, which reproduces the per-patch logits at every location.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .imagegrid import Image

BN_EPS = 1e-5

TRAINABLE = (
    "conv1_w", "conv1_b", "bn1_gamma", "bn1_beta",
    "conv2_w", "conv2_b", "bn2_gamma", "bn2_beta",
    "head_w", "head_b",
)


@dataclass
class NetworkParams:
    """All learnable tensors plus batch-norm running statistics."""

    conv1_w: np.ndarray  # (3, 3, c, 32)
    conv1_b: np.ndarray
    bn1_gamma: np.ndarray
    bn1_beta: np.ndarray
    bn1_mean: np.ndarray
    bn1_var: np.ndarray
    conv2_w: np.ndarray  # (3, 3, 32, 8)
    conv2_b: np.ndarray
    bn2_gamma: np.ndarray
    bn2_beta: np.ndarray
    bn2_mean: np.ndarray
    bn2_var: np.ndarray
    head_w: np.ndarray   # ((ph-4)*(pw-4)*8, k0)
    head_b: np.ndarray
    patch_h: int
    patch_w: int
    channels: int
    k0: int
    dropout_rate: float = 0.2
    rng_seed: int = 0
    bn_momentum: float = 0.1

    def validate(self) -> None:
        fh, fw = self.patch_h - 4, self.patch_w - 4
        if self.head_w.shape != (fh * fw * 8, self.k0):
            raise ValueError("head shape inconsistent with patch shape and k0")
        if (self.bn1_var <= 0).any() or (self.bn2_var <= 0).any():
            raise ValueError("running variances must stay positive")
        for name in TRAINABLE:
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"non-finite values in {name}")

    def trainable(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TRAINABLE}


def init_params(patch_h: int, patch_w: int, channels: int, k0: int,
                seed: int = 0, dropout_rate: float = 0.2,
                dtype=np.float64) -> NetworkParams:
    """Kaiming-uniform weights (fan-in), zero biases, identity batch norm.

    All forward/backward arithmetic follows this dtype; float32 roughly
    halves the memory traffic of a training step on large grids.
    """
    if patch_h < 5 or patch_w < 5:
        raise ValueError("patch must be at least 5x5")
    rng = np.random.default_rng(seed)

    def kaiming(shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    def zeros(*shape):
        return np.zeros(shape, dtype=dtype)

    def ones(*shape):
        return np.ones(shape, dtype=dtype)

    fh, fw = patch_h - 4, patch_w - 4
    return NetworkParams(
        conv1_w=kaiming((3, 3, channels, 32), 9 * channels),
        conv1_b=zeros(32),
        bn1_gamma=ones(32), bn1_beta=zeros(32),
        bn1_mean=zeros(32), bn1_var=ones(32),
        conv2_w=kaiming((3, 3, 32, 8), 9 * 32),
        conv2_b=zeros(8),
        bn2_gamma=ones(8), bn2_beta=zeros(8),
        bn2_mean=zeros(8), bn2_var=ones(8),
        head_w=kaiming((fh * fw * 8, k0), fh * fw * 8),
        head_b=zeros(k0),
        patch_h=patch_h, patch_w=patch_w, channels=channels, k0=k0,
        dropout_rate=dropout_rate, rng_seed=seed,
    )


# ---------------------------------------------------------------------------
# primitive layers
#
# Valid convolutions avoid materializing a full im2col matrix where that
# matrix would dwarf the activations (memory traffic, not FLOPs, bounds
# these layers): wide-channel convolutions run as kh*kw shifted channel
# matmuls, narrow ones (the image-input layer) take the small im2col path.

_IM2COL_MAX_COLS = 64


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    # window axes are appended: (N, OH, OW, C, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    oh, ow = h - kh + 1, wd - kw + 1
    if kh * kw * cin <= _IM2COL_MAX_COLS:
        cols = _im2col(x, kh, kw).reshape(n * oh * ow, kh * kw * cin)
        out = (cols @ w.reshape(-1, cout)).reshape(n, oh, ow, cout)
        out += b
        return out
    x_flat = np.ascontiguousarray(x).reshape(n * h * wd, cin)
    out = np.zeros((n, oh, ow, cout), dtype=x.dtype)
    for di in range(kh):
        for dj in range(kw):
            z = (x_flat @ w[di, dj]).reshape(n, h, wd, cout)
            out += z[:, di:di + oh, dj:dj + ow, :]
    out += b
    return out


def conv_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray,
                  need_dx: bool = True):
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    oh, ow = dout.shape[1], dout.shape[2]
    dout_flat = dout.reshape(n * oh * ow, cout)
    db = dout.sum(axis=(0, 1, 2))
    dx = np.zeros_like(x) if need_dx else None

    if kh * kw * cin <= _IM2COL_MAX_COLS:
        cols = _im2col(x, kh, kw).reshape(n * oh * ow, kh * kw * cin)
        dw = (cols.T @ dout_flat).reshape(w.shape)
        if need_dx:
            dcols = (dout_flat @ w.reshape(-1, cout).T).reshape(
                n, oh, ow, kh, kw, cin)
            for di in range(kh):
                for dj in range(kw):
                    dx[:, di:di + oh, dj:dj + ow, :] += dcols[:, :, :, di, dj, :]
        return dx, dw, db

    x_flat = np.ascontiguousarray(x).reshape(n * h * wd, cin)
    dw = np.empty_like(w)
    dpad = np.zeros((n, h, wd, cout), dtype=dout.dtype)
    for di in range(kh):
        for dj in range(kw):
            dpad[...] = 0.0
            dpad[:, di:di + oh, dj:dj + ow, :] = dout
            dw[di, dj] = x_flat.T @ dpad.reshape(n * h * wd, cout)
            if need_dx:
                contrib = (dout_flat @ w[di, dj].T).reshape(n, oh, ow, cin)
                dx[:, di:di + oh, dj:dj + ow, :] += contrib
    return dx, dw, db


def _bn_forward_train(x, gamma, beta):
    c = x.shape[-1]
    m = x.size // c
    x2 = x.reshape(m, c)
    mean = x2.mean(axis=0)
    xhat = x2 - mean
    var = np.einsum("nc,nc->c", xhat, xhat) / m
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat *= inv_std
    xhat = xhat.reshape(x.shape)
    return gamma * xhat + beta, (xhat, inv_std, gamma), mean, var


def _bn_backward(dout, cache):
    xhat, inv_std, gamma = cache
    m = dout.size // dout.shape[-1]
    d2 = dout.reshape(m, -1)
    x2 = xhat.reshape(m, -1)
    dgamma = np.einsum("nc,nc->c", d2, x2)
    dbeta = d2.sum(axis=0)
    # dx = gamma*inv_std/m * (m*dout - dbeta - xhat*dgamma)
    dx = dout - (dbeta + xhat * dgamma) / m
    dx *= gamma * inv_std
    return dx, dgamma, dbeta


def _bn_eval_affine(gamma, beta, mean, var):
    scale = gamma / np.sqrt(var + BN_EPS)
    return scale, beta - mean * scale


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _draw_masks(params: NetworkParams, n: int, rng: np.random.Generator):
    """Inverted-dropout masks for one training pass (input, post-bn1, post-bn2)."""
    keep = 1.0 - params.dropout_rate
    ph, pw, c = params.patch_h, params.patch_w, params.channels
    dtype = params.conv1_w.dtype
    draw_dtype = np.float32 if dtype == np.float32 else np.float64

    def draw(shape):
        mask = rng.random(shape, dtype=draw_dtype) < keep
        return (mask / np.asarray(keep, dtype)).astype(dtype, copy=False)

    return (
        draw((n, ph, pw, c)),
        draw((n, ph - 2, pw - 2, 32)),
        draw((n, ph - 4, pw - 4, 8)),
    )


def _forward(params: NetworkParams, patches: np.ndarray, mode: str,
             masks=None, rng: np.random.Generator | None = None,
             update_running: bool = True):
    """Shared forward pass; returns (probs, cache) with everything backward needs."""
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    x = np.asarray(patches, dtype=params.conv1_w.dtype)
    if x.ndim != 4 or x.shape[1:] != (params.patch_h, params.patch_w, params.channels):
        raise ValueError("patch batch shape does not match the network")
    n = x.shape[0]

    if mode == "train":
        if masks is None:
            if rng is None:
                rng = np.random.default_rng(params.rng_seed)
            masks = _draw_masks(params, n, rng)
        m0, m1, m2 = masks
        x0 = x * m0
    else:
        m0 = m1 = m2 = None
        x0 = x

    z1 = conv_forward(x0, params.conv1_w, params.conv1_b)
    if mode == "train":
        y1, bn1_cache, mean1, var1 = _bn_forward_train(z1, params.bn1_gamma,
                                                       params.bn1_beta)
        if update_running:
            mom = params.bn_momentum
            params.bn1_mean += mom * (mean1 - params.bn1_mean)
            params.bn1_var += mom * (var1 - params.bn1_var)
    else:
        scale, shift = _bn_eval_affine(params.bn1_gamma, params.bn1_beta,
                                       params.bn1_mean, params.bn1_var)
        y1, bn1_cache = z1 * scale + shift, None
    a1 = np.tanh(y1)
    d1 = a1 * m1 if mode == "train" else a1

    z2 = conv_forward(d1, params.conv2_w, params.conv2_b)
    if mode == "train":
        y2, bn2_cache, mean2, var2 = _bn_forward_train(z2, params.bn2_gamma,
                                                       params.bn2_beta)
        if update_running:
            mom = params.bn_momentum
            params.bn2_mean += mom * (mean2 - params.bn2_mean)
            params.bn2_var += mom * (var2 - params.bn2_var)
    else:
        scale, shift = _bn_eval_affine(params.bn2_gamma, params.bn2_beta,
                                       params.bn2_mean, params.bn2_var)
        y2, bn2_cache = z2 * scale + shift, None
    a2 = np.tanh(y2)
    d2 = a2 * m2 if mode == "train" else a2

    flat = d2.reshape(n, -1)
    logits = flat @ params.head_w + params.head_b
    probs = softmax(logits)
    cache = {
        "x0": x0, "m0": m0, "m1": m1, "m2": m2,
        "bn1": bn1_cache, "a1": a1, "d1": d1,
        "bn2": bn2_cache, "a2": a2, "flat": flat,
        "probs": probs, "logits": logits, "n": n,
    }
    return probs, cache


def forward_patches(params: NetworkParams, patches: np.ndarray,
                    mode: str = "eval", rng: np.random.Generator | None = None
                    ) -> np.ndarray:
    """Per-patch class probabilities; rows sum to 1."""
    probs, _ = _forward(params, patches, mode, rng=rng)
    return probs


@dataclass(frozen=True)
class LossBreakdown:
    cross_entropy: float
    continuity: float
    total: float
    mu: float
    n_patches: int

    def __post_init__(self):
        if abs(self.total - (self.cross_entropy + self.mu * self.continuity)) > 1e-9:
            raise ValueError("loss decomposition inconsistent")

    @property
    def mean_cross_entropy(self) -> float:
        return self.cross_entropy / self.n_patches


def _continuity_and_grad(probs: np.ndarray, d: int):
    """L1 discrepancy between grid-neighboring outputs (up and left edges)."""
    k = probs.shape[1]
    s = probs.reshape(d, d, k)
    dv = s[1:, :, :] - s[:-1, :, :]
    dh = s[:, 1:, :] - s[:, :-1, :]
    value = np.abs(dv).sum() + np.abs(dh).sum()
    g = np.zeros_like(s)
    sv = np.sign(dv)
    g[1:, :, :] += sv
    g[:-1, :, :] -= sv
    sh = np.sign(dh)
    g[:, 1:, :] += sh
    g[:, :-1, :] -= sh
    return float(value), g.reshape(-1, k)


def loss_and_gradients(params: NetworkParams, patches: np.ndarray,
                       targets: np.ndarray, grid_d: int, mu: float,
                       mode: str = "train",
                       rng: np.random.Generator | None = None,
                       masks=None, update_running: bool = True):
    """Summed cross entropy against the targets plus weighted continuity,
    with gradients for every trainable tensor.

    `targets` is an (n, k0) matrix of distributions (one-hot rows for hard
    pseudo-labels, soft rows at initialization).
    """
    probs, cache = _forward(params, patches, mode, masks=masks, rng=rng,
                            update_running=update_running)
    targets = np.asarray(targets, dtype=probs.dtype)
    n = cache["n"]
    if targets.shape != probs.shape:
        raise ValueError("target shape does not match network output")

    tiny = np.finfo(probs.dtype).tiny
    ce = float(-(targets.astype(np.float64)
                 * np.log(np.maximum(probs, tiny).astype(np.float64))).sum())
    cont, dcont_dprobs = _continuity_and_grad(probs, grid_d)
    loss = LossBreakdown(cross_entropy=ce, continuity=cont,
                         total=ce + mu * cont, mu=mu, n_patches=n)

    # cross-entropy through softmax collapses to probs - targets;
    # the continuity term needs the full softmax Jacobian
    dlogits = probs - targets
    if mu != 0.0:
        g = mu * dcont_dprobs
        dlogits += probs * (g - (g * probs).sum(axis=1, keepdims=True))

    grads = {}
    grads["head_w"] = cache["flat"].T @ dlogits
    grads["head_b"] = dlogits.sum(axis=0)
    dflat = dlogits @ params.head_w.T
    dd2 = dflat.reshape(n, params.patch_h - 4, params.patch_w - 4, 8)

    da2 = dd2 * cache["m2"] if mode == "train" else dd2
    dy2 = da2 * (1.0 - cache["a2"] ** 2)
    if mode == "train":
        dz2, grads["bn2_gamma"], grads["bn2_beta"] = _bn_backward(dy2, cache["bn2"])
    else:
        scale, _ = _bn_eval_affine(params.bn2_gamma, params.bn2_beta,
                                   params.bn2_mean, params.bn2_var)
        dz2 = dy2 * scale
        grads["bn2_gamma"] = np.zeros_like(params.bn2_gamma)
        grads["bn2_beta"] = np.zeros_like(params.bn2_beta)
    dd1, grads["conv2_w"], grads["conv2_b"] = conv_backward(
        cache["d1"], params.conv2_w, dz2)

    da1 = dd1 * cache["m1"] if mode == "train" else dd1
    dy1 = da1 * (1.0 - cache["a1"] ** 2)
    if mode == "train":
        dz1, grads["bn1_gamma"], grads["bn1_beta"] = _bn_backward(dy1, cache["bn1"])
    else:
        scale, _ = _bn_eval_affine(params.bn1_gamma, params.bn1_beta,
                                   params.bn1_mean, params.bn1_var)
        dz1 = dy1 * scale
        grads["bn1_gamma"] = np.zeros_like(params.bn1_gamma)
        grads["bn1_beta"] = np.zeros_like(params.bn1_beta)
    _, grads["conv1_w"], grads["conv1_b"] = conv_backward(
        cache["x0"], params.conv1_w, dz1, need_dx=False)

    return loss, grads


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: NetworkParams, grads: dict[str, np.ndarray],
              state: AdamState) -> NetworkParams:
    """One bias-corrected Adam update, applied in place. Running batch-norm
    statistics are not touched."""
    state.step += 1
    t = state.step
    for name in TRAINABLE:
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        mhat = m / (1.0 - state.beta1 ** t)
        vhat = v / (1.0 - state.beta2 ** t)
        getattr(params, name)[...] -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params


# ---------------------------------------------------------------------------
# full-image fully-convolutional pass

def conv_forward_chunked(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                         row_block: int = 64) -> np.ndarray:
    """Valid convolution over a large map, processed in row blocks to bound
    the transient patch-matrix memory."""
    kh, kw, cin, cout = w.shape
    n, h, wd = x.shape[:3]
    oh, ow = h - kh + 1, wd - kw + 1
    out = np.empty((n, oh, ow, cout))
    for r0 in range(0, oh, row_block):
        r1 = min(r0 + row_block, oh)
        out[:, r0:r1] = conv_forward(x[:, r0:r1 + kh - 1], w, b)
    return out


def forward_full(params: NetworkParams, image: Image) -> np.ndarray:
    """Dense-head logits at every patch location of the image.

    Output shape is (H - patch_h + 1, W - patch_w + 1, k0); entry (i, j)
    equals the classifier logits for the patch whose top-left corner is
    (i, j). Evaluation statistics only.
    """
    if image.height < params.patch_h or image.width < params.patch_w:
        raise ValueError("image is smaller than one patch")
    if image.channels != params.channels:
        raise ValueError("channel count does not match the network")
    x = image.data.astype(params.conv1_w.dtype, copy=False)[None, ...]

    scale1, shift1 = _bn_eval_affine(params.bn1_gamma, params.bn1_beta,
                                     params.bn1_mean, params.bn1_var)
    a1 = np.tanh(conv_forward_chunked(x, params.conv1_w, params.conv1_b)
                 * scale1 + shift1)
    scale2, shift2 = _bn_eval_affine(params.bn2_gamma, params.bn2_beta,
                                     params.bn2_mean, params.bn2_var)
    a2 = np.tanh(conv_forward_chunked(a1, params.conv2_w, params.conv2_b)
                 * scale2 + shift2)

    fh, fw = params.patch_h - 4, params.patch_w - 4
    head_kernel = params.head_w.reshape(fh, fw, 8, params.k0)
    logits = conv_forward_chunked(a2, head_kernel, params.head_b, row_block=32)
    return logits[0]


# ---------------------------------------------------------------------------
# checkpoint format ("GPLW": magic, u32 version, shape table, f32 tensors)

GPLW_MAGIC = b"GPLW"
GPLW_VERSION = 1

_META_FIELDS = ("patch_h", "patch_w", "channels", "k0", "rng_seed")
_ALL_TENSORS = TRAINABLE + ("bn1_mean", "bn1_var", "bn2_mean", "bn2_var")


def save_params(params: NetworkParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sI", GPLW_MAGIC, GPLW_VERSION))
        fh.write(struct.pack("<5I", *(getattr(params, f) for f in _META_FIELDS)))
        fh.write(struct.pack("<f", params.dropout_rate))
        fh.write(struct.pack("<I", len(_ALL_TENSORS)))
        for name in _ALL_TENSORS:
            arr = getattr(params, name)
            enc = name.encode()
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes())


def load_params(path) -> NetworkParams:
    path = Path(path)
    raw = path.read_bytes()
    off = 0

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals

    magic, version = take("<4sI")
    if magic != GPLW_MAGIC or version != GPLW_VERSION:
        raise FormatError(f"not a supported checkpoint: {path}")
    meta = dict(zip(_META_FIELDS, take("<5I")))
    dropout_rate = take("<f")[0]
    (n_tensors,) = take("<I")
    tensors = {}
    for _ in range(n_tensors):
        (name_len,) = take("<H")
        name = raw[off:off + name_len].decode()
        off += name_len
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I")
        count = int(np.prod(shape))
        tensors[name] = np.frombuffer(raw, dtype="<f4", count=count,
                                      offset=off).astype(np.float64).reshape(shape)
        off += 4 * count
    missing = set(_ALL_TENSORS) - set(tensors)
    if missing:
        raise FormatError(f"checkpoint missing tensors: {sorted(missing)}")
    params = NetworkParams(**tensors, **meta, dropout_rate=float(dropout_rate))
    try:
        params.validate()
    except ValueError as exc:
        raise FormatError(f"invalid checkpoint: {exc}") from exc
    return params
