"""Learned V2 stage: conv -> relu -> L2 pooling -> output normalization.

Convolutions are valid-region cross-correlations computed with real FFTs on
the input grid; a ``k``x``k`` kernel never wraps for the valid outputs, so the
circular product is exact there.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BN_EPS = 1e-5
POOL_EPS = 1e-12
ORTH_TOL = 1e-10


@dataclass
class V2Params:
    theta: np.ndarray  # (D, C, k, k)
    running_mean: np.ndarray = None
    running_var: np.ndarray = None
    momentum: float = 0.1
    step: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 4 or self.theta.shape[2] != self.theta.shape[3]:
            raise ValueError(f"theta must be (D, C, k, k), got {self.theta.shape}")
        d = self.theta.shape[0]
        if self.running_mean is None:
            self.running_mean = np.zeros(d)
        if self.running_var is None:
            self.running_var = np.ones(d)
        self.running_mean = np.asarray(self.running_mean, dtype=np.float64)
        self.running_var = np.asarray(self.running_var, dtype=np.float64)
        if self.running_mean.shape != (d,) or self.running_var.shape != (d,):
            raise ValueError("normalization state must have one entry per filter")
        if not np.all(np.isfinite(self.theta)):
            raise ValueError("non-finite weights")
        if np.any(self.running_var < 0):
            raise ValueError("negative running variance")

    @property
    def num_filters(self) -> int:
        return self.theta.shape[0]

    @property
    def in_channels(self) -> int:
        return self.theta.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.theta.shape[2]

    def copy(self) -> "V2Params":
        return V2Params(self.theta.copy(), self.running_mean.copy(), self.running_var.copy(),
                        self.momentum, self.step)

    def update_running(self, mean, var) -> None:
        m = self.momentum
        self.running_mean = (1 - m) * self.running_mean + m * mean
        self.running_var = (1 - m) * self.running_var + m * var


def init_params(seed, d: int = 60, in_channels: int = 60, kernel_size: int = 7) -> V2Params:
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    bound = np.sqrt(1.0 / (in_channels * kernel_size * kernel_size))
    theta = rng.uniform(-bound, bound, size=(d, in_channels, kernel_size, kernel_size))
    return V2Params(theta)


def orth_penalty(params) -> float:
    theta = params.theta if isinstance(params, V2Params) else np.asarray(params)
    t = theta.reshape(theta.shape[0], -1)
    return float(np.linalg.norm(t @ t.T - np.eye(t.shape[0])))


def orth_penalty_grad(theta) -> np.ndarray:
    """d/dtheta of ||T T^T - I||_F (zero at the minimum)."""
    t = theta.reshape(theta.shape[0], -1)
    g = t @ t.T - np.eye(t.shape[0])
    norm = np.linalg.norm(g)
    # the norm has a kink at its minimum; rounding-level residues count as zero
    if norm <= ORTH_TOL:
        return np.zeros_like(theta)
    return (2.0 * g @ t / norm).reshape(theta.shape)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _as_batch(v1) -> np.ndarray:
    if hasattr(v1, "channels"):
        v1 = v1.channels
    elif isinstance(v1, (list, tuple)):
        v1 = np.stack([getattr(x, "channels", x) for x in v1])
    x = np.asarray(v1, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ValueError(f"expected (N, C, H, W) input, got {x.shape}")
    return x


CHUNK = 32     # images per FFT pass; bounds the complex intermediates


def conv_valid(x, theta) -> np.ndarray:
    """Valid cross-correlation: (N, C, H, W) x (D, C, k, k) -> (N, D, H-k+1, W-k+1)."""
    n, c, h, w = x.shape
    d, c2, k, _ = theta.shape
    if c != c2:
        raise ValueError(f"input has {c} channels, filters expect {c2}")
    if h < k or w < k:
        raise ValueError(f"spatial extent {h}x{w} smaller than kernel {k}x{k}")
    tf = np.conj(np.fft.rfft2(theta, s=(h, w))).transpose(2, 3, 0, 1)
    out = np.empty((n, d, h - k + 1, w - k + 1))
    for i in range(0, n, CHUNK):
        xf = np.fft.rfft2(x[i:i + CHUNK])
        # per-frequency (D, C) @ (C, n)
        zf = np.matmul(tf, xf.transpose(2, 3, 1, 0))
        out[i:i + CHUNK] = np.fft.irfft2(zf.transpose(3, 2, 0, 1), s=(h, w))[..., : h - k + 1, : w - k + 1]
    return out


def conv_valid_weight_grad(x, gz, k: int) -> np.ndarray:
    """Gradient of sum(gz * conv_valid(x, theta)) with respect to theta."""
    n, c, h, w = x.shape
    tf = 0
    for i in range(0, n, CHUNK):
        g = gz[i:i + CHUNK]
        pad = np.zeros(g.shape[:2] + (h, w))
        pad[..., : g.shape[2], : g.shape[3]] = g
        xf = np.fft.rfft2(x[i:i + CHUNK])
        gf = np.fft.rfft2(pad)
        # per-frequency (D, n) @ (n, C)
        tf = tf + np.matmul(np.conj(gf).transpose(2, 3, 1, 0), xf.transpose(2, 3, 0, 1))
    g = np.fft.irfft2(tf.transpose(2, 3, 0, 1), s=(h, w))
    return g[..., :k, :k]


def l2_pool(a, w: int) -> np.ndarray:
    """sqrt of the sum of squares over non-overlapping w x w windows (remainder cropped)."""
    n, d, h, ww = a.shape
    hp, wp = h // w, ww // w
    if hp < 1 or wp < 1:
        raise ValueError(f"map {h}x{ww} smaller than pooling window {w}")
    blocks = a[..., : hp * w, : wp * w].reshape(n, d, hp, w, wp, w)
    return np.sqrt((blocks ** 2).sum(axis=(3, 5)))


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

@dataclass
class V2Response:
    maps: np.ndarray            # (N, D, h, w) normalized output
    pre: np.ndarray             # (N, D, h, w) before normalization, >= 0
    mean: np.ndarray            # (D,) statistics used for normalization
    var: np.ndarray
    cache: dict = field(default=None, repr=False)

    def __len__(self):
        return self.maps.shape[0]

    def __getitem__(self, i):
        return self.maps[i]


def v2_forward(v1, params: V2Params, mode: str = "eval", pool: int = 4,
               update_stats: bool = True, keep_cache: bool = False) -> V2Response:
    """Run the V2 stage on a batch of V1 stacks.

    In ``train`` mode the output is normalized with the statistics of this
    batch (all images, all positions) and, if ``update_stats``, the running
    statistics in ``params`` are updated in place.  ``eval`` mode uses the
    running statistics and treats every image independently.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = _as_batch(v1)
    z = conv_valid(x, params.theta)
    a = np.maximum(z, 0.0)
    q = l2_pool(a, pool)
    if mode == "train":
        mean = q.mean(axis=(0, 2, 3))
        var = q.var(axis=(0, 2, 3))
        if update_stats:
            params.update_running(mean, var)
    else:
        mean, var = params.running_mean, params.running_var
    std = np.sqrt(var + BN_EPS)
    y = (q - mean[:, None, None]) / std[:, None, None]
    cache = None
    if keep_cache:
        cache = dict(x=x, z=z, a=a, q=q, std=std, pool=pool, mode=mode, k=params.kernel_size)
    return V2Response(y, q, mean, var, cache)


def v2_backward(resp: V2Response, g_maps) -> np.ndarray:
    """Back-propagate d(loss)/d(maps) to d(loss)/d(theta).

    Requires a response produced with ``keep_cache=True``.  In train mode the
    batch normalization statistics are differentiated through.
    """
    cache = resp.cache
    if cache is None:
        raise ValueError("response has no cache; call v2_forward(..., keep_cache=True)")
    g = np.asarray(g_maps, dtype=np.float64)
    std = cache["std"][:, None, None]
    if cache["mode"] == "train":
        yhat = resp.maps
        gm = g.mean(axis=(0, 2, 3), keepdims=True)
        gym = (g * yhat).mean(axis=(0, 2, 3), keepdims=True)
        gq = (g - gm - yhat * gym) / std
    else:
        gq = g / std
    w = cache["pool"]
    a, q, z = cache["a"], cache["q"], cache["z"]
    n, d, hp, wp = q.shape
    ratio = gq / np.maximum(q, POOL_EPS)
    ga = np.zeros_like(a)
    blocks = a[..., : hp * w, : wp * w].reshape(n, d, hp, w, wp, w)
    ga[..., : hp * w, : wp * w] = (blocks * ratio[:, :, :, None, :, None]).reshape(n, d, hp * w, wp * w)
    gz = ga * (z > 0)
    return conv_valid_weight_grad(cache["x"], gz, cache["k"])
