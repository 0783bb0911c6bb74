"""Self-supervised covariance-contrastive objective and its gradient.

Per-image response statistics are compared with the statistics of the whole
batch (a Gaussian mixture of the per-image Gaussians) through a normalized
square-root distance on the diagonal variances.  A soft minimum over images
is maximized, minus an orthogonality penalty on the flattened filters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .v2 import V2Params, orth_penalty, orth_penalty_grad, v2_backward, v2_forward


@dataclass
class ImageStats:
    mu: np.ndarray
    c: np.ndarray


@dataclass
class GlobalStats:
    mu_g: np.ndarray
    c_g: np.ndarray


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0
    epsilon: float = 1e-8
    pool: int = 4

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


def image_stats(resp) -> ImageStats:
    """Mean and population variance over positions of a (D, h, w) response."""
    r = np.asarray(resp, dtype=np.float64)
    flat = r.reshape(r.shape[0], -1)
    if flat.shape[1] < 2:
        raise ValueError("image statistics need at least 2 positions")
    return ImageStats(flat.mean(axis=1), flat.var(axis=1))


def global_stats(stats) -> GlobalStats:
    if len(stats) == 0:
        raise ValueError("need at least one image")
    mu = np.stack([s.mu for s in stats])
    c = np.stack([s.c for s in stats])
    mu_g = mu.mean(axis=0)
    c_g = (c + (mu - mu_g) ** 2).mean(axis=0)
    return GlobalStats(mu_g, c_g)


def distance(glob: GlobalStats, img: ImageStats, epsilon: float = 1e-8) -> float:
    a = np.sqrt(glob.c_g + epsilon)
    b = np.sqrt(img.c + epsilon)
    denom = np.linalg.norm(a)
    if denom == 0:
        raise ZeroDivisionError("global variance is identically zero")
    return float(np.linalg.norm(a - b) / denom)


def softmin(d) -> float:
    d = np.asarray(d, dtype=np.float64)
    if d.size == 0:
        raise ValueError("softmin of an empty list")
    if not np.all(np.isfinite(d)):
        raise ValueError("softmin needs finite inputs")
    w = np.exp(-(d - d.min()))
    return float((d * w).sum() / w.sum())


def softmin_grad(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    w = np.exp(-(d - d.min()))
    w /= w.sum()
    s = (d * w).sum()
    return w * (1.0 - d + s)


@dataclass
class LossResult:
    J: float
    L_var: float
    L_orth: float
    d: np.ndarray
    grad: np.ndarray = None
    batch_mean: np.ndarray = None
    batch_var: np.ndarray = None


def _batch_distances(maps, epsilon):
    n, D = maps.shape[:2]
    flat = maps.reshape(n, D, -1)
    if flat.shape[2] < 2:
        raise ValueError("image statistics need at least 2 positions")
    mu = flat.mean(axis=2)
    c = flat.var(axis=2)
    mu_g = mu.mean(axis=0)
    c_g = (c + (mu - mu_g) ** 2).mean(axis=0)
    a = np.sqrt(c_g + epsilon)
    b = np.sqrt(c + epsilon)
    u = a - b
    q = np.linalg.norm(u, axis=1)
    A = np.linalg.norm(a)
    return dict(flat=flat, mu=mu, c=c, mu_g=mu_g, c_g=c_g, a=a, b=b, u=u, q=q, A=A, d=q / A)


def evaluate_loss(params: V2Params, batch, config: LossConfig = LossConfig(), with_grad: bool = False) -> LossResult:
    """J = softmin(d) - lam * ||T T^T - I||_F on one batch, optionally with dJ/dtheta.

    Running normalization statistics in ``params`` are not touched; the
    batch statistics are returned for the caller to fold in.
    """
    resp = v2_forward(batch, params, mode="train", pool=config.pool,
                      update_stats=False, keep_cache=with_grad)
    n = resp.maps.shape[0]
    if n < 2:
        raise ValueError("a batch needs at least 2 images")
    st = _batch_distances(resp.maps, config.epsilon)
    d = st["d"]
    L_var = softmin(d)
    L_orth = orth_penalty(params)
    out = LossResult(L_var - config.lam * L_orth, L_var, L_orth, d,
                     batch_mean=resp.mean, batch_var=resp.var)
    if not with_grad:
        return out

    gd = softmin_grad(d)
    u, q, A, a, b = st["u"], st["q"], st["A"], st["a"], st["b"]
    safe_q = np.where(q > 0, q, 1.0)
    # d_n = |a - b_n| / |a|
    unit = np.where((q > 0)[:, None], u / safe_q[:, None], 0.0)
    g_a = (gd[:, None] * (unit / A - q[:, None] * a / A ** 3)).sum(axis=0)
    g_b = -gd[:, None] * unit / A
    g_cg = g_a / (2 * a)
    g_c = g_b / (2 * b) + g_cg / n
    g_mu = g_cg * 2.0 * (st["mu"] - st["mu_g"]) / n
    flat = st["flat"]
    P = flat.shape[2]
    g_flat = g_mu[:, :, None] / P + g_c[:, :, None] * 2.0 * (flat - st["mu"][:, :, None]) / P
    g_theta = v2_backward(resp, g_flat.reshape(resp.maps.shape))
    if config.lam:
        g_theta = g_theta - config.lam * orth_penalty_grad(params.theta)
    out.grad = g_theta
    return out


def total_loss(params: V2Params, batch, config: LossConfig = LossConfig()):
    """Return (J, per-image distances)."""
    r = evaluate_loss(params, batch, config)
    return r.J, r.d


def loss_gradient(params: V2Params, batch, config: LossConfig = LossConfig()) -> np.ndarray:
    return evaluate_loss(params, batch, config, with_grad=True).grad
