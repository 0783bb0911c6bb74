"""Stochastic gradient ascent on the contrastive objective."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import load_grayscale, rotate_quarter
from .objective import LossConfig, evaluate_loss
from .v1 import SteerableConfig, v1_features
from .v2 import V2Params, init_params

logger = logging.getLogger(__name__)

LOG_FIELDS = ("step", "J", "L_var", "L_orth", "d_min", "d_mean")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 275
    epochs: int = 1
    seed: int = 0
    lam: float = 1.0
    epsilon: float = 1e-8
    pool: int = 4
    num_filters: int = 60
    kernel_size: int = 7
    checkpoint_every: int = 0
    disable_var: bool = False   # optimize the orthogonality term alone

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    @property
    def loss(self) -> LossConfig:
        return LossConfig(lam=self.lam, epsilon=self.epsilon, pool=self.pool)


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    dropped: int = 0

    def append(self, **row):
        self.rows.append(row)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def write_csv(self, path, append: bool = False) -> None:
        mode = "a" if append else "w"
        with open(path, mode, newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, extrasaction="ignore", lineterminator="\n")
            if not append or fh.tell() == 0:
                w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(float(r[k])) if k != "step" else r[k]) for k in LOG_FIELDS})


def _orth_only_step(params, config):
    from .v2 import orth_penalty, orth_penalty_grad
    L = orth_penalty(params)
    return -config.lam * L, 0.0, L, np.zeros(1), -config.lam * orth_penalty_grad(params.theta)


def train_features(v1_stack, config: TrainConfig, params: V2Params | None = None,
                   log: TrainingLog | None = None, on_step=None):
    """Train on precomputed V1 responses of shape (N, C, h, w).

    Returns (params, log).  ``params`` is copied, never modified in place.
    """
    v1_stack = np.asarray(v1_stack)
    n = len(v1_stack)
    if n < 2:
        raise ValueError("need at least 2 training images")
    if params is None:
        params = init_params(config.seed, config.num_filters, v1_stack.shape[1], config.kernel_size)
    else:
        params = params.copy()
    log = log if log is not None else TrainingLog()
    rng = np.random.default_rng([config.seed, params.step])
    lcfg = config.loss
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        batches = [order[i:i + config.batch_size] for i in range(0, n, config.batch_size)]
        if len(batches[-1]) < 2:
            log.dropped += 1
            logger.info("epoch %d: dropping tail batch of %d image(s)", epoch, len(batches[-1]))
            batches.pop()
        for idx in batches:
            t0 = time.perf_counter()
            if config.disable_var:
                J, L_var, L_orth, d, grad = _orth_only_step(params, lcfg)
            else:
                res = evaluate_loss(params, v1_stack[np.sort(idx)], lcfg, with_grad=True)
                J, L_var, L_orth, d, grad = res.J, res.L_var, res.L_orth, res.d, res.grad
                params.update_running(res.batch_mean, res.batch_var)
            if not np.isfinite(J):
                raise FloatingPointError(f"objective became non-finite at step {params.step}")
            params.theta = params.theta + config.learning_rate * grad
            params.step += 1
            log.append(step=params.step, J=J, L_var=L_var, L_orth=L_orth,
                       d_min=float(np.min(d)), d_mean=float(np.mean(d)),
                       seconds=time.perf_counter() - t0)
            logger.debug("step %d J=%.6f L_var=%.6f L_orth=%.6f", params.step, J, L_var, L_orth)
            if on_step is not None:
                on_step(params, log)
    return params, log


def load_training_images(manifest, root=None, split="train", rotations: bool = False):
    images = []
    for e in manifest.split(split):
        img = load_grayscale(manifest.resolve(e, root))
        images.append(img)
        if rotations:
            images.extend(rotate_quarter(img, k) for k in (1, 2, 3))
    return images


def train(manifest, config: TrainConfig, root=None, steerable: SteerableConfig = SteerableConfig(),
          params: V2Params | None = None, rotations: bool = False, on_step=None):
    """Load the train split, run the fixed V1 stage, then train V2."""
    images = load_training_images(manifest, root, "train", rotations)
    if not images:
        raise ValueError("manifest has no training images")
    v1 = v1_features(images, steerable)
    return train_features(v1, config, params, on_step=on_step)
