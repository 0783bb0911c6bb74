"""Fixed V1 stage: complex steerable filters, simple and complex cells.

Every band is computed at full input resolution in the frequency domain
(circular boundaries).  Band responses are rectified / energy-pooled and then
bilinearly resampled to a common grid ``input / common_grid_factor``.

Channel layout of the output stack (``S`` scales, ``O`` orientations)::

    [0, S*O)        max(0, even)     scale-major, orientation-minor
    [S*O, 2*S*O)    max(0, odd)
    [2*S*O, 3*S*O)  sqrt(even**2 + odd**2)
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .dataset import check_image, resize_bilinear


@dataclass(frozen=True)
class SteerableConfig:
    num_scales: int = 5
    num_orientations: int = 4
    common_grid_factor: int = 4

    def __post_init__(self):
        if self.num_scales < 1:
            raise ValueError("num_scales must be >= 1")
        if self.num_orientations < 2:
            raise ValueError("num_orientations must be >= 2")
        f = self.common_grid_factor
        if f < 1 or f & (f - 1):
            raise ValueError("common_grid_factor must be a power of two")

    @property
    def num_bands(self) -> int:
        return self.num_scales * self.num_orientations

    @property
    def num_channels(self) -> int:
        return 3 * self.num_bands


def _angular_gain(order: int) -> float:
    # makes sum_k gain**2 * cos(phi - theta_k)**(2*order) == 1 for K = order + 1
    k = order + 1
    return 2 ** order * factorial(order) / np.sqrt(k * factorial(2 * order))


def radial_profile(r, scale: int) -> np.ndarray:
    """Cosine log-radial window centred on ``pi / 2**(scale+1)``.

    Squared windows of adjacent octaves sum to one where they overlap.
    """
    peak = np.pi / 2 ** (scale + 1)
    with np.errstate(divide="ignore"):
        t = np.log2(np.where(r > 0, r, peak) / peak)
    inside = (np.abs(t) < 1) & (r > 0)
    return np.where(inside, np.cos(0.5 * np.pi * np.where(inside, t, 0.0)), 0.0)


class FilterBank:
    """Analytic (one-sided) steerable filters for one input size.

    ``analytic[s, o]`` is real-valued in the frequency domain and supported
    on the half-plane facing orientation ``o``; the real and imaginary parts
    of the filtered image are the even and odd quadrature responses.
    """

    def __init__(self, config: SteerableConfig, shape):
        self.config = config
        self.shape = tuple(shape)
        h, w = self.shape
        fy = np.fft.fftfreq(h) * 2 * np.pi
        fx = np.fft.fftfreq(w) * 2 * np.pi
        wy, wx = np.meshgrid(fy, fx, indexing="ij")
        r = np.hypot(wy, wx)
        phi = np.arctan2(wy, wx)
        S, O = config.num_scales, config.num_orientations
        order = O - 1
        gain = _angular_gain(order)
        nyq = np.zeros((h, w), dtype=bool)
        # the Nyquist line is its own mirror image; zero it so the pairs stay in quadrature
        if h % 2 == 0:
            nyq[h // 2, :] = True
        if w % 2 == 0:
            nyq[:, w // 2] = True
        self.orientations = np.arange(O) * np.pi / O
        bank = np.empty((S, O, h, w))
        for s in range(S):
            rad = radial_profile(r, s)
            for o, theta in enumerate(self.orientations):
                c = np.cos(phi - theta)
                ang = np.where(c > 0, gain * c ** order, 0.0)
                bank[s, o] = np.where(nyq, 0.0, 2.0 * rad * ang)
        bank.setflags(write=False)
        self.analytic = bank

    def __len__(self):
        return 2 * self.config.num_bands

    def _mirror(self, a):
        h, w = self.shape
        return a[..., (-np.arange(h)) % h, :][..., (-np.arange(w)) % w]

    def even(self, s: int, o: int) -> np.ndarray:
        a = self.analytic[s, o]
        return 0.5 * (a + self._mirror(a))

    def odd(self, s: int, o: int) -> np.ndarray:
        a = self.analytic[s, o]
        return (a - self._mirror(a)) / 2j

    def peak_frequency(self, s: int, o: int):
        """(row, column) angular frequency at the centre of band (s, o)."""
        r = np.pi / 2 ** (s + 1)
        theta = self.orientations[o]
        return r * np.sin(theta), r * np.cos(theta)


def build_filter_bank(config: SteerableConfig, input_size) -> FilterBank:
    if np.isscalar(input_size):
        input_size = (int(input_size), int(input_size))
    h, w = input_size
    if min(h, w) < 2 ** config.num_scales:
        raise ValueError(
            f"input {h}x{w} too small for {config.num_scales} scales "
            f"(need >= {2 ** config.num_scales})")
    return FilterBank(config, (h, w))


def v1_bands(image, bank: FilterBank) -> np.ndarray:
    """Complex band responses, shape (S, O, H, W), at full resolution."""
    image = check_image(image)
    if image.shape != bank.shape:
        raise ValueError(f"image shape {image.shape} != filter bank shape {bank.shape}")
    spec = np.fft.fft2(image)
    return np.fft.ifft2(spec * bank.analytic, axes=(-2, -1))


@dataclass
class V1Response:
    channels: np.ndarray  # (3*S*O, h, w)
    config: SteerableConfig

    @property
    def simple_even(self):
        n = self.config.num_bands
        return self.channels[:n]

    @property
    def simple_odd(self):
        n = self.config.num_bands
        return self.channels[n:2 * n]

    @property
    def complex(self):
        n = self.config.num_bands
        return self.channels[2 * n:]


def v1_forward(image, config: SteerableConfig = SteerableConfig(), bank: FilterBank | None = None) -> V1Response:
    image = check_image(image)
    h, w = image.shape
    f = config.common_grid_factor
    if h % f or w % f:
        raise ValueError(f"image {h}x{w} not divisible by grid factor {f}")
    if bank is None:
        bank = build_filter_bank(config, (h, w))
    elif bank.config != config or bank.shape != (h, w):
        raise ValueError("filter bank does not match config / image shape")
    b = v1_bands(image, bank)
    n = config.num_bands
    b = b.reshape(n, h, w)
    stack = np.concatenate([np.maximum(b.real, 0.0), np.maximum(b.imag, 0.0), np.abs(b)])
    stack = resize_bilinear(stack, h // f, w // f)
    return V1Response(stack, config)


def v1_features(images, config: SteerableConfig = SteerableConfig()) -> np.ndarray:
    """Stack V1 responses of equally sized images into (N, C, h, w)."""
    images = [check_image(im) for im in images]
    if not images:
        return np.empty((0, config.num_channels, 0, 0))
    bank = build_filter_bank(config, images[0].shape)
    first = v1_forward(images[0], config, bank).channels
    out = np.empty((len(images),) + first.shape)
    out[0] = first
    for i, im in enumerate(images[1:], 1):
        if im.shape != images[0].shape:
            raise ValueError("images differ in size")
        out[i] = v1_forward(im, config, bank).channels
    return out
