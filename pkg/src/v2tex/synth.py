"""Procedural texture families for small-scale experiments.

Families differ in higher-order structure rather than in mean luminance:
every image is standardized to the same mean and contrast before writing.
"""
from __future__ import annotations

import hashlib
from functools import lru_cache
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, ManifestEntry, phase_scramble, write_manifest, write_pgm

MEAN_LUMINANCE = 0.5
CONTRAST = 0.12
BASE_ORIENTATION = 0.3     # radians
DENSITY = 3.0              # mean coverage of bars / dots per pixel
BAR_LENGTH = 13.0
LINE_LENGTH = 40.0
BAR_WIDTH = 1.5
DOT_RADIUS = 2.1


def _freq(n):
    f = np.fft.fftfreq(n)
    return f[:, None], f[None, :]


def _impulses(rng, n, count):
    img = np.zeros((n, n))
    np.add.at(img, (rng.integers(0, n, count), rng.integers(0, n, count)), 1.0)
    return img


def _bar_kernel(n, theta, length, width):
    """Soft line segment centred on the origin of a periodic n x n grid."""
    c = np.arange(n)
    c = np.where(c < n / 2, c, c - n).astype(np.float64)
    dy, dx = c[:, None], c[None, :]
    along = dx * np.cos(theta) + dy * np.sin(theta)
    across = -dx * np.sin(theta) + dy * np.cos(theta)
    return np.where(np.abs(along) <= length / 2, np.exp(-0.5 * (across / (width / 2)) ** 2), 0.0)


@lru_cache(maxsize=32)
def _bar_spectrum(n, theta, length, width):
    spec = np.fft.fft2(_bar_kernel(n, theta, length, width))
    spec.setflags(write=False)
    return spec


def _segments(rng, n, orientations, density, length, width=BAR_WIDTH):
    """Randomly placed bars; each orientation gets its own independent placement."""
    count = max(1, int(density * n * n / (length * 2 * len(orientations))))
    spec = 0
    for th in orientations:
        spec = spec + np.fft.fft2(_impulses(rng, n, count)) * _bar_spectrum(n, th, length, width)
    return np.real(np.fft.ifft2(spec))


def _crosses(rng, n, orientations, density, length, width=BAR_WIDTH):
    """Bars of every orientation sharing their centres (plus-shaped elements)."""
    count = max(1, int(density * n * n / (length * 2 * len(orientations))))
    kernel = sum(_bar_spectrum(n, th, length, width) for th in orientations)
    return np.real(np.fft.ifft2(np.fft.fft2(_impulses(rng, n, count)) * kernel))


def _dots(rng, n, density, radius):
    count = max(1, int(density * n * n / (np.pi * radius ** 2)))
    fy, fx = _freq(n)
    kernel = np.exp(-(np.pi * radius) ** 2 * (fy ** 2 + fx ** 2))
    return np.real(np.fft.ifft2(np.fft.fft2(_impulses(rng, n, count)) * kernel))


def _standardize(img):
    img = img - img.mean()
    sd = img.std()
    if sd > 0:
        img = img / sd
    out = MEAN_LUMINANCE + CONTRAST * img
    for _ in range(5):
        out = np.clip(out, 0.0, 1.0)
        out = out - out.mean() + MEAN_LUMINANCE
    return np.clip(out, 0.0, 1.0)


HATCH = (BASE_ORIENTATION, BASE_ORIENTATION + np.pi / 2)


def _gen_crosshatch(rng, n):
    return _segments(rng, n, HATCH, DENSITY, BAR_LENGTH)


def _gen_orientednoise(rng, n):
    # Same power spectrum as crosshatch, random phases: energy at the two
    # orientations but none of the bar structure.
    return phase_scramble(_gen_crosshatch(rng, n), rng.integers(1 << 62))


def _gen_dots(rng, n):
    return _dots(rng, n, DENSITY, DOT_RADIUS)


def _gen_lines(rng, n):
    return _segments(rng, n, HATCH, DENSITY / 4, LINE_LENGTH)


def _gen_plaid(rng, n):
    return _crosses(rng, n, HATCH, DENSITY, BAR_LENGTH)


def _gen_blobnoise(rng, n):
    fy, fx = _freq(n)
    kernel = np.exp(-(np.pi * DOT_RADIUS) ** 2 * (fy ** 2 + fx ** 2))
    return np.real(np.fft.ifft2(np.fft.fft2(rng.standard_normal((n, n))) * kernel))


FAMILIES = {
    "crosshatch": _gen_crosshatch,
    "orientednoise": _gen_orientednoise,
    "dots": _gen_dots,
    "blobnoise": _gen_blobnoise,
    "plaid": _gen_plaid,
    "lines": _gen_lines,
}

# families whose identity rests on phase structure rather than the spectrum
HIGHER_ORDER = ("crosshatch", "plaid", "lines")


def family_names(families: int):
    names = list(FAMILIES)
    if families > len(names):
        raise ValueError(f"at most {len(names)} synthetic families available")
    return names[:families]


def generate_texture(family: str, size: int, rng) -> np.ndarray:
    return _standardize(FAMILIES[family](rng, size))


def _split_counts(n, fractions):
    counts = [int(round(n * f)) for f in fractions]
    counts[0] = n - sum(counts[1:])
    return counts


def synth_texture_set(families: int, samples_per_family: int, size: int, seed,
                      out_dir=None, fractions=(0.7, 0.1, 0.2)):
    """Generate ``families`` x ``samples_per_family`` images and a stratified manifest.

    Returns (manifest, images).  When ``out_dir`` is given, images are written
    as 16-bit PGM files next to ``manifest.csv`` and manifest paths are
    relative to ``out_dir``.
    """
    if families < 2:
        raise ValueError("need at least 2 families")
    if samples_per_family < 1:
        raise ValueError("samples_per_family must be >= 1")
    if size < 32:
        raise ValueError("size must be >= 32")
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not np.isclose(sum(fractions), 1.0):
        raise ValueError("split fractions must be three non-negative numbers summing to 1")
    names = family_names(families)
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(names))
    entries, images = [], []
    counts = _split_counts(samples_per_family, fractions)
    splits = ["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2]
    for name, child in zip(names, children):
        rng = np.random.default_rng(child)
        order = rng.permutation(samples_per_family)
        for i in range(samples_per_family):
            img = generate_texture(name, size, rng)
            images.append(img)
            entries.append(ManifestEntry(f"{name}/{name}_{i:04d}.pgm", name, splits[order[i]]))
    manifest = DatasetManifest(entries)
    if out_dir is not None:
        out = Path(out_dir)
        for e, img in zip(entries, images):
            p = out / e.path
            p.parent.mkdir(parents=True, exist_ok=True)
            write_pgm(p, img)
        write_manifest(manifest, out / "manifest.csv")
    return manifest, images


def manifest_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
