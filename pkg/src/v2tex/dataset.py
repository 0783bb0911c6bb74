"""Image I/O, manifests and image-level transforms.

Images are plain 2-D ``float64`` arrays with values in [0, 1].  All
transforms here are pure functions of their inputs.
"""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
LUMA = np.array([0.299, 0.587, 0.114])


class ImageFormatError(ValueError):
    pass


def check_image(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ImageFormatError(f"expected a 2-D image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ImageFormatError(f"zero-dimension image {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ImageFormatError("image contains non-finite values")
    return img


# ---------------------------------------------------------------------------
# PGM / PNG
# ---------------------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset just past the single whitespace byte
    terminating the last one.
    """
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise ImageFormatError("truncated PGM header")
        tokens.append(data[start:i])
    return tokens, i + 1


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ImageFormatError(f"{path}: not a P2/P5 PGM file")
    (w, h, maxval), offset = _pgm_tokens(data[2:], 3)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: bad PGM header") from exc
    if w < 1 or h < 1:
        raise ImageFormatError(f"{path}: zero-dimension image {h}x{w}")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval}")
    body = data[2 + offset:]
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = w * h * dtype.itemsize
        if len(body) < need:
            raise ImageFormatError(f"{path}: truncated pixel data")
        raw = np.frombuffer(body[:need], dtype=dtype)
    else:
        raw = np.array(body.split()[: w * h], dtype=np.int64)
        if raw.size < w * h:
            raise ImageFormatError(f"{path}: truncated pixel data")
    return raw.reshape(h, w).astype(np.float64) / maxval


def write_pgm(path, img) -> None:
    """Write a 16-bit binary (P5) PGM."""
    img = check_image(img)
    q = np.round(np.clip(img, 0.0, 1.0) * 65535).astype(">u2")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (w, h))
        fh.write(q.tobytes())


def load_grayscale(path) -> np.ndarray:
    """Load a PNG or PGM file as a float image in [0, 1].

    RGB(A) inputs are converted with 0.299/0.587/0.114 luminance weights.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".pnm"):
        return check_image(read_pgm(path))
    if suffix != ".png":
        raise ImageFormatError(f"{path}: unsupported format {suffix!r}")
    with PILImage.open(path) as im:
        mode = im.mode
        if mode in ("L", "LA", "P", "PA"):
            if mode.startswith("P"):
                im = im.convert("RGB")
                arr = np.asarray(im, dtype=np.float64) @ LUMA / 255.0
            else:
                arr = np.asarray(im.getchannel("L"), dtype=np.float64) / 255.0
        elif mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif mode in ("RGB", "RGBA"):
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) @ LUMA / 255.0
        else:
            raise ImageFormatError(f"{path}: unsupported PNG mode {mode}")
    return check_image(arr)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    path: str
    label: str
    split: str


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.split not in SPLITS:
                raise ValueError(f"invalid split {e.split!r} for {e.path}")
            if e.path in seen:
                raise ValueError(f"duplicate manifest path {e.path}")
            seen.add(e.path)

    def __len__(self):
        return len(self.entries)

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    @property
    def labels(self) -> list:
        return sorted({e.label for e in self.entries})

    def resolve(self, entry: ManifestEntry, root=None) -> Path:
        p = Path(entry.path)
        if p.is_absolute() or root is None:
            return p
        return Path(root) / p


def read_manifest(path) -> DatasetManifest:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["path", "label", "split"]:
            raise ValueError(f"{path}: manifest header must be 'path,label,split'")
        entries = [ManifestEntry(r["path"], r["label"], r["split"]) for r in reader]
    return DatasetManifest(entries)


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "split"])
        for e in manifest.entries:
            w.writerow([e.path, e.label, e.split])


def load_split(manifest: DatasetManifest, split: str, root=None):
    """Load every image of one split; returns (images, labels)."""
    entries = manifest.split(split)
    images = [load_grayscale(manifest.resolve(e, root)) for e in entries]
    return images, [e.label for e in entries]


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

def rotate_quarter(img, k: int) -> np.ndarray:
    """Rotate counterclockwise by ``k`` quarter turns."""
    return np.rot90(np.asarray(img), k % 4).copy()


def phase_scramble(img, seed) -> np.ndarray:
    """Randomize Fourier phases while keeping every spectral magnitude.

    Phases are drawn on the half spectrum and mirrored so the result is real.
    Self-conjugate frequencies (DC and the Nyquist rows/columns' fixed points)
    keep their phase up to a sign flip, and DC is left untouched.
    """
    img = check_image(img)
    h, w = img.shape
    rng = np.random.default_rng(seed)
    spec = np.fft.fft2(img)
    phi = rng.uniform(-np.pi, np.pi, size=(h, w))
    # Hermitian mirror: phase(-k) = -phase(k)
    neg = phi[(-np.arange(h)) % h][:, (-np.arange(w)) % w]
    ky = np.arange(h)[:, None]
    kx = np.arange(w)[None, :]
    # keep the draw at the lexicographically smaller index of each (k, -k) pair
    ky_m = (-ky) % h
    kx_m = (-kx) % w
    primary = (ky < ky_m) | ((ky == ky_m) & (kx <= kx_m))
    phi = np.where(primary, phi, -neg)
    self_conj = (ky == ky_m) & (kx == kx_m)
    phi = np.where(self_conj, np.where(phi >= 0, 0.0, np.pi), phi)
    phi[0, 0] = 0.0
    out = np.fft.ifft2(spec * np.exp(1j * phi))
    resid = np.abs(out.imag).max()
    if resid > 1e-10 * max(1.0, np.abs(out.real).max()):
        raise RuntimeError(f"phase scramble produced imaginary residue {resid:g}")
    return out.real


def raised_cosine_window(shape, diameter_fraction: float = 1.0, transition: float = 0.25) -> np.ndarray:
    h, w = shape
    if not 0 < diameter_fraction <= 1:
        raise ValueError("diameter_fraction must be in (0, 1]")
    radius = 0.5 * diameter_fraction * min(h, w)
    r_flat = (1.0 - transition) * radius
    yy = np.arange(h) - (h - 1) / 2.0
    xx = np.arange(w) - (w - 1) / 2.0
    r = np.hypot(yy[:, None], xx[None, :])
    t = np.clip((r - r_flat) / (radius - r_flat), 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def raised_cosine_aperture(img, diameter_fraction: float = 1.0) -> np.ndarray:
    img = check_image(img)
    return img * raised_cosine_window(img.shape, diameter_fraction)


def resize_bilinear(x, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling over the last two axes (half-pixel centres, edge clamp)."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return x.copy()

    def taps(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = taps(h, out_h)
    x0, x1, fx = taps(w, out_w)
    rows = x[..., y0, :] * (1 - fy)[:, None] + x[..., y1, :] * fy[:, None]
    return rows[..., x0] * (1 - fx) + rows[..., x1] * fx


def center_crop_resize(img, size: int) -> np.ndarray:
    """Centre-crop to a square, then bilinear-resize to ``size`` x ``size``."""
    img = check_image(img)
    h, w = img.shape
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    return resize_bilinear(img[top:top + s, left:left + s], size, size)


def ensure_dir_empty_or_new(path) -> Path:
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        logger.warning("output directory %s is not empty", path)
    os.makedirs(path, exist_ok=True)
    return path
