"""Representational similarity analysis on texture-family responses."""
from __future__ import annotations

import csv
from collections import OrderedDict

import numpy as np
from scipy.stats import rankdata

from .classifier import gap_features
from .dataset import center_crop_resize, load_grayscale, raised_cosine_aperture
from .v1 import SteerableConfig, build_filter_bank, v1_forward
from .v2 import V2Params, v2_forward

STIMULUS_SIZE = 224


class RsaError(ValueError):
    pass


def gaussianize_counts(r):
    """Variance-stabilizing transform for Poisson-like counts: sqrt(r) + sqrt(r + 1)."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r < 0):
        raise ValueError("spike counts must be non-negative")
    out = np.sqrt(r) + np.sqrt(r + 1.0)
    return float(out) if out.ndim == 0 else out


def family_average(responses, families):
    """Average rows of ``responses`` per family.

    Returns (family names in first-seen order, (F, units) matrix).
    """
    responses = np.asarray(responses, dtype=np.float64)
    families = list(families)
    if len(families) != len(responses):
        raise ValueError("one family label per response row required")
    groups = OrderedDict()
    for i, f in enumerate(families):
        groups.setdefault(f, []).append(i)
    if not groups:
        raise RsaError("no families")
    names = list(groups)
    return names, np.stack([responses[groups[f]].mean(axis=0) for f in names])


def rdm(m) -> np.ndarray:
    """1 - Pearson correlation between every pair of rows."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2:
        raise RsaError("need a matrix with at least 2 rows")
    centered = m - m.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    scale = np.maximum(np.abs(m).max(axis=1), 1e-300)
    flat = norms <= 1e-12 * scale * np.sqrt(m.shape[1])
    if np.any(flat):
        raise RsaError(f"rows with zero variance: {np.flatnonzero(flat).tolist()}")
    z = centered / norms[:, None]
    corr = np.clip(z @ z.T, -1.0, 1.0)
    out = 1.0 - corr
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 0.0)
    return out


def upper_triangle(a) -> np.ndarray:
    a = np.asarray(a)
    return a[np.triu_indices(a.shape[0], k=1)]


def spearman_rdm(a, b) -> float:
    """Spearman rho between the strict upper triangles (average ranks for ties)."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise RsaError(f"RDM shapes differ or are not square: {a.shape} vs {b.shape}")
    if a.shape[0] < 3:
        raise RsaError("need at least 3 conditions")
    ra = rankdata(upper_triangle(a))
    rb = rankdata(upper_triangle(b))
    ra -= ra.mean()
    rb -= rb.mean()
    den = np.sqrt((ra ** 2).sum() * (rb ** 2).sum())
    if den == 0:
        raise RsaError("constant upper triangle; rank correlation undefined")
    return float(np.clip((ra * rb).sum() / den, -1.0, 1.0))


# ---------------------------------------------------------------------------
# neural data
# ---------------------------------------------------------------------------

NEURAL_HEADER = ["unit_id", "stimulus_id", "family", "spike_count"]


def read_neural_csv(path):
    """Read (unit, stimulus, family, count) rows; returns (stimuli, families, units, matrix).

    Counts are gaussianized per row; repeated (unit, stimulus) rows are averaged
    after the transform.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != NEURAL_HEADER:
            raise RsaError(f"{path}: header must be {','.join(NEURAL_HEADER)}")
        rows = list(reader)
    if not rows:
        raise RsaError(f"{path}: no data rows")
    stimuli, units, fam_of = OrderedDict(), OrderedDict(), {}
    for r in rows:
        stimuli.setdefault(r["stimulus_id"], len(stimuli))
        units.setdefault(r["unit_id"], len(units))
        prev = fam_of.setdefault(r["stimulus_id"], r["family"])
        if prev != r["family"]:
            raise RsaError(f"stimulus {r['stimulus_id']} assigned to two families")
    total = np.zeros((len(stimuli), len(units)))
    count = np.zeros_like(total)
    for r in rows:
        i, j = stimuli[r["stimulus_id"]], units[r["unit_id"]]
        total[i, j] += gaussianize_counts(float(r["spike_count"]))
        count[i, j] += 1
    if np.any(count == 0):
        raise RsaError("every unit needs a response to every stimulus")
    names = list(stimuli)
    return names, [fam_of[s] for s in names], list(units), total / count


def neural_family_rdm(path, family_order=None):
    _, fams, _, mat = read_neural_csv(path)
    names, avg = family_average(mat, fams)
    if family_order is not None:
        missing = [f for f in family_order if f not in names]
        if missing:
            raise RsaError(f"family missing from neural data: {', '.join(missing)}")
        avg = avg[[names.index(f) for f in family_order]]
        names = list(family_order)
    return names, rdm(avg)


# ---------------------------------------------------------------------------
# model side
# ---------------------------------------------------------------------------

def model_responses(images, params: V2Params, steerable: SteerableConfig = SteerableConfig(),
                    pool: int = 4, size: int = STIMULUS_SIZE) -> np.ndarray:
    """GAP V2 responses (eval mode) to aperture-windowed stimuli resized to ``size``."""
    bank = build_filter_bank(steerable, (size, size))
    feats = []
    for img in images:
        x = raised_cosine_aperture(center_crop_resize(img, size), 1.0)
        v1 = v1_forward(x, steerable, bank)
        feats.append(gap_features(v2_forward(v1.channels, params, "eval", pool).maps[0]))
    return np.array(feats)


def model_family_rdm(manifest, params: V2Params, root=None, steerable: SteerableConfig = SteerableConfig(),
                     pool: int = 4):
    """Family-level RDM of model responses to every stimulus in ``manifest``."""
    entries = list(manifest.entries)
    images = [load_grayscale(manifest.resolve(e, root)) for e in entries]
    feats = model_responses(images, params, steerable, pool)
    names, avg = family_average(feats, [e.label for e in entries])
    spread = np.ptp(avg, axis=0).max() if len(avg) > 1 else 0.0
    if spread <= 1e-12 * max(1.0, np.abs(avg).max()):
        raise RsaError("model responses do not vary across families; dissimilarities undefined")
    return names, rdm(avg)


def write_rdm_csv(path, names, mat) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(names))
        for n, row in zip(names, mat):
            w.writerow([n] + [repr(float(v)) for v in row])


def read_rdm_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    return names, np.array([[float(v) for v in r[1:]] for r in rows[1:]])
