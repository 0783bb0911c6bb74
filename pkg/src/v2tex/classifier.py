"""Global-average-pooled features and quadratic discriminant analysis."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


def gap_features(resp) -> np.ndarray:
    """Per-channel spatial mean of a (D, h, w) response, or (N, D, h, w) -> (N, D)."""
    r = np.asarray(resp, dtype=np.float64)
    if r.ndim < 3 or r.shape[-1] * r.shape[-2] == 0:
        raise ValueError("empty response")
    return r.reshape(r.shape[:-2] + (-1,)).mean(axis=-1)


@dataclass
class QdaModel:
    classes: list
    means: np.ndarray        # (K, D)
    covs: np.ndarray         # (K, D, D)
    precisions: np.ndarray   # (K, D, D)
    logdets: np.ndarray      # (K,)
    priors: np.ndarray       # (K,)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def fit_qda(features, labels, shrinkage: float = 0.1, uniform_prior: bool = False) -> QdaModel:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("features must be (N, D)")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features")
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError("shrinkage must lie in [0, 1]")
    labels = list(labels)
    if len(labels) != len(X):
        raise ValueError("features and labels differ in length")
    classes = sorted(set(labels), key=lambda c: (str(type(c)), c))
    y = np.array([classes.index(l) for l in labels])
    D = X.shape[1]
    means, covs, precs, logdets, priors = [], [], [], [], []
    for k, cls in enumerate(classes):
        Xk = X[y == k]
        if len(Xk) < 2:
            raise ValueError(f"class {cls!r} has fewer than 2 samples")
        m = Xk.mean(axis=0)
        S = np.atleast_2d(np.cov(Xk, rowvar=False, ddof=1))
        cov = (1 - shrinkage) * S + shrinkage * (np.trace(S) / D) * np.eye(D)
        cov = 0.5 * (cov + cov.T)
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0:
            raise np.linalg.LinAlgError(f"covariance of class {cls!r} is singular; increase shrinkage")
        means.append(m)
        covs.append(cov)
        precs.append(np.linalg.inv(cov))
        logdets.append(logdet)
        priors.append(len(Xk) / len(X))
    priors = np.full(len(classes), 1.0 / len(classes)) if uniform_prior else np.array(priors)
    return QdaModel(classes, np.array(means), np.array(covs), np.array(precs),
                    np.array(logdets), priors)


def qda_scores(model: QdaModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dim:
        raise ValueError(f"feature dimension {X.shape[1]} != model dimension {model.dim}")
    diff = X[:, None, :] - model.means[None]                      # (N, K, D)
    maha = np.einsum("nkd,kde,nke->nk", diff, model.precisions, diff)
    return -0.5 * model.logdets - 0.5 * maha + np.log(model.priors)


def predict_qda(model: QdaModel, x):
    """Return (label, per-class scores) for one vector."""
    s = qda_scores(model, x)[0]
    return model.classes[int(np.argmax(s))], s


def predict_many(model: QdaModel, X) -> list:
    s = qda_scores(model, X)
    return [model.classes[i] for i in np.argmax(s, axis=1)]


@dataclass
class Evaluation:
    accuracy: float
    confusion: np.ndarray   # rows: true class, columns: predicted
    classes: list

    @property
    def per_class_accuracy(self) -> np.ndarray:
        totals = self.confusion.sum(axis=1)
        return np.divide(np.diag(self.confusion), totals, out=np.zeros(len(totals)), where=totals > 0)


def confusion_from_predictions(classes, labels, predictions) -> Evaluation:
    if len(labels) == 0:
        raise ValueError("empty test set")
    idx = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(labels, predictions):
        if t not in idx:
            raise ValueError(f"label {t!r} was not seen at fit time")
        cm[idx[t], idx[p]] += 1
    return Evaluation(float(np.trace(cm) / cm.sum()), cm, list(classes))


def evaluate(model: QdaModel, features, labels) -> Evaluation:
    labels = list(labels)
    unseen = set(labels) - set(model.classes)
    if unseen:
        raise ValueError(f"labels not seen at fit time: {sorted(map(str, unseen))}")
    return confusion_from_predictions(model.classes, labels, predict_many(model, features))


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def write_features_csv(path, ids, labels, features) -> None:
    features = np.asarray(features)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"f{i}" for i in range(features.shape[1])])
        for i, l, f in zip(ids, labels, features):
            w.writerow([i, l] + [repr(float(v)) for v in f])


def read_features_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["id", "label"]:
            raise ValueError(f"{path}: header must start with id,label")
        ids, labels, rows = [], [], []
        for row in reader:
            ids.append(row[0])
            labels.append(row[1])
            rows.append([float(v) for v in row[2:]])
    return ids, labels, np.array(rows)


def write_confusion_csv(path, ev: Evaluation) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + list(ev.classes))
        for c, row in zip(ev.classes, ev.confusion):
            w.writerow([c] + [int(v) for v in row])
