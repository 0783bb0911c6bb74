"""Command-line entry point: ``v2tex {synth,train,eval,scramble,rsa}``.

Exit codes: 0 success, 1 validation error, 2 runtime or I/O error.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import classifier, rsa
from .config import ConfigError, RunConfig, load_config
from .dataset import (DatasetManifest, ManifestEntry, center_crop_resize, load_grayscale,
                      phase_scramble, read_manifest, rotate_quarter, write_manifest, write_pgm)
from .synth import FAMILIES, synth_texture_set
from .trainer import train_features
from .v1 import build_filter_bank, v1_forward
from .v2 import v2_forward
from .weights import WeightFormatError, load_checkpoint, save_checkpoint

logger = logging.getLogger("v2tex")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class ValidationError(Exception):
    pass


@contextlib.contextmanager
def _thread_limit(threads):
    if not threads:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=threads):
        yield


def _manifest_or_fail(path) -> tuple[DatasetManifest, Path]:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"manifest not found: {p}")
    try:
        return read_manifest(p), p.parent
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def _prepare(img, cfg: RunConfig):
    if cfg.image_size and img.shape != (cfg.image_size, cfg.image_size):
        img = center_crop_resize(img, cfg.image_size)
    return img


def compute_v1(images, cfg: RunConfig) -> np.ndarray:
    images = [_prepare(im, cfg) for im in images]
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise ValidationError("images differ in size; set image_size to resize them")
    bank = build_filter_bank(cfg.steerable, shape)
    return np.stack([v1_forward(im, cfg.steerable, bank).channels for im in images])


def v2_gap(v1, params, pool, chunk=50) -> np.ndarray:
    return np.concatenate([classifier.gap_features(v2_forward(v1[i:i + chunk], params, "eval", pool).maps)
                           for i in range(0, len(v1), chunk)])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    if cfg.families > len(FAMILIES):
        raise ValidationError(f"families must be between 2 and {len(FAMILIES)}, got {cfg.families}")
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ValidationError(f"output directory {out} is not empty (use --force)")
    synth_texture_set(cfg.families, cfg.samples, cfg.image_size or 224, cfg.seed, out_dir=out)
    print(f"wrote {cfg.families * cfg.samples} images to {out}")
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    manifest, root = _manifest_or_fail(args.manifest)
    if not manifest.split("train"):
        raise ValidationError("manifest has no training images")
    out = Path(args.out)
    params = None
    if args.resume:
        if not out.exists():
            raise ValidationError(f"--resume given but {out} does not exist")
        params = load_checkpoint(out, (cfg.filters, 3 * cfg.scales * cfg.orientations, cfg.kernel, cfg.kernel))
        logger.info("resuming from step %d", params.step)
    images = []
    for e in manifest.split("train"):
        img = load_grayscale(manifest.resolve(e, root))
        images.append(img)
        if cfg.rotations:
            images.extend(rotate_quarter(img, k) for k in (1, 2, 3))
    v1 = compute_v1(images, cfg)
    tcfg = cfg.train_config
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")

    def on_step(p, log):
        if tcfg.checkpoint_every and p.step % tcfg.checkpoint_every == 0:
            save_checkpoint(p, out)

    params, log = train_features(v1, tcfg, params, on_step=on_step)
    save_checkpoint(params, out)
    log.write_csv(log_path, append=bool(args.resume))
    print(f"trained {len(log.rows)} steps (total {params.step}); weights -> {out}; log -> {log_path}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    manifest, root = _manifest_or_fail(args.manifest)
    train_e, test_e = manifest.split("train"), manifest.split(args.split)
    if not train_e or not test_e:
        raise ValidationError(f"manifest needs non-empty train and {args.split} splits")
    params = None
    if not args.v1_only:
        if not args.weights:
            raise ValidationError("--weights is required unless --v1-only")
        params = load_checkpoint(args.weights)
    out = Path(args.out_dir)

    def feats(entries):
        v1 = compute_v1([load_grayscale(manifest.resolve(e, root)) for e in entries], cfg)
        if params is None:
            return classifier.gap_features(v1)
        return v2_gap(v1, params, cfg.pool)

    Ftr, Fte = feats(train_e), feats(test_e)
    ytr = [e.label for e in train_e]
    if args.shuffle_labels:
        ytr = [ytr[i] for i in np.random.default_rng(cfg.seed).permutation(len(ytr))]
    yte = [e.label for e in test_e]
    model = classifier.fit_qda(Ftr, ytr, cfg.shrinkage, cfg.uniform_prior)
    ev = classifier.evaluate(model, Fte, yte)
    out.mkdir(parents=True, exist_ok=True)
    cm_path = out / "confusion.csv"
    classifier.write_confusion_csv(cm_path, ev)
    classifier.write_features_csv(out / "features_train.csv", [e.path for e in train_e], ytr, Ftr)
    classifier.write_features_csv(out / "features_test.csv", [e.path for e in test_e], yte, Fte)
    report = out / "report.csv"
    with open(report, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "accuracy", "count"])
        for c, a, n in zip(ev.classes, ev.per_class_accuracy, ev.confusion.sum(axis=1)):
            w.writerow([c, repr(float(a)), int(n)])
        w.writerow(["__overall__", repr(ev.accuracy), int(ev.confusion.sum())])
        w.writerow(["__confusion_matrix__", str(cm_path), ""])
    print(f"accuracy {ev.accuracy:.4f} on {len(yte)} {args.split} images; report -> {report}")
    return EXIT_OK


def _list_images(in_dir: Path):
    manifest_path = in_dir / "manifest.csv"
    if manifest_path.is_file():
        return read_manifest(manifest_path)
    files = sorted(p for p in in_dir.rglob("*") if p.suffix.lower() in (".pgm", ".png"))
    return DatasetManifest([ManifestEntry(str(p.relative_to(in_dir)), p.parent.name, "train") for p in files])


def cmd_scramble(args, cfg: RunConfig) -> int:
    in_dir, out = Path(args.in_dir), Path(args.out)
    if not in_dir.is_dir():
        raise ValidationError(f"input directory not found: {in_dir}")
    if out.resolve() == in_dir.resolve():
        raise ValidationError("output directory must differ from input directory")
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ValidationError(f"output directory {out} is not empty (use --force)")
    manifest = _list_images(in_dir)
    if not len(manifest):
        raise ValidationError(f"no images found in {in_dir}")
    seed = cfg.seed if args.seed is None else args.seed
    seeds = np.random.SeedSequence(seed).spawn(len(manifest))
    entries, clipped = [], 0
    for e, s in zip(manifest.entries, seeds):
        img = load_grayscale(manifest.resolve(e, in_dir))
        rel = str(Path(e.path).with_suffix(".pgm"))
        dst = out / rel
        dst.parent.mkdir(parents=True, exist_ok=True)
        scrambled = phase_scramble(img, s)
        clipped += int(np.count_nonzero((scrambled < 0) | (scrambled > 1)))
        write_pgm(dst, scrambled)
        entries.append(ManifestEntry(rel, e.label, e.split))
    if clipped:
        logger.warning("%d scrambled pixels fell outside [0, 1] and were clipped on write", clipped)
    write_manifest(DatasetManifest(entries), out / "manifest.csv")
    print(f"scrambled {len(entries)} images -> {out}")
    return EXIT_OK


def cmd_rsa(args, cfg: RunConfig) -> int:
    neural = Path(args.neural)
    if not neural.is_file():
        raise ValidationError(f"neural CSV not found: {neural}")
    out = Path(args.out_dir)
    _, neural_families, _, _ = rsa.read_neural_csv(neural)
    if args.self_compare:
        n_names, n_rdm = rsa.neural_family_rdm(neural)
        m_names, m_rdm = n_names, n_rdm
    else:
        if not args.weights or not args.stimuli:
            raise ValidationError("--weights and --stimuli are required unless --self-compare")
        manifest, root = _manifest_or_fail(args.stimuli)
        stimulus_families = list(dict.fromkeys(e.label for e in manifest.entries))
        missing = [f for f in stimulus_families if f not in neural_families]
        if missing:
            raise ValidationError(f"family missing from neural data: {', '.join(missing)}")
        params = load_checkpoint(args.weights)
        m_names, m_rdm = rsa.model_family_rdm(manifest, params, root, cfg.steerable, cfg.pool)
        n_names, n_rdm = rsa.neural_family_rdm(neural, m_names)
    rho = rsa.spearman_rdm(m_rdm, n_rdm)
    out.mkdir(parents=True, exist_ok=True)
    rsa.write_rdm_csv(out / "model_rdm.csv", m_names, m_rdm)
    rsa.write_rdm_csv(out / "neural_rdm.csv", n_names, n_rdm)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["conditions", "spearman_rho"])
        w.writerow([len(m_names), repr(rho)])
    print(f"spearman rho = {rho:.6f}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "scramble": cmd_scramble, "rsa": cmd_rsa}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="v2tex", description="Two-stage texture model tools")
    parser.add_argument("--config", help="key = value run configuration file")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS/FFT worker threads")
    parser.add_argument("--deterministic", action="store_true", help="single-threaded ordered reductions")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic texture dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--families", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--size", type=int, dest="image_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("train", help="self-supervised training of the V2 stage")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="weight file to write")
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    p.add_argument("--resume", action="store_true", help="continue from the weight file at --out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("eval", help="GAP features + QDA classification")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="test", choices=["val", "test", "train"])
    p.add_argument("--v1-only", action="store_true", help="classify V1 features (baseline)")
    p.add_argument("--shuffle-labels", action="store_true", help="permute training labels (chance control)")
    p.add_argument("--seed", type=int, help="seed for --shuffle-labels")

    p = sub.add_parser("scramble", help="phase-scramble every image of a dataset")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("rsa", help="compare model and neural family RDMs")
    p.add_argument("--weights")
    p.add_argument("--stimuli", help="stimulus manifest (labels are families)")
    p.add_argument("--neural", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--self-compare", action="store_true", help="use the neural RDM on the model side")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k, None) for k in ("families", "samples", "image_size", "seed",
                                                     "epochs", "lr", "batch")}
    if args.command == "scramble":
        overrides.pop("seed")
    try:
        cfg = load_config(args.config).with_overrides(**overrides)
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"v2tex {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    threads = 1 if args.deterministic else args.threads
    try:
        with _thread_limit(threads):
            return COMMANDS[args.command](args, cfg)
    except (ValidationError, ConfigError) as exc:
        print(f"v2tex {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, WeightFormatError, ValueError, ArithmeticError, rsa.RsaError) as exc:
        print(f"v2tex {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
