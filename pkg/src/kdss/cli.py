"""kdss command line: synth, split, subsample, merge, evaluate, baseline, inspect.

Exit codes: 0 success, 2 usage or input error, 1 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import baseline
from .core import ClassMap, FeatureSchema, validate_cloud
from .features import assemble, split
from .io import (
    BatchFormatError, ManifestError, PlyError, PredictionError, StaleManifestError,
    load_subsample_set, read_batch, read_batches, read_manifest, read_ply,
    read_predictions, verify_parent, write_batches, write_ply, write_predictions,
)
from .io.manifest import MANIFEST_NAME
from .metrics import FORMATS, confusion, render, report
from .sampling import REBUILD_POLICIES, KdssConfig, MergeError, merge, subsample
from .synth import SyntheticPlantSpec, synth_plant

log = logging.getLogger("kdss")


class InputError(Exception):
    pass


INPUT_ERRORS = (InputError, OSError, PlyError, ManifestError, PredictionError, MergeError,
                BatchFormatError, baseline.SchemaMismatchError, ValueError)


def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def seed_int(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2**64)")
    return v


def schema_arg(text: str) -> FeatureSchema:
    try:
        return FeatureSchema.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _size_summary(sizes) -> str:
    parts = [f"{c}x{s}" for s, c in sorted(Counter(sizes).items(), reverse=True)]
    return " + ".join(parts)


# -- commands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SyntheticPlantSpec(
        stem_height=args.stem_height, stem_radius=args.stem_radius,
        leaf_count=args.leaf_count, leaf_length=args.leaf_length, leaf_width=args.leaf_width,
        stem_points=args.stem_points, points_per_leaf=args.points_per_leaf,
        panicle_points=args.panicle_points, noise_sigma=args.noise, seed=args.seed,
    )
    cloud = synth_plant(spec)
    problems = validate_cloud(cloud)
    if problems:
        raise RuntimeError(f"generator produced an invalid cloud: {problems[0]}")
    write_ply(cloud, args.out, args.encoding)
    counts = np.bincount(cloud.labels, minlength=len(cloud.class_map))
    print(f"wrote {args.out}: {len(cloud)} points, "
          + ", ".join(f"{n}={c}" for n, c in zip(cloud.class_map.names, counts)))
    return 0


def cmd_split(args) -> int:
    if args.units:
        units = [u for u in args.units.split(",") if u]
    else:
        units = [str(i) for i in range(args.n_units)]
    try:
        fr = [float(f) for f in args.fractions.split(",")]
    except ValueError:
        raise InputError(f"bad --fractions {args.fractions!r}")
    if len(fr) not in (1, 2):
        raise InputError("--fractions takes train[,val]")
    fractions = {"train": fr[0], "val": fr[1] if len(fr) > 1 else 0.0}
    assignment = split(units, fractions, args.seed)
    counts = assignment.counts()
    print(f"seed={args.seed} train={counts['train']} val={counts['val']} test={counts['test']}")
    for tag in ("train", "val", "test"):
        if counts[tag]:
            print(f"{tag}: {','.join(map(str, assignment.units(tag)))}")
    if args.out:
        Path(args.out).write_text(json.dumps(
            {"seed": args.seed, "fractions": fractions, "assignment": assignment.tags},
            indent=1, sort_keys=True) + "\n")
    return 0


def cmd_subsample(args) -> int:
    cloud = read_ply(args.input)
    problems = validate_cloud(cloud)
    if problems:
        raise InputError(f"{args.input}: {len(problems)} problems, first: {problems[0]}")
    for ch in args.schema.channels:
        if not cloud.has(ch):
            raise InputError(f"missing channel: {ch}")
    config = KdssConfig(args.n, args.seed, rebuild_policy=args.rebuild_policy)
    sset = subsample(cloud, config)
    manifest = write_batches(cloud, sset.with_schema(args.schema), args.out_dir, args.input)
    print(f"{len(cloud)} points -> {len(sset)} sub-samples of N={args.n} "
          f"({_size_summary(sset.sizes)}), seed={args.seed}, schema={args.schema} "
          f"(width {args.schema.total_width})")
    print(f"manifest: {manifest.path}")
    return 0


def cmd_merge(args) -> int:
    manifest = read_manifest(args.manifest)
    verify_parent(manifest)
    cloud = read_ply(manifest.parent_path)
    sset = load_subsample_set(manifest)
    preds = read_predictions(args.predictions, manifest)
    result = merge(sset, preds)
    out = cloud.with_predictions(result.predicted)
    write_ply(out, args.out, args.encoding)
    print(f"merged {len(sset)} sub-samples -> {args.out} ({len(out)} points, "
          f"input had {manifest.parent_size})")
    return 0


def cmd_evaluate(args) -> int:
    truth = read_ply(args.truth)
    if truth.labels is None:
        raise InputError(f"{args.truth} has no label property")
    if args.predicted:
        other = read_ply(args.predicted)
        pred = other.predicted if other.predicted is not None else other.labels
        if pred is None:
            raise InputError(f"{args.predicted} has neither pred nor label property")
    else:
        pred = truth.predicted
        if pred is None:
            raise InputError(f"{args.truth} has no pred property; pass a prediction file")
    if len(pred) != len(truth.labels):
        raise InputError(f"point count mismatch: {len(truth.labels)} truth vs {len(pred)} predicted")
    if args.classes:
        if args.classes.isdigit():
            names = [str(i) for i in range(int(args.classes))]
        else:
            names = args.classes.split(",")
    elif truth.class_map is not None:
        names = list(truth.class_map.names)
    else:
        names = [str(i) for i in range(int(max(truth.labels.max(), pred.max())) + 1)]
    rep = report(confusion(truth.labels, pred, len(names)), names)
    text = render(rep, args.format)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


def _load_training(manifests):
    matrices, labels = [], []
    for m in manifests:
        _, mats, labs = read_batches(m)
        if labs is None:
            raise InputError(f"{m}: batches carry no labels")
        matrices.extend(mats)
        labels.extend(labs)
    return matrices, labels


def cmd_baseline_fit(args) -> int:
    matrices, labels = _load_training(args.manifest)
    model = baseline.fit(matrices, labels, args.k)
    baseline.save_model(model, args.out)
    print(f"fitted k={args.k} on {len(model)} rows, schema={model.schema} -> {args.out}")
    return 0


def cmd_baseline_predict(args) -> int:
    model = baseline.load_model(args.model)
    manifest = read_manifest(args.manifest)
    _, matrices, _ = read_batches(args.manifest)
    preds = [baseline.predict(model, m) for m in matrices]
    write_predictions(args.out_dir, manifest, preds)
    print(f"predicted {sum(len(p) for p in preds)} points in {len(preds)} batches -> {args.out_dir}")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    head = path.read_bytes()[:4]
    if head == b"ply\n" or head.startswith(b"ply"):
        cloud = read_ply(path)
        print(f"PLY point cloud: {len(cloud)} points")
        print(f"position dtype: {cloud.positions.dtype}")
        print(f"channels: {', '.join(cloud.channel_names()) or 'none'}")
        if cloud.class_map is not None:
            print(f"classes: {','.join(cloud.class_map.names)}")
        if cloud.labels is not None:
            print(f"label counts: {np.bincount(cloud.labels).tolist()}")
        problems = validate_cloud(cloud)
        print(f"validation: {'ok' if not problems else f'{len(problems)} problems, first: {problems[0]}'}")
    elif head == b"KDSS":
        b = read_batch(path)
        print(f"batch ordinal {b.ordinal}: {b.rows} rows x {b.width} features, "
              f"labels={'yes' if b.labels is not None else 'no'}, "
              f"predictions={'yes' if b.predictions is not None else 'no'}")
    elif head == baseline.MODEL_MAGIC:
        m = baseline.load_model(path)
        print(f"k-NN model: {len(m)} rows, schema={m.schema}, k_vote={m.k_vote}, classes={m.num_classes}")
    else:
        m = read_manifest(path)
        print(f"manifest: {path}")
        print(f"parent: {m.parent_file} ({m.parent_size} points, digest {m.parent_digest})")
        print(f"N: {m.n_per_sample}")
        print(f"seed: {m.seed} ({m.rng})")
        print(f"policy: {m.rebuild_policy}, centers: {m.center_strategy}")
        print(f"schema: {','.join(m.schema)} (width {m.feature_schema.total_width})")
        print(f"sub-samples: {len(m.subsamples)} sizes: {_size_summary(m.sizes)}")
        print(f"sizes: {m.sizes}")
        if m.class_names:
            print(f"classes: {','.join(m.class_names)}")
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kdss", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic labeled plant")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=seed_int, default=0)
    s.add_argument("--stem-height", type=float, default=1.0)
    s.add_argument("--stem-radius", type=float, default=0.015)
    s.add_argument("--leaf-count", type=int, default=6)
    s.add_argument("--leaf-length", type=float, default=0.35)
    s.add_argument("--leaf-width", type=float, default=0.05)
    s.add_argument("--stem-points", type=int, default=12000)
    s.add_argument("--points-per-leaf", type=int, default=5000)
    s.add_argument("--panicle-points", type=int, default=8000)
    s.add_argument("--noise", type=float, default=0.002)
    s.add_argument("--encoding", choices=("binary_le", "ascii"), default="binary_le")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="seeded train/val/test split of units")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--units", help="comma-separated unit ids")
    g.add_argument("--n-units", type=positive_int, help="use unit ids 0..n-1")
    s.add_argument("--fractions", default="0.9,0.1", help="train[,val]; remainder is test")
    s.add_argument("--seed", type=seed_int, default=0)
    s.add_argument("--out", help="write the assignment as JSON")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("subsample", help="KD-SS a PLY into batch files plus manifest")
    s.add_argument("input")
    s.add_argument("--n", type=positive_int, required=True, help="points per sub-sample")
    s.add_argument("--seed", type=seed_int, default=0)
    s.add_argument("--schema", type=schema_arg, default=FeatureSchema(("position",)),
                   help="comma-separated channels: position,color,normal,intensity,normalized_position")
    s.add_argument("--rebuild-policy", choices=REBUILD_POLICIES, default="on_first_overlap")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_subsample)

    s = sub.add_parser("merge", help="merge per-batch predictions into a full-resolution PLY")
    s.add_argument("manifest")
    s.add_argument("predictions", help="directory of prediction-bearing batch files")
    s.add_argument("--out", required=True)
    s.add_argument("--encoding", choices=("binary_le", "ascii"), default="binary_le")
    s.set_defaults(func=cmd_merge)

    s = sub.add_parser("evaluate", help="segmentation metrics")
    s.add_argument("truth")
    s.add_argument("predicted", nargs="?")
    s.add_argument("--classes", help="class names (comma-separated) or a class count")
    s.add_argument("--format", choices=FORMATS, default="human_table")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("baseline", help="k-NN voting backend")
    bsub = s.add_subparsers(dest="action", required=True)
    b = bsub.add_parser("fit")
    b.add_argument("--manifest", action="append", required=True)
    b.add_argument("--k", type=positive_int, default=5)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline_fit)
    b = bsub.add_parser("predict")
    b.add_argument("--model", required=True)
    b.add_argument("--manifest", required=True)
    b.add_argument("--out-dir", required=True)
    b.set_defaults(func=cmd_baseline_predict)

    s = sub.add_parser("inspect", help="summarise a PLY, manifest, batch or model file")
    s.add_argument("path")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"kdss {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"kdss {args.command}: internal error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
