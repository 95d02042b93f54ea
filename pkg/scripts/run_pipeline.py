"""Desk-scale pipeline on synthetic plants through the ``kdss`` command line.

synth -> split -> subsample -> baseline fit/predict -> merge -> evaluate.
Prints one JSON summary line at the end (accuracy, mIoU, seconds).
"""
import argparse
import json
import tempfile
import time
from pathlib import Path

from kdss.cli import main as kdss
from kdss.features import split
from kdss.io import read_ply
from kdss.metrics import parse_json_lines


def sh(*argv):
    code = kdss([str(a) for a in argv])
    if code:
        raise SystemExit(f"kdss {' '.join(map(str, argv))} exited {code}")


def run(work: Path, plants: int, test_plants: int, n: int, k: int, seed: int,
        schema: str, stem_points: int, points_per_leaf: int, panicle_points: int):
    t0 = time.perf_counter()
    names = [f"plant{i:02d}" for i in range(plants)]
    for i, name in enumerate(names):
        sh("synth", "--out", work / f"{name}.ply", "--seed", seed + i,
           "--stem-points", stem_points, "--points-per-leaf", points_per_leaf,
           "--panicle-points", panicle_points)
    assignment = split(names, {"train": (plants - test_plants) / plants}, seed)
    train, test = assignment.units("train"), assignment.units("test")
    print(f"train: {train}  test: {test}")

    for name in names:
        sh("subsample", work / f"{name}.ply", "--n", n, "--seed", seed, "--schema", schema,
           "--out-dir", work / name)
    sh("baseline", "fit", *[a for t in train for a in ("--manifest", work / t)],
       "--k", k, "--out", work / "model.bin")

    reports = {}
    for name in test:
        sh("baseline", "predict", "--model", work / "model.bin", "--manifest", work / name,
           "--out-dir", work / f"{name}_pred")
        sh("merge", work / name, work / f"{name}_pred", "--out", work / f"{name}_merged.ply")
        merged = read_ply(work / f"{name}_merged.ply")
        original = read_ply(work / f"{name}.ply")
        assert len(merged) == len(original)
        sh("evaluate", work / f"{name}_merged.ply", "--format", "json_lines",
           "--out", work / f"{name}_metrics.jsonl")
        reports[name] = parse_json_lines((work / f"{name}_metrics.jsonl").read_text())

    rep = reports[test[0]]
    return {
        "test_plant": test[0],
        "overall_accuracy": rep.overall_accuracy,
        "mean_iou": rep.mean_iou,
        "points": int(sum(rep.support)),
        "seconds": time.perf_counter() - t0,
    }


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--work", help="working directory (default: a temporary one)")
    p.add_argument("--plants", type=int, default=6)
    p.add_argument("--test-plants", type=int, default=1)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schema", default="position,color,normal")
    p.add_argument("--stem-points", type=int, default=12000)
    p.add_argument("--points-per-leaf", type=int, default=5000)
    p.add_argument("--panicle-points", type=int, default=8000)
    return p.parse_args(argv)


if __name__ == "__main__":
    a = parse_args()
    kw = dict(plants=a.plants, test_plants=a.test_plants, n=a.n, k=a.k, seed=a.seed,
              schema=a.schema, stem_points=a.stem_points, points_per_leaf=a.points_per_leaf,
              panicle_points=a.panicle_points)
    if a.work:
        Path(a.work).mkdir(parents=True, exist_ok=True)
        summary = run(Path(a.work), **kw)
    else:
        with tempfile.TemporaryDirectory() as d:
            summary = run(Path(d), **kw)
    print(json.dumps(summary))
