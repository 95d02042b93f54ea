"""Time and peak memory of KD-SS on uniform random points.

Prints one JSON line: points, N, sub-samples, seconds, peak RSS in MiB.
Run it in a fresh process so the RSS figure belongs to this job alone.
"""
import argparse
import json
import resource
import time

import numpy as np

from kdss.core import PointCloud, check_partition
from kdss.sampling import KdssConfig, subsample


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--points", type=int, default=1_000_000)
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", default="on_first_overlap")
    a = p.parse_args(argv)

    # warm the compiled kernels so the timing covers the algorithm only
    subsample(PointCloud(np.random.default_rng(1).random((64, 3))), KdssConfig(8, 0))

    cloud = PointCloud(np.random.default_rng(a.seed).random((a.points, 3)))
    t0 = time.perf_counter()
    sset = subsample(cloud, KdssConfig(a.n, a.seed, rebuild_policy=a.policy))
    seconds = time.perf_counter() - t0
    check_partition(sset)
    peak_kib = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    print(json.dumps({"points": a.points, "n_per_sample": a.n, "subsamples": len(sset),
                      "seconds": round(seconds, 3), "peak_rss_mib": round(peak_kib / 1024, 1)}))


if __name__ == "__main__":
    main()
