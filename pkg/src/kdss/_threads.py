import os

import numba

# the bundled TBB is too old for numba and only produces a warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def apply_thread_cap() -> None:
    """Honour KDSS_THREADS as an upper bound on numba worker threads."""
    cap = os.environ.get("KDSS_THREADS")
    if cap:
        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))
