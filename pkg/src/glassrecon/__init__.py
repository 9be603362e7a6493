"""Transparent-object reconstruction by differentiable refraction tracing."""
import os

# the bundled TBB is too old for numba; fall back to its portable thread pool
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
