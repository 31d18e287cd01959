"""Recovery of temporally causal latent processes from nonlinear mixtures."""
import os

_threads = os.environ.get("LEAP_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
