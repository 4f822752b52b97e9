"""Three-level contrastive pretraining for relational databases."""
import os as _os

# RELCONTRAST_NUM_THREADS caps BLAS/OpenMP worker threads; it only takes
# effect if set before numpy is first imported.
_threads = _os.environ.get("RELCONTRAST_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
