"""AFDM link-level simulation toolkit.

Baseband AFDM modem, doubly-dispersive channel models, Wiener phase noise,
a joint phase-noise / off-grid delay-Doppler SBL channel estimator with
baselines, MMSE detection, and a seeded Monte Carlo sweep harness.
"""

# The linear algebra here is all small (N=64-scale); BLAS thread pools are
# pure overhead and parallelism belongs to trial-level worker processes.
try:
    import threadpoolctl as _threadpoolctl

    _blas_limit = _threadpoolctl.threadpool_limits(limits=1, user_api="blas")
except ImportError:  # pragma: no cover
    _blas_limit = None

from afdmsim.modem import AfdmConfig

__all__ = ["AfdmConfig"]
__version__ = "0.1.0"
