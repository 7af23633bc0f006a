"""Discrete-event cross-check simulator: mobility plus slotted CSMA/CA.

The per-slot MAC kernel is the hot loop; a compiled extension is used
when available and a pure-numpy fallback otherwise. Set
``VANETPERF_FORCE_PYTHON=1`` to force the fallback. Both backends are
bit-identical for identical inputs.
"""

import os

from . import _mac_kernel_py

if os.environ.get("VANETPERF_FORCE_PYTHON"):
    _kernel = _mac_kernel_py
else:
    try:
        from . import _mac_kernel as _kernel  # type: ignore[attr-defined]
    except ImportError:
        _kernel = _mac_kernel_py

KERNEL_BACKEND = _kernel.BACKEND
simulate_cch = _kernel.simulate_cch

from .core import (  # noqa: E402
    SimConfig,
    SimResult,
    StaticCellResult,
    run,
    run_static_density,
    empirical_density,
    contention_mc_oracle,
    contention_mc_exact,
    measure_cch,
)

__all__ = [
    "KERNEL_BACKEND",
    "simulate_cch",
    "SimConfig",
    "SimResult",
    "StaticCellResult",
    "run",
    "run_static_density",
    "empirical_density",
    "contention_mc_oracle",
    "contention_mc_exact",
    "measure_cch",
]
