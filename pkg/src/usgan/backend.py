"""Compute-backend selection for the hot numeric kernels.

Two implementations exist for every hot kernel: a numba ``@njit`` version and
a pure-numpy fallback. Selection is controlled by the ``USGAN_BACKEND``
environment variable:

  * ``auto`` (default) — use numba when it imports cleanly, else numpy
  * ``numba``          — require numba, raise if unavailable
  * ``numpy``          — force the pure-numpy path

``benchmarks/backend_bench.py`` compares the two paths on the same inputs.
"""

from __future__ import annotations

import os

_VALID = ("auto", "numba", "numpy")


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except Exception:
        return False
    return True


def backend_name() -> str:
    """Resolve the active backend ("numba" or "numpy") from the environment."""
    choice = os.environ.get("USGAN_BACKEND", "auto").lower()
    if choice not in _VALID:
        raise ValueError(f"USGAN_BACKEND must be one of {_VALID}, got {choice!r}")
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _numba_available():
            raise RuntimeError("USGAN_BACKEND=numba but numba is not importable")
        return "numba"
    return "numba" if _numba_available() else "numpy"


def use_numba() -> bool:
    return backend_name() == "numba"


def use_numba_conv() -> bool:
    """Whether the convolution kernels should take the numba path.

    ``auto`` resolves to numpy here: benchmarks/backend_bench.py shows the
    im2col + BLAS fallback is 5-25x faster than the direct-loop numba
    convolution on a single core (BLAS dominates at these channel counts),
    so only an explicit USGAN_BACKEND=numba selects it. The phantom
    renderer's gather-style sampler still benefits from numba under
    ``auto``.
    """
    return os.environ.get("USGAN_BACKEND", "auto").lower() == "numba" and use_numba()
