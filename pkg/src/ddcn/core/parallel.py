"""Thread-count control for the BLAS backend behind the convolution kernels."""
from __future__ import annotations

import contextlib

from threadpoolctl import threadpool_limits


@contextlib.contextmanager
def threads(n: int | None):
    """Limit BLAS threads inside the block; ``n=1`` is the deterministic mode."""
    if n is None or n <= 0:
        yield
        return
    with threadpool_limits(limits=n, user_api="blas"):
        yield
