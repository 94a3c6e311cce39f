"""Transportation-problem kernels: compiled core with a pure NumPy fallback.

The compiled Cython kernel is used when importable; set
``FAIRAUDIT_FORCE_PURE=1`` to force the fallback.  Both backends implement
the identical algorithm and tie-breaking, so plans are bit-for-bit equal.
"""

from __future__ import annotations

import os

import numpy as np

from . import pure as _pure

__all__ = ["solve_transport", "TransportIterationError", "backend_name"]


def _load_backend():
    if os.environ.get("FAIRAUDIT_FORCE_PURE", "0") not in ("", "0"):
        return _pure, "pure"
    try:
        from . import _transport  # compiled extension, optional

        return _transport, "compiled"
    except ImportError:
        return _pure, "pure"


_BACKEND, _BACKEND_NAME = _load_backend()


def backend_name() -> str:
    """Name of the active kernel backend: "compiled" or "pure"."""
    return _BACKEND_NAME


class TransportIterationError(RuntimeError):
    """Pivot loop exhausted its iteration budget before reaching optimality."""

    def __init__(self, n_iter: int, max_iter: int, objective: float):
        self.n_iter = n_iter
        self.max_iter = max_iter
        self.objective = objective
        super().__init__(
            f"transport solver hit the iteration limit "
            f"(performed {n_iter} of max {max_iter} pivots; "
            f"current objective {objective!r})"
        )


def solve_transport(
    cost: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    forbidden: np.ndarray | None = None,
    max_iter: int | None = None,
    backend: str | None = None,
) -> tuple[np.ndarray, float, int]:
    """Solve min <cost, X> s.t. X >= 0, row sums = a, column sums = b.

    Parameters
    ----------
    cost : (m, n) finite cost matrix.
    a, b : nonnegative marginals with equal totals.
    forbidden : optional boolean mask of cells that must carry zero flow;
        implemented with a prohibitive cost that keeps them out of every
        basis, so returned flows are exactly 0.0 there.
    max_iter : pivot budget, default 1000 + 20 * m * n.
    backend : "pure" or "compiled" to override the import-time choice.

    Returns
    -------
    (flows, objective, n_iter); the objective uses the caller's costs.
    """
    cost = np.ascontiguousarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-d matrix")
    m, n = cost.shape
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    if a.shape != (m,) or b.shape != (n,):
        raise ValueError("marginal lengths must match the cost matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("marginals must be nonnegative")
    total = a.sum()
    scale = max(total, 1.0)
    if abs(total - b.sum()) > 1e-9 * scale:
        raise ValueError(
            f"unbalanced marginals: row total {a.sum()!r} vs column total {b.sum()!r}"
        )

    work = cost
    if forbidden is not None:
        forbidden = np.asarray(forbidden, dtype=bool)
        if forbidden.shape != (m, n):
            raise ValueError("forbidden mask shape must match the cost matrix")
        if forbidden.any():
            cmax = float(np.abs(cost).max()) if cost.size else 0.0
            big = 4.0 * (m + n + 1) * (cmax + 1.0)
            work = cost.copy()
            work[forbidden] = big

    if max_iter is None:
        max_iter = 1000 + 20 * m * n
    tol_enter = 1e-10 * max(1.0, float(np.abs(work).max()) if work.size else 1.0)
    zero_tol = 1e-14 * max(float(a.max(initial=0.0)), float(b.max(initial=0.0)), 1.0)
    bland_threshold = 2 * (m + n)

    if backend is None:
        kernel = _BACKEND
    elif backend == "pure":
        kernel = _pure
    elif backend == "compiled":
        from . import _transport as kernel  # raises ImportError if absent
    else:
        raise ValueError(f"unknown backend {backend!r}")

    flows, n_iter, status = kernel.solve_kernel(
        work, a, b, int(max_iter), tol_enter, zero_tol, bland_threshold
    )
    objective = float(np.sum(flows * cost))
    if status != 0:
        raise TransportIterationError(n_iter, int(max_iter), objective)
    return flows, objective, n_iter
