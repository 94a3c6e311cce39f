"""Pure NumPy transportation solver (dense network simplex).

This is the fallback twin of the compiled kernel in ``_transport.pyx``.
Both implement the same algorithm with the same deterministic tie-breaking,
so they produce identical plans:

- initial basis from the northwest-corner rule (exactly m + n - 1 basic
  cells, zero-flow cells kept to preserve the spanning tree),
- Dantzig pivoting (most negative reduced cost, first in row-major order),
- Bland's rule fallback after a run of degenerate pivots, which guarantees
  termination,
- leaving cell: minimal flow on the cycle, ties broken lexicographically.

Nodes 0..m-1 are rows, m..m+n-1 are columns; the basis is a spanning tree
on those m + n nodes, and duals are recomputed from the root by search.
"""

from __future__ import annotations

import numpy as np


def _northwest_corner(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Initial basic feasible solution with exactly m + n - 1 basic cells."""
    m, n = a.shape[0], b.shape[0]
    x = np.zeros((m, n))
    basic: list[tuple[int, int]] = []
    ra = a.astype(float).copy()
    rb = b.astype(float).copy()
    i = j = 0
    while True:
        t = min(ra[i], rb[j])
        x[i, j] = t
        basic.append((i, j))
        ra[i] -= t
        rb[j] -= t
        if i == m - 1 and j == n - 1:
            break
        # advance exactly one index per step so the basis stays a tree;
        # once a boundary is reached only the other index may move, even
        # when rounding leaves dust in the exhausted marginal
        if j == n - 1 or (ra[i] <= rb[j] and i < m - 1):
            i += 1
        else:
            j += 1
    return x, basic


def solve_kernel(
    cost: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    max_iter: int,
    tol_enter: float,
    zero_tol: float,
    bland_threshold: int,
) -> tuple[np.ndarray, int, int]:
    """Solve min <cost, X> with row sums a and column sums b, X >= 0.

    Returns (flows, n_iter, status) with status 0 when optimal and 1 when
    the iteration budget ran out.  Inputs are assumed validated and
    balanced by the dispatcher.
    """
    cost = np.ascontiguousarray(cost, dtype=float)
    m, n = cost.shape
    x, basic = _northwest_corner(a, b)

    # spanning tree adjacency over nodes: rows 0..m-1, cols m..m+n-1
    adj: list[set[int]] = [set() for _ in range(m + n)]
    for i, j in basic:
        adj[i].add(m + j)
        adj[m + j].add(i)

    u = np.zeros(m)
    v = np.zeros(n)
    parent = np.empty(m + n, dtype=np.int64)
    visited = np.empty(m + n, dtype=bool)

    bland = False
    degenerate_run = 0
    n_iter = 0
    while True:
        if n_iter >= max_iter:
            return x, n_iter, 1
        # duals from the tree: u[0] = 0, C[i, j] = u[i] + v[j] on basic cells
        visited[:] = False
        visited[0] = True
        u[0] = 0.0
        queue = [0]
        while queue:
            node = queue.pop()
            for nb in adj[node]:
                if not visited[nb]:
                    visited[nb] = True
                    if node < m:
                        v[nb - m] = cost[node, nb - m] - u[node]
                    else:
                        u[nb] = cost[nb, node - m] - v[node - m]
                    queue.append(nb)

        r = cost - u[:, None] - v[None, :]
        if bland:
            eligible = (r < -tol_enter).ravel()
            flat = int(np.argmax(eligible))
            if not eligible[flat]:
                return x, n_iter, 0
        else:
            flat = int(np.argmin(r.ravel()))
            if r.ravel()[flat] >= -tol_enter:
                return x, n_iter, 0
        ei, ej = divmod(flat, n)

        # cycle: tree path from entering column node back to entering row
        visited[:] = False
        visited[ei] = True
        parent[ei] = -1
        queue = [ei]
        target = m + ej
        while queue:
            node = queue.pop()
            if node == target:
                break
            for nb in adj[node]:
                if not visited[nb]:
                    visited[nb] = True
                    parent[nb] = node
                    queue.append(nb)
        path = [target]
        while path[-1] != ei:
            path.append(int(parent[path[-1]]))

        # walk edges from the column end; even positions lose flow
        minus_cells: list[tuple[int, int]] = []
        plus_cells: list[tuple[int, int]] = []
        for t in range(len(path) - 1):
            p, q = path[t], path[t + 1]
            cell = (q, p - m) if p >= m else (p, q - m)
            (minus_cells if t % 2 == 0 else plus_cells).append(cell)

        theta = min(x[c] for c in minus_cells)
        leave = min(c for c in minus_cells if x[c] == theta)

        for c in minus_cells:
            x[c] -= theta
        for c in plus_cells:
            x[c] += theta
        x[ei, ej] += theta
        x[leave] = 0.0

        adj[leave[0]].discard(m + leave[1])
        adj[m + leave[1]].discard(leave[0])
        adj[ei].add(m + ej)
        adj[m + ej].add(ei)

        if theta <= zero_tol:
            degenerate_run += 1
            if degenerate_run > bland_threshold:
                bland = True
        else:
            degenerate_run = 0
            bland = False
        n_iter += 1
