# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled transportation kernel (dense network simplex).

Twin of ``pure.solve_kernel``: same northwest-corner start, same Dantzig
pivoting with a Bland fallback, same lexicographic leaving rule, so the
two backends return bit-identical plans.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def solve_kernel(
    cnp.ndarray[cnp.float64_t, ndim=2] cost_arr,
    cnp.ndarray[cnp.float64_t, ndim=1] a_arr,
    cnp.ndarray[cnp.float64_t, ndim=1] b_arr,
    long max_iter,
    double tol_enter,
    double zero_tol,
    long bland_threshold,
):
    """Solve min <cost, X> with row sums a and column sums b, X >= 0.

    Returns (flows, n_iter, status); status 1 means the iteration budget
    ran out. Inputs are assumed validated and balanced by the dispatcher.
    """
    cdef Py_ssize_t m = cost_arr.shape[0]
    cdef Py_ssize_t n = cost_arr.shape[1]
    cdef Py_ssize_t nodes = m + n

    cdef cnp.ndarray[cnp.float64_t, ndim=2] x_arr = np.zeros((m, n))
    cdef double[:, ::1] x = x_arr
    cdef double[:, ::1] cost = np.ascontiguousarray(cost_arr)
    cdef double[::1] ra = a_arr.copy()
    cdef double[::1] rb = b_arr.copy()

    # adjacency of the basis tree as linked lists; at most m + n - 1 edges,
    # each stored twice (once per endpoint); slots are reused after removal
    cdef Py_ssize_t max_slots = 2 * (nodes - 1) if nodes > 1 else 2
    cdef long[::1] head = np.full(nodes, -1, dtype=np.int64)
    cdef long[::1] nxt = np.full(max_slots, -1, dtype=np.int64)
    cdef long[::1] prev = np.full(max_slots, -1, dtype=np.int64)
    cdef long[::1] to = np.full(max_slots, -1, dtype=np.int64)
    cdef long[::1] free_slots = np.arange(max_slots - 1, -1, -1, dtype=np.int64)
    cdef Py_ssize_t n_free = max_slots

    cdef double[::1] u = np.zeros(m)
    cdef double[::1] v = np.zeros(n)
    cdef long[::1] parent = np.empty(nodes, dtype=np.int64)
    cdef cnp.uint8_t[::1] visited = np.zeros(nodes, dtype=np.uint8)
    cdef long[::1] stack = np.empty(nodes, dtype=np.int64)
    cdef long[::1] path = np.empty(nodes, dtype=np.int64)

    cdef Py_ssize_t i, j, node, nb, slot, top, plen, t, p, q
    cdef Py_ssize_t ei, ej, ci, cj, li, lj, target
    cdef double tmove, r, rbest, theta, flow
    cdef long n_iter = 0
    cdef long degenerate_run = 0
    cdef bint bland = False
    cdef bint found = False

    # --- northwest corner ---
    i = 0
    j = 0
    while True:
        tmove = ra[i] if ra[i] < rb[j] else rb[j]
        x[i, j] = tmove
        ra[i] -= tmove
        rb[j] -= tmove
        # add edge i <-> m + j (twice, one per endpoint)
        n_free -= 1
        slot = free_slots[n_free]
        to[slot] = m + j
        nxt[slot] = head[i]
        prev[slot] = -1
        if head[i] >= 0:
            prev[head[i]] = slot
        head[i] = slot
        n_free -= 1
        slot = free_slots[n_free]
        to[slot] = i
        nxt[slot] = head[m + j]
        prev[slot] = -1
        if head[m + j] >= 0:
            prev[head[m + j]] = slot
        head[m + j] = slot
        if i == m - 1 and j == n - 1:
            break
        # once a boundary is reached only the other index may move, even
        # when rounding leaves dust in the exhausted marginal
        if j == n - 1 or (ra[i] <= rb[j] and i < m - 1):
            i += 1
        else:
            j += 1

    while True:
        if n_iter >= max_iter:
            return x_arr, n_iter, 1

        # --- duals from the tree, rooted at row node 0 ---
        for node in range(nodes):
            visited[node] = 0
        visited[0] = 1
        u[0] = 0.0
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            slot = head[node]
            while slot >= 0:
                nb = to[slot]
                if visited[nb] == 0:
                    visited[nb] = 1
                    if node < m:
                        v[nb - m] = cost[node, nb - m] - u[node]
                    else:
                        u[nb] = cost[nb, node - m] - v[node - m]
                    stack[top] = nb
                    top += 1
                slot = nxt[slot]

        # --- entering cell ---
        ei = -1
        ej = -1
        if bland:
            found = False
            for i in range(m):
                if found:
                    break
                for j in range(n):
                    r = (cost[i, j] - u[i]) - v[j]
                    if r < -tol_enter:
                        ei = i
                        ej = j
                        found = True
                        break
            if not found:
                return x_arr, n_iter, 0
        else:
            rbest = -tol_enter
            for i in range(m):
                for j in range(n):
                    r = (cost[i, j] - u[i]) - v[j]
                    if r < rbest:
                        rbest = r
                        ei = i
                        ej = j
            if ei < 0:
                return x_arr, n_iter, 0

        # --- cycle: tree path from column node m + ej back to row node ei ---
        for node in range(nodes):
            visited[node] = 0
        visited[ei] = 1
        parent[ei] = -1
        stack[0] = ei
        top = 1
        target = m + ej
        while top > 0:
            top -= 1
            node = stack[top]
            if node == target:
                break
            slot = head[node]
            while slot >= 0:
                nb = to[slot]
                if visited[nb] == 0:
                    visited[nb] = 1
                    parent[nb] = node
                    stack[top] = nb
                    top += 1
                slot = nxt[slot]
        plen = 0
        node = target
        while True:
            path[plen] = node
            plen += 1
            if node == ei:
                break
            node = parent[node]

        # --- theta and the leaving cell (lexicographic tie-break) ---
        theta = -1.0
        li = -1
        lj = -1
        for t in range(plen - 1):
            if t % 2 != 0:
                continue
            p = path[t]
            q = path[t + 1]
            if p >= m:
                ci = q
                cj = p - m
            else:
                ci = p
                cj = q - m
            flow = x[ci, cj]
            if theta < 0.0 or flow < theta:
                theta = flow
                li = ci
                lj = cj
            elif flow == theta and (ci < li or (ci == li and cj < lj)):
                li = ci
                lj = cj

        # --- apply the pivot ---
        for t in range(plen - 1):
            p = path[t]
            q = path[t + 1]
            if p >= m:
                ci = q
                cj = p - m
            else:
                ci = p
                cj = q - m
            if t % 2 == 0:
                x[ci, cj] -= theta
            else:
                x[ci, cj] += theta
        x[ei, ej] += theta
        x[li, lj] = 0.0

        # remove leaving edge li <-> m + lj from both endpoint lists
        slot = head[li]
        while slot >= 0:
            if to[slot] == m + lj:
                if prev[slot] >= 0:
                    nxt[prev[slot]] = nxt[slot]
                else:
                    head[li] = nxt[slot]
                if nxt[slot] >= 0:
                    prev[nxt[slot]] = prev[slot]
                free_slots[n_free] = slot
                n_free += 1
                break
            slot = nxt[slot]
        slot = head[m + lj]
        while slot >= 0:
            if to[slot] == li:
                if prev[slot] >= 0:
                    nxt[prev[slot]] = nxt[slot]
                else:
                    head[m + lj] = nxt[slot]
                if nxt[slot] >= 0:
                    prev[nxt[slot]] = prev[slot]
                free_slots[n_free] = slot
                n_free += 1
                break
            slot = nxt[slot]

        # add entering edge ei <-> m + ej
        n_free -= 1
        slot = free_slots[n_free]
        to[slot] = m + ej
        nxt[slot] = head[ei]
        prev[slot] = -1
        if head[ei] >= 0:
            prev[head[ei]] = slot
        head[ei] = slot
        n_free -= 1
        slot = free_slots[n_free]
        to[slot] = ei
        nxt[slot] = head[m + ej]
        prev[slot] = -1
        if head[m + ej] >= 0:
            prev[head[m + ej]] = slot
        head[m + ej] = slot

        if theta <= zero_tol:
            degenerate_run += 1
            if degenerate_run > bland_threshold:
                bland = True
        else:
            degenerate_run = 0
            bland = False
        n_iter += 1
