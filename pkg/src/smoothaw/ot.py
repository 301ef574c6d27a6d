"""Exact optimal transport between finitely supported measures.

The general solver is a primal network simplex on the transportation
polytope (spanning-tree bases, node potentials, Dantzig pricing with a
Bland fallback under degeneracy). Square problems with uniform weights are
assignment problems and go to ``scipy.optimize.linear_sum_assignment``,
which is exact for them.
"""

import csv
import io
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidInputError, ResourceCapError

__all__ = [
    "CostSpec",
    "TransportPlan",
    "cost_matrix",
    "solve_transport",
    "wasserstein_discrete",
    "wasserstein_1d_quantile",
    "plan_to_csv",
]

DEFAULT_SIZE_CAP = 4_000_000
PIVOT_TOL = 1e-12
_BLOCK_ROWS = 512


@dataclass(frozen=True)
class CostSpec:
    """Transport cost between paths.

    ``euclidean_power`` is ``|x - y|^p`` with the l2 norm on the whole path;
    ``per_step_sum`` is ``sum_t |x_t - y_t|^p``.
    """

    p: float = 2.0
    mode: str = "euclidean_power"

    def __post_init__(self):
        if not self.p >= 1:
            raise InvalidInputError(f"cost exponent must be >= 1, got {self.p}")
        if self.mode not in ("euclidean_power", "per_step_sum"):
            raise InvalidInputError(f"unknown cost mode {self.mode!r}")


@dataclass(frozen=True)
class TransportPlan:
    matrix: np.ndarray
    objective: float

    def marginal_residual(self, a, b):
        return max(
            float(np.max(np.abs(self.matrix.sum(axis=1) - a))),
            float(np.max(np.abs(self.matrix.sum(axis=0) - b))),
        )


def cost_matrix(x, y, cost):
    """Cost between path arrays ``x`` (n, T, d) and ``y`` (m, T, d), built in row blocks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = x.shape[0], y.shape[0]
    out = np.empty((n, m))
    for s in range(0, n, _BLOCK_ROWS):
        diff = x[s : s + _BLOCK_ROWS, None] - y[None]
        if cost.mode == "euclidean_power":
            sq = np.sum(diff**2, axis=(2, 3))
            out[s : s + _BLOCK_ROWS] = sq if cost.p == 2 else np.sqrt(sq) ** cost.p
        else:
            sq = np.sum(diff**2, axis=3)
            step = sq if cost.p == 2 else np.sqrt(sq) ** cost.p
            out[s : s + _BLOCK_ROWS] = step.sum(axis=2)
    return out


# -- network simplex -------------------------------------------------------------


def _least_cost_basis(a, b, C):
    """Greedy least-cost allocation completed to a spanning tree with zero flows."""
    n, m = C.shape
    ra = np.array(a, dtype=float)
    rb = np.array(b, dtype=float)
    tiny = 1e-15
    row_dead = np.zeros(n, dtype=bool)
    col_dead = np.zeros(m, dtype=bool)
    flow = {}
    rows_left, cols_left = n, m
    for k in np.argsort(C, axis=None, kind="stable"):
        i, j = divmod(int(k), m)
        if row_dead[i] or col_dead[j]:
            continue
        q = min(ra[i], rb[j])
        flow[(i, j)] = q
        ra[i] -= q
        rb[j] -= q
        if ra[i] <= tiny:
            row_dead[i] = True
            rows_left -= 1
        if rb[j] <= tiny:
            col_dead[j] = True
            cols_left -= 1
        if rows_left == 0 or cols_left == 0:
            break
    # the greedy allocation is a forest; join its components with zero-flow cells
    parent = list(range(n + m))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in flow:
        parent[find(i)] = find(n + j)
    hub_row, hub_col = next(iter(flow))
    hub = find(hub_row)
    for k in range(n + m):
        rk = find(k)
        if rk == hub:
            continue
        cell = (k, hub_col) if k < n else (hub_row, k - n)
        flow[cell] = 0.0
        parent[rk] = hub
    return flow


class _Basis:
    """Spanning-tree basis over ``n`` row nodes and ``m`` column nodes.

    Node ``k < n`` is row ``k``; node ``n + j`` is column ``j``. Potentials,
    parents and depths are kept consistent across pivots by re-rooting only
    the subtree cut off by the leaving edge.
    """

    def __init__(self, n, m, flow, C):
        self.n, self.m = n, m
        self.C = C
        self.flow = flow
        self.adj = [set() for _ in range(n + m)]
        for i, j in flow:
            self.adj[i].add(n + j)
            self.adj[n + j].add(i)
        self.u = np.zeros(n)
        self.v = np.zeros(m)
        self.parent = np.full(n + m, -1)
        self.depth = np.zeros(n + m, dtype=np.int64)
        seen = self._grow(0, -1)
        if len(seen) != n + m:
            raise RuntimeError("transport basis is not a spanning tree")

    def _grow(self, root, root_parent):
        """BFS from ``root`` away from ``root_parent``; sets parent, depth, potentials."""
        n, C = self.n, self.C
        self.parent[root] = root_parent
        if root_parent < 0:
            self.depth[root] = 0
            if root < n:
                self.u[root] = 0.0
            else:
                self.v[root - n] = 0.0
        else:
            self.depth[root] = self.depth[root_parent] + 1
            if root < n:
                self.u[root] = C[root, root_parent - n] - self.v[root_parent - n]
            else:
                self.v[root - n] = C[root_parent, root - n] - self.u[root_parent]
        order = [root]
        dq = deque([root])
        while dq:
            k = dq.popleft()
            for l in self.adj[k]:
                if l == self.parent[k]:
                    continue
                self.parent[l] = k
                self.depth[l] = self.depth[k] + 1
                if l >= n:
                    self.v[l - n] = C[k, l - n] - self.u[k]
                else:
                    self.u[l] = C[l, k - n] - self.v[k - n]
                order.append(l)
                dq.append(l)
        return order

    def cycle(self, i, j):
        """Tree path from column node ``j`` to row node ``i``."""
        a, b = self.n + j, i
        left, right = [a], [b]
        pa, pb = a, b
        while self.depth[pa] > self.depth[pb]:
            pa = self.parent[pa]
            left.append(pa)
        while self.depth[pb] > self.depth[pa]:
            pb = self.parent[pb]
            right.append(pb)
        while pa != pb:
            pa = self.parent[pa]
            pb = self.parent[pb]
            left.append(pa)
            right.append(pb)
        return left + right[-2::-1]

    def edge(self, k, l):
        return (k, l - self.n) if k < self.n else (l, k - self.n)

    def pivot(self, i, j):
        n = self.n
        path = self.cycle(i, j)
        # entering (i, j) carries +theta; edges along the path alternate -, +, ...
        minus_idx = range(0, len(path) - 1, 2)
        theta = math.inf
        leave = None
        for s in minus_idx:
            e = self.edge(path[s], path[s + 1])
            f = self.flow[e]
            if f < theta:
                theta, leave, leave_nodes = f, e, (path[s], path[s + 1])
        for s in range(len(path) - 1):
            e = self.edge(path[s], path[s + 1])
            self.flow[e] += -theta if s % 2 == 0 else theta
        self.flow[(i, j)] = theta
        del self.flow[leave]
        a, b = leave_nodes
        self.adj[a].discard(b)
        self.adj[b].discard(a)
        self.adj[i].add(n + j)
        self.adj[n + j].add(i)
        # the deeper endpoint of the leaving edge roots the detached subtree,
        # which contains exactly one endpoint of the entering edge
        child = a if self.parent[a] == b else b
        sub = self._subtree(child)
        if i in sub:
            self._grow(i, n + j)
        else:
            self._grow(n + j, i)
        return theta

    def _subtree(self, child):
        seen = {child}
        dq = deque([child])
        while dq:
            k = dq.popleft()
            for l in self.adj[k]:
                if l not in seen and self.parent[l] == k:
                    seen.add(l)
                    dq.append(l)
        return seen


def _network_simplex(a, b, C, max_iter=None):
    n, m = C.shape
    basis = _Basis(n, m, _least_cost_basis(a, b, C), C)
    scale = max(1.0, float(np.max(np.abs(C))))
    tol = PIVOT_TOL * scale
    max_iter = max_iter or 50 * (n + m) * max(10, int(math.log2(n * m + 2)))
    block = max(1, min(n, int(math.ceil(4 * math.sqrt(n * m) / m))))
    start = 0
    degenerate_run = 0
    for _ in range(max_iter):
        if degenerate_run > n + m:
            # Bland: first eligible cell in index order
            red = C - basis.u[:, None] - basis.v[None, :]
            cand = np.flatnonzero(red.reshape(-1) < -tol)
            if cand.size == 0:
                break
            i, j = divmod(int(cand[0]), m)
        else:
            # block pricing over row blocks, cyclically
            found = False
            for step in range(0, n, block):
                r0 = (start + step) % n
                rows = np.arange(r0, r0 + block) % n
                red = C[rows] - basis.u[rows, None] - basis.v[None, :]
                k = int(np.argmin(red))
                if red.flat[k] < -tol:
                    bi, j = divmod(k, m)
                    i = int(rows[bi])
                    start = (r0 + block) % n
                    found = True
                    break
            if not found:
                break
        theta = basis.pivot(i, j)
        degenerate_run = degenerate_run + 1 if theta <= 0.0 else 0
    else:
        raise RuntimeError("network simplex did not converge")
    G = np.zeros((n, m))
    for (i, j), f in basis.flow.items():
        G[i, j] = max(f, 0.0)
    return G


def solve_transport(a, b, C, size_cap=DEFAULT_SIZE_CAP):
    """Optimal plan for ``min <G, C>`` over couplings of weight vectors ``a``, ``b``.

    Returns
    -------
    TransportPlan
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    n, m = C.shape
    if a.shape != (n,) or b.shape != (m,):
        raise InvalidInputError("weight vectors do not match the cost matrix")
    if n * m > size_cap:
        raise ResourceCapError(f"{n}x{m} transport problem exceeds the cap of {size_cap} entries")
    if n == 1 or m == 1:
        G = np.outer(a, b)
    elif n == m and np.all(a == a[0]) and np.all(b == b[0]):
        rows, cols = linear_sum_assignment(C)
        G = np.zeros((n, m))
        G[rows, cols] = a[0]
    else:
        G = _network_simplex(a, b, C)
    return TransportPlan(G, math.fsum((G * C).reshape(-1)))


def wasserstein_discrete(mu, nu, cost=None, size_cap=DEFAULT_SIZE_CAP):
    """``W_p(mu, nu)`` by exact linear programming.

    Returns
    -------
    value : float
        ``(optimal objective)^(1/p)``.
    plan : TransportPlan
    """
    cost = cost or CostSpec()
    if mu.shape != nu.shape:
        raise InvalidInputError(f"shape mismatch {mu.shape} vs {nu.shape}")
    if mu.n * nu.n > size_cap:
        raise ResourceCapError(f"{mu.n}x{nu.n} transport problem exceeds the cap of {size_cap} entries")
    C = cost_matrix(mu.paths, nu.paths, cost)
    plan = solve_transport(mu.weights, nu.weights, C, size_cap)
    return max(plan.objective, 0.0) ** (1.0 / cost.p), plan


def wasserstein_1d_quantile(mu, nu, p=2.0):
    """``W_p`` between one-dimensional discrete measures via the monotone coupling.

    Integrates ``|F_mu^{-1}(u) - F_nu^{-1}(u)|^p`` exactly over the merged
    partition of ``[0, 1]`` induced by both cumulative weight sequences.
    """
    if mu.T * mu.d != 1 or nu.T * nu.d != 1:
        raise InvalidInputError("quantile coupling needs one-dimensional measures")
    xa = mu.paths.reshape(-1)
    xb = nu.paths.reshape(-1)
    ia, ib = np.argsort(xa, kind="stable"), np.argsort(xb, kind="stable")
    xa, wa = xa[ia], mu.weights[ia]
    xb, wb = xb[ib], nu.weights[ib]
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    cuts = np.union1d(ca, cb)
    lengths = np.diff(np.concatenate(([0.0], cuts)))
    mids = cuts - lengths / 2
    qa = xa[np.minimum(np.searchsorted(ca, mids), len(xa) - 1)]
    qb = xb[np.minimum(np.searchsorted(cb, mids), len(xb) - 1)]
    return math.fsum(lengths * np.abs(qa - qb) ** p) ** (1.0 / p)


def plan_to_csv(plan, fh=None, tol=0.0):
    """Write ``(i, j, mass)`` rows for entries with mass above ``tol``."""
    buf = io.StringIO() if fh is None else fh
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "mass"])
    M = plan.matrix if hasattr(plan, "matrix") else np.asarray(plan)
    for i, j in zip(*np.nonzero(M > tol)):
        w.writerow([int(i), int(j), repr(float(M[i, j]))])
    if fh is None:
        return buf.getvalue()
