"""Adapted Wasserstein distance between finitely supported path measures.

The value is computed by backward recursion over the history trees of both
measures: ``V_T = 0`` and, for each pair of time-``t`` nodes ``(u, v)``,

    V_t(u, v) = min_{pi in cpl(mu_u, nu_v)} int |x_{t+1} - y_{t+1}|^p + V_{t+1} dpi,

where ``mu_u`` and ``nu_v`` are the one-step kernels. ``AW_p^p = V_0``.
An independent LP over joint couplings with linear causality constraints in
both directions serves as an oracle on small instances.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import InvalidInputError, NumericalPreconditionError, ResourceCapError
from .measure import DiscreteMeasure
from .ot import solve_transport

__all__ = [
    "HistoryTree",
    "build_history_tree",
    "BicausalPlan",
    "CausalityReport",
    "aw_exact",
    "aw_bruteforce_lp",
    "verify_bicausal",
    "DEFAULT_PAIR_CAP",
]

DEFAULT_PAIR_CAP = 2048 * 2048
BRUTEFORCE_MAX_ATOMS = 6
BRUTEFORCE_MAX_T = 3
CAUSALITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class HistoryTree:
    """Prefix tree of a discrete path measure.

    Level ``t`` (0..T) holds the distinct prefixes ``x_{1:t}``; level 0 is the root.

    Attributes
    ----------
    node_of_atom : list of ndarray
        ``node_of_atom[t][i]`` is the level-``t`` node containing atom ``i``.
    parent : list of ndarray
        ``parent[t][k]`` is the level-``t-1`` parent of level-``t`` node ``k``
        (``parent[0]`` is empty).
    mass : list of ndarray
        Total weight of every node.
    cond : list of ndarray
        Weight of every node conditional on its parent (all ones at level 0).
    value : list of ndarray
        ``value[t][k]`` is the last coordinate ``x_t`` of the prefix, shape (N_t, d).
    children : list of list of ndarray
        ``children[t][k]`` are the level-``t+1`` children of level-``t`` node ``k``.
    """

    node_of_atom: list
    parent: list
    mass: list
    cond: list
    value: list
    children: list
    measure: DiscreteMeasure = field(repr=False)

    @property
    def T(self):
        return len(self.mass) - 1

    def level_size(self, t):
        return self.mass[t].shape[0]

    def kernel(self, t, k):
        """Next-step kernel at level-``t`` node ``k``: (values (c, d), conditional weights (c,))."""
        ch = self.children[t][k]
        return self.value[t + 1][ch], self.cond[t + 1][ch]

    def joint_weights(self):
        """Leaf weights rebuilt by multiplying conditional weights down the tree."""
        w = np.ones(1)
        for t in range(1, self.T + 1):
            w = w[self.parent[t]] * self.cond[t]
        return w


def build_history_tree(m):
    """Group atoms of ``m`` by exact equality of their prefixes."""
    if not isinstance(m, DiscreteMeasure):
        raise InvalidInputError("expected a DiscreteMeasure")
    n, T = m.n, m.T
    node_of_atom = [np.zeros(n, dtype=np.int64)]
    parent = [np.zeros(0, dtype=np.int64)]
    mass = [np.ones(1)]
    cond = [np.ones(1)]
    value = [np.zeros((1, m.d))]
    children = []
    for t in range(1, T + 1):
        keys = np.ascontiguousarray(m.flat(t))
        _, first, inv = np.unique(keys, axis=0, return_index=True, return_inverse=True)
        inv = inv.reshape(-1)
        # order nodes by first appearance so that node ids are stable under atom order
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        node = rank[inv]
        first = first[order]
        N = first.size
        mt = np.bincount(node, weights=m.weights, minlength=N)
        par = node_of_atom[t - 1][first]
        node_of_atom.append(node)
        parent.append(par)
        mass.append(mt)
        cond.append(mt / mass[t - 1][par])
        value.append(m.paths[first, t - 1, :])
    for t in range(T):
        par = parent[t + 1]
        order = np.argsort(par, kind="stable")
        bounds = np.searchsorted(par[order], np.arange(mass[t].size + 1))
        children.append([order[bounds[k] : bounds[k + 1]] for k in range(mass[t].size)])
    return HistoryTree(node_of_atom, parent, mass, cond, value, children, m)


# -- plans -------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BicausalPlan:
    """Sparse coupling of the atoms of ``mu`` and ``nu``.

    Attributes
    ----------
    rows, cols, mass : ndarray
        Entry ``k`` carries ``mass[k]`` from atom ``rows[k]`` of ``mu`` to atom ``cols[k]`` of ``nu``.
    shape : tuple
        ``(mu.n, nu.n)``.
    causality_residual : float
        Largest violation of the linear causality constraints (both directions).
    """

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    shape: tuple
    causality_residual: float = float("nan")

    def matrix(self):
        G = np.zeros(self.shape)
        np.add.at(G, (self.rows, self.cols), self.mass)
        return G

    def marginal_residual(self, mu, nu):
        a = np.bincount(self.rows, weights=self.mass, minlength=self.shape[0])
        b = np.bincount(self.cols, weights=self.mass, minlength=self.shape[1])
        return max(np.max(np.abs(a - mu.weights)), np.max(np.abs(b - nu.weights)))

    def to_csv(self, fh=None, tol=0.0):
        """Write ``path_index_mu,path_index_nu,mass`` rows; returns the text when ``fh`` is None."""
        out = io.StringIO() if fh is None else fh
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["path_index_mu", "path_index_nu", "mass"])
        for i, j, g in zip(self.rows, self.cols, self.mass):
            if g > tol:
                w.writerow([int(i), int(j), repr(float(g))])
        return out.getvalue() if fh is None else None


@dataclass(frozen=True)
class CausalityReport:
    """Maximal residuals of the causality constraints.

    ``forward[t-1]`` is the residual at time ``t`` of
    ``pi(x_{1:T}, y_{1:t}) = pi(x_{1:t}, y_{1:t}) mu(x_{1:T}) / mu(x_{1:t})``,
    ``backward`` the same with the roles of ``mu`` and ``nu`` swapped.
    """

    forward: tuple
    backward: tuple
    marginal: float
    tol: float = CAUSALITY_TOL

    @property
    def max_residual(self):
        return max((0.0, *self.forward, *self.backward))

    @property
    def passed(self):
        return self.max_residual <= self.tol


def _aggregate(ga, gb, mass, na, nb):
    G = np.zeros((na, nb))
    np.add.at(G, (ga, gb), mass)
    return G


def _causal_residuals(rows, cols, mass, tree_a, tree_b):
    T = tree_a.T
    out = []
    leaf_a = tree_a.node_of_atom[T]
    for t in range(1, T):
        gb = tree_b.node_of_atom[t][cols]
        full = _aggregate(leaf_a[rows], gb, mass, tree_a.level_size(T), tree_b.level_size(t))
        pre = _aggregate(tree_a.node_of_atom[t][rows], gb, mass, tree_a.level_size(t), tree_b.level_size(t))
        # ancestor at level t of every leaf, and the conditional weight mu(x) / mu(x_{1:t})
        anc = np.arange(tree_a.level_size(T))
        for s in range(T, t, -1):
            anc = tree_a.parent[s][anc]
        ratio = tree_a.mass[T] / tree_a.mass[t][anc]
        out.append(float(np.max(np.abs(full - pre[anc] * ratio[:, None]))))
    return tuple(out)


def verify_bicausal(plan, mu, nu, tol=CAUSALITY_TOL, marginal_tol=1e-9):
    """Evaluate the causality constraints of ``plan`` in both directions.

    Raises ``InvalidInputError`` if the marginals of ``plan`` differ from
    ``mu`` and ``nu`` by more than ``marginal_tol``.
    """
    if isinstance(plan, np.ndarray):
        rows, cols = np.nonzero(plan)
        plan = BicausalPlan(rows, cols, plan[rows, cols], plan.shape)
    if plan.shape != (mu.n, nu.n):
        raise InvalidInputError(f"plan shape {plan.shape} != ({mu.n}, {nu.n})")
    marg = plan.marginal_residual(mu, nu)
    if marg > marginal_tol:
        raise InvalidInputError(f"plan marginals deviate by {marg:.3g}")
    ta, tb = build_history_tree(mu), build_history_tree(nu)
    fwd = _causal_residuals(plan.rows, plan.cols, plan.mass, ta, tb)
    bwd = _causal_residuals(plan.cols, plan.rows, plan.mass, tb, ta)
    return CausalityReport(fwd, bwd, float(marg), tol)


# -- dynamic programming -----------------------------------------------------------------


def _step_cost(x, y, p):
    diff = x[:, None, :] - y[None, :, :]
    if diff.shape[2] == 1:
        return np.abs(diff[:, :, 0]) ** p
    return np.sqrt(np.sum(diff * diff, axis=2)) ** p


def _kernel_matrix(tree, t):
    """Sparse (N_{t+1}, N_t) matrix of conditional weights child -> parent."""
    par = tree.parent[t + 1]
    return sparse.csr_matrix(
        (tree.cond[t + 1], (np.arange(par.size), par)), shape=(par.size, tree.level_size(t))
    )


def _check_pair(mu, nu, p):
    if not isinstance(mu, DiscreteMeasure) or not isinstance(nu, DiscreteMeasure):
        raise InvalidInputError("expected DiscreteMeasure inputs")
    if (mu.T, mu.d) != (nu.T, nu.d):
        raise InvalidInputError(f"shape mismatch: (T, d) = {(mu.T, mu.d)} vs {(nu.T, nu.d)}")
    if not (p >= 1 and math.isfinite(p)):
        raise InvalidInputError(f"p must be >= 1, got {p}")


def _backward(ta, tb, p, pair_cap):
    """Return the list ``stage[t]`` of cost matrices ``|x_{t+1} - y_{t+1}|^p + V_{t+1}``."""
    T = ta.T
    for t in range(T + 1):
        if ta.level_size(t) * tb.level_size(t) > pair_cap:
            raise ResourceCapError(
                f"level {t} has {ta.level_size(t)} x {tb.level_size(t)} node pairs, cap is {pair_cap}"
            )
    stage = [None] * T
    V_next = np.zeros((ta.level_size(T), tb.level_size(T)))
    for t in range(T - 1, -1, -1):
        cost = _step_cost(ta.value[t + 1], tb.value[t + 1], p) + V_next
        stage[t] = cost
        na, nb = ta.level_size(t), tb.level_size(t)
        single_a = np.array([len(c) == 1 for c in ta.children[t]])
        single_b = np.array([len(c) == 1 for c in tb.children[t]])
        V = np.empty((na, nb))
        # a Dirac kernel on either side leaves a single coupling
        if np.any(single_a):
            ka = np.array([c[0] for c in ta.children[t]], dtype=np.int64)
            avg_b = np.asarray((_kernel_matrix(tb, t).T @ cost.T).T)
            V[single_a] = avg_b[ka[single_a]]
        if np.any(single_b):
            kb = np.array([c[0] for c in tb.children[t]], dtype=np.int64)
            avg_a = np.asarray(_kernel_matrix(ta, t).T @ cost)
            V[:, single_b] = avg_a[:, kb[single_b]]
        for u in np.flatnonzero(~single_a):
            cu = ta.children[t][u]
            wu = ta.cond[t + 1][cu]
            sub = cost[cu]
            for v in np.flatnonzero(~single_b):
                cv = tb.children[t][v]
                V[u, v] = solve_transport(wu, tb.cond[t + 1][cv], sub[:, cv]).objective
        V_next = V
    return stage, float(V_next[0, 0])


def _forward(ta, tb, stage):
    """Compose optimal one-step couplings into a plan over leaf pairs."""
    T = ta.T
    pairs_u = np.zeros(1, dtype=np.int64)
    pairs_v = np.zeros(1, dtype=np.int64)
    pmass = np.ones(1)
    for t in range(T):
        nu_, nv_, nm_ = [], [], []
        for u, v, g in zip(pairs_u, pairs_v, pmass):
            cu = ta.children[t][u]
            cv = tb.children[t][v]
            wu = ta.cond[t + 1][cu]
            wv = tb.cond[t + 1][cv]
            if cu.size == 1 or cv.size == 1:
                G = np.outer(wu, wv)
            else:
                G = solve_transport(wu, wv, stage[t][np.ix_(cu, cv)]).matrix
            i, j = np.nonzero(G > 0)
            nu_.append(cu[i])
            nv_.append(cv[j])
            nm_.append(g * G[i, j])
        pairs_u = np.concatenate(nu_)
        pairs_v = np.concatenate(nv_)
        pmass = np.concatenate(nm_)
    return pairs_u, pairs_v, pmass


def _expand_to_atoms(ta, tb, lu, lv, lmass, mu, nu):
    """Split leaf-pair mass over the atoms inside each leaf, proportionally to weight."""
    T = ta.T
    atoms_a = [[] for _ in range(ta.level_size(T))]
    for i, k in enumerate(ta.node_of_atom[T]):
        atoms_a[k].append(i)
    atoms_b = [[] for _ in range(tb.level_size(T))]
    for j, k in enumerate(tb.node_of_atom[T]):
        atoms_b[k].append(j)
    if all(len(a) == 1 for a in atoms_a) and all(len(b) == 1 for b in atoms_b):
        inv_a = np.empty(mu.n, dtype=np.int64)
        inv_a[ta.node_of_atom[T]] = np.arange(mu.n)
        inv_b = np.empty(nu.n, dtype=np.int64)
        inv_b[tb.node_of_atom[T]] = np.arange(nu.n)
        return inv_a[lu], inv_b[lv], lmass
    rows, cols, mass = [], [], []
    for u, v, g in zip(lu, lv, lmass):
        ia, ib = atoms_a[u], atoms_b[v]
        fa = mu.weights[ia] / ta.mass[T][u]
        fb = nu.weights[ib] / tb.mass[T][v]
        for i, x in zip(ia, fa):
            for j, y in zip(ib, fb):
                rows.append(i)
                cols.append(j)
                mass.append(g * x * y)
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(mass)


def aw_exact(mu, nu, p=2.0, pair_cap=DEFAULT_PAIR_CAP, with_plan=True):
    """``AW_p(mu, nu)`` with per-step cost ``sum_t |x_t - y_t|^p``.

    Parameters
    ----------
    mu, nu : DiscreteMeasure
        Same ``(T, d)``.
    p : float
        Exponent, ``p >= 1``.
    pair_cap : int
        Maximal number of node pairs on any level.
    with_plan : bool
        Assemble and verify the optimal bicausal plan (skipped when False).

    Returns
    -------
    value : float
    plan : BicausalPlan or None
    """
    _check_pair(mu, nu, p)
    ta, tb = build_history_tree(mu), build_history_tree(nu)
    stage, v0 = _backward(ta, tb, p, pair_cap)
    value = max(v0, 0.0) ** (1.0 / p)
    if not with_plan:
        return value, None
    lu, lv, lm = _forward(ta, tb, stage)
    rows, cols, mass = _expand_to_atoms(ta, tb, lu, lv, lm, mu, nu)
    fwd = _causal_residuals(rows, cols, mass, ta, tb)
    bwd = _causal_residuals(cols, rows, mass, tb, ta)
    res = max((0.0, *fwd, *bwd))
    return value, BicausalPlan(rows, cols, mass, (mu.n, nu.n), res)


def _causality_rows(ta, tb, n_a, n_b, transpose):
    """Equality rows ``pi(x, y_{1:t}) - pi(x_{1:t}, y_{1:t}) mu(x)/mu(x_{1:t}) = 0`` as a sparse matrix.

    Variables are ``pi[i, j]`` in row-major order over atoms; with ``transpose``
    the roles of the two measures are swapped.
    """
    T = ta.T
    blocks = []
    leaf = ta.node_of_atom[T]
    for t in range(1, T):
        pre = ta.node_of_atom[t]
        gb = tb.node_of_atom[t]
        nb_t = tb.level_size(t)
        # row index: (leaf of x, node of y_{1:t}); coefficient for variable (i, j)
        i = np.repeat(np.arange(n_a), n_b)
        j = np.tile(np.arange(n_b), n_a)
        var = j * n_a + i if transpose else i * n_b + j
        n_leaf = ta.level_size(T)
        n_rows = n_leaf * nb_t
        A_full = sparse.csr_matrix(
            (np.ones(i.size), (leaf[i] * nb_t + gb[j], var)), shape=(n_rows, n_a * n_b)
        )
        # subtract ratio(x) * sum over atoms with the same prefix: build per (prefix, y-node) sums
        P = sparse.csr_matrix(
            (np.ones(i.size), (pre[i] * nb_t + gb[j], var)), shape=(ta.level_size(t) * nb_t, n_a * n_b)
        )
        anc = np.arange(n_leaf)
        for s in range(T, t, -1):
            anc = ta.parent[s][anc]
        leaf_ratio = ta.mass[T] / ta.mass[t][anc]
        r_leaf = np.repeat(np.arange(n_leaf), nb_t)
        r_node = np.tile(np.arange(nb_t), n_leaf)
        S = sparse.csr_matrix(
            (np.repeat(leaf_ratio, nb_t), (r_leaf * nb_t + r_node, anc[r_leaf] * nb_t + r_node)),
            shape=(n_rows, ta.level_size(t) * nb_t),
        )
        blocks.append(A_full - S @ P)
    return blocks


def aw_bruteforce_lp(mu, nu, p=2.0):
    """``AW_p`` as one LP over joint couplings with linear causality constraints.

    Fixing the marginals makes conditional independence linear in the
    coupling; both directions are imposed at every ``t < T``. Intended as an
    oracle for ``T <= 3`` and at most 6 atoms per measure.
    """
    _check_pair(mu, nu, p)
    if mu.T > BRUTEFORCE_MAX_T or mu.n > BRUTEFORCE_MAX_ATOMS or nu.n > BRUTEFORCE_MAX_ATOMS:
        raise ResourceCapError(
            f"brute-force LP limited to T <= {BRUTEFORCE_MAX_T} and <= {BRUTEFORCE_MAX_ATOMS} atoms"
        )
    n, m = mu.n, nu.n
    C = np.zeros((n, m))
    for t in range(mu.T):
        C += _step_cost(mu.paths[:, t, :], nu.paths[:, t, :], p)
    ta, tb = build_history_tree(mu), build_history_tree(nu)
    A_rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    A_cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    blocks = [A_rows, A_cols]
    rhs = [mu.weights, nu.weights]
    for blk in _causality_rows(ta, tb, n, m, False) + _causality_rows(tb, ta, m, n, True):
        blocks.append(blk)
        rhs.append(np.zeros(blk.shape[0]))
    A = sparse.vstack(blocks).tocsr()
    res = linprog(
        C.reshape(-1),
        A_eq=A,
        b_eq=np.concatenate(rhs),
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise NumericalPreconditionError(f"bicausal LP failed: {res.message}")
    return max(res.fun, 0.0) ** (1.0 / p)
