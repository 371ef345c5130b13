"""Optimal reachability probabilities and expected total rewards by value
iteration.

Graph precomputation fixes the states whose answer is 0, 1 or infinite
before iterating, zero-reward end components are collapsed for minimum
rewards, and the converged values are polished by solving the linear
system of the extracted optimal strategy. The polish is kept only when it
is itself a fixed point of the Bellman operator, so the result never
depends on it being available.
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .explicit import Mdp

EPS = 1e-9
MAX_ITER = 1_000_000


class ConvergenceError(RuntimeError):
    """Value iteration hit the iteration cap."""

    def __init__(self, iterations: int, residual: float):
        super().__init__(f"value iteration did not converge in {iterations} iterations "
                         f"(residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


def _opt(opt: str) -> str:
    if opt not in ("min", "max"):
        raise ValueError(f"opt must be 'min' or 'max', got {opt!r}")
    return opt


class _Graph:
    """Boolean structure of an MDP used by the precomputations."""

    def __init__(self, mdp: Mdp):
        self.mdp = mdp
        self.n = mdp.n_states
        self.cs = mdp.choice_state()
        self.ptr = mdp.state_ptr
        ones = np.ones(len(mdp.succ))
        self.E = sparse.csr_matrix((ones, mdp.succ, mdp.choice_ptr),
                                   shape=(mdp.n_choices, self.n))

    def hits(self, mask: np.ndarray) -> np.ndarray:
        """Per choice: some successor lies in ``mask``."""
        return self.E @ mask.astype(float) > 0

    def inside(self, mask: np.ndarray) -> np.ndarray:
        """Per choice: every successor lies in ``mask``."""
        return self.E @ (~mask).astype(float) == 0

    def any_choice(self, flags: np.ndarray) -> np.ndarray:
        return np.logical_or.reduceat(flags, self.ptr[:-1])

    def all_choices(self, flags: np.ndarray) -> np.ndarray:
        return np.logical_and.reduceat(flags, self.ptr[:-1])


def prob0_max(g: _Graph, target: np.ndarray) -> np.ndarray:
    """States from which no strategy reaches ``target``."""
    reach = target.copy()
    while True:
        new = reach | g.any_choice(g.hits(reach))
        if np.array_equal(new, reach):
            return ~reach
        reach = new


def prob0_min(g: _Graph, target: np.ndarray) -> np.ndarray:
    """States from which some strategy avoids ``target`` forever."""
    avoid = ~target
    while True:
        new = avoid & g.any_choice(g.inside(avoid))
        if np.array_equal(new, avoid):
            return avoid
        avoid = new


def prob1_min(g: _Graph, target: np.ndarray, no_min: np.ndarray) -> np.ndarray:
    """States from which every strategy reaches ``target`` almost surely."""
    bad = no_min.copy()
    while True:
        new = bad | (~target & g.any_choice(g.hits(bad)))
        if np.array_equal(new, bad):
            return ~bad
        bad = new


def prob1_max(g: _Graph, target: np.ndarray) -> np.ndarray:
    """States from which some strategy reaches ``target`` almost surely."""
    u = np.ones(g.n, dtype=bool)
    while True:
        r = target.copy()
        stay = g.inside(u)
        while True:
            new = r | (g.any_choice(stay & g.hits(r)) & u)
            if np.array_equal(new, r):
                break
            r = new
        if np.array_equal(r, u):
            return u
        u = r


@dataclass
class _System:
    """Bellman system over ``n`` nodes: choices grouped by source node."""

    n: int
    src: np.ndarray        # source node per choice, non-decreasing
    P: sparse.csr_matrix   # choices x nodes
    reward: np.ndarray
    fixed: np.ndarray      # bool per node
    value: np.ndarray      # initial values; fixed nodes keep theirs

    def __post_init__(self):
        if len(self.src):
            self.starts = np.flatnonzero(np.r_[True, self.src[1:] != self.src[:-1]])
        else:
            self.starts = np.zeros(0, dtype=np.int64)
        self.nodes = self.src[self.starts]


def _sweep(sysm: _System, opt: str, x: np.ndarray):
    q = sysm.reward + sysm.P @ x
    red = np.minimum.reduceat if opt == "min" else np.maximum.reduceat
    return q, sysm.starts, sysm.nodes, red(q, sysm.starts)


def _solve(sysm: _System, opt: str, eps: float, max_iter: int, goal: np.ndarray | None,
           exact: bool) -> np.ndarray:
    x = sysm.value.astype(float).copy()
    if len(sysm.src) == 0:
        return x
    residual = np.inf
    for it in range(1, max_iter + 1):
        _, _, nodes, best = _sweep(sysm, opt, x)
        residual = float(np.max(np.abs(best - x[nodes]))) if len(nodes) else 0.0
        x[nodes] = best
        if residual < eps:
            break
    else:
        raise ConvergenceError(max_iter, residual)
    if exact:
        polished = _polish(sysm, opt, x, goal, eps)
        if polished is not None:
            return polished
    return x


def _polish(sysm: _System, opt: str, x: np.ndarray, goal, eps: float):
    """Evaluate an extracted optimal strategy exactly; None if unusable."""
    q, starts, nodes, best = _sweep(sysm, opt, x)
    tol = 1e3 * eps * np.maximum(1.0, np.abs(best))
    group = np.repeat(np.arange(len(starts)), np.diff(np.r_[starts, len(q)]))
    near = np.abs(q - best[group]) <= tol[group]
    chosen = np.full(len(starts), -1)
    if goal is None:
        # first near-optimal choice of each node
        idx = np.flatnonzero(near)
        first = np.unique(group[idx], return_index=True)
        chosen[first[0]] = idx[first[1]]
    else:
        # attractor: prefer near-optimal choices that move towards the goal
        done = goal.copy()
        pos = {int(v): k for k, v in enumerate(nodes)}
        P = sysm.P.tocsr()
        while True:
            hit = (P @ done.astype(float)) > 0
            cand = np.flatnonzero(near & hit & ~done[sysm.src])
            if len(cand) == 0:
                break
            for c in cand:
                k = pos[int(sysm.src[c])]
                if chosen[k] < 0:
                    chosen[k] = c
            done = done.copy()
            done[sysm.src[cand]] = True
    if np.any(chosen < 0):
        return None
    n = sysm.n
    A = sysm.P[chosen]
    free = np.zeros(n, dtype=bool)
    free[nodes] = True
    fidx = np.flatnonzero(free)
    pos = np.full(n, -1)
    pos[fidx] = np.arange(len(fidx))
    A_ff = A[:, fidx]
    b = sysm.reward[chosen] + A[:, ~free] @ x[~free]
    order = pos[nodes]
    M = sparse.identity(len(fidx), format="csr") - A_ff[np.argsort(order)]
    rhs = b[np.argsort(order)]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        try:
            sol = spsolve(M.tocsc(), rhs)
        except Exception:
            return None
    sol = np.atleast_1d(sol)
    if not np.all(np.isfinite(sol)):
        return None
    y = x.copy()
    y[fidx] = sol
    _, _, nodes2, best2 = _sweep(sysm, opt, y)
    scale = np.maximum(1.0, np.abs(y[nodes2]))
    if np.max(np.abs(best2 - y[nodes2]) / scale) > 1e-11:
        return None
    if np.max(np.abs(y - x) / np.maximum(1.0, np.abs(x))) > 1e-5:
        return None
    return y


def _restricted_system(mdp: Mdp, g: _Graph, unknown: np.ndarray, choice_ok: np.ndarray,
                       reward: np.ndarray, x0: np.ndarray) -> _System:
    keep = unknown[g.cs] & choice_ok
    cidx = np.flatnonzero(keep)
    P = sparse.csr_matrix((mdp.prob, mdp.succ, mdp.choice_ptr),
                          shape=(mdp.n_choices, mdp.n_states))[cidx]
    return _System(mdp.n_states, g.cs[cidx], P, reward[cidx], ~unknown, x0)


def reach_probability(mdp: Mdp, target, opt: str = "max", eps: float = EPS,
                      max_iter: int = MAX_ITER, exact: bool = True) -> np.ndarray:
    """Minimum or maximum probability of eventually reaching ``target``.

    Parameters
    ----------
    target : str or bool array
        Label name or per-state mask.
    """
    opt = _opt(opt)
    target = _mask(mdp, target)
    g = _Graph(mdp)
    if opt == "max":
        no = prob0_max(g, target)
        yes = prob1_max(g, target)
    else:
        no = prob0_min(g, target)
        yes = prob1_min(g, target, no)
    unknown = ~(yes | no)
    x0 = yes.astype(float)
    sysm = _restricted_system(mdp, g, unknown, np.ones(mdp.n_choices, dtype=bool),
                              np.zeros(mdp.n_choices), x0)
    goal = yes.copy() if opt == "max" else None
    return _solve(sysm, opt, eps, max_iter, goal, exact)


def expected_reward(mdp: Mdp, reward, target, opt: str = "min", eps: float = EPS,
                    max_iter: int = MAX_ITER, exact: bool = True) -> np.ndarray:
    """Minimum or maximum expected total reward until ``target`` is reached.

    States where the target is not reached almost surely (under some
    strategy for ``min``, under every strategy for ``max``) get ``inf``.
    """
    opt = _opt(opt)
    target = _mask(mdp, target)
    r = np.asarray(mdp.rewards[reward] if isinstance(reward, str) else reward, dtype=float)
    if len(r) != mdp.n_choices:
        raise ValueError("reward must have one entry per choice")
    if np.any(r < 0):
        raise ValueError("rewards must be non-negative")
    g = _Graph(mdp)
    if opt == "max":
        finite = prob1_min(g, target, prob0_min(g, target))
    else:
        finite = prob1_max(g, target)
    x = np.where(finite, 0.0, np.inf)
    unknown = finite & ~target
    if not unknown.any():
        return x
    ok = g.inside(finite)
    if opt == "max":
        sysm = _restricted_system(mdp, g, unknown, ok, r, np.zeros(mdp.n_states))
        vals = _solve(sysm, opt, eps, max_iter, None, exact)
        x[unknown] = vals[unknown]
        return x
    return _min_reward(mdp, g, r, target, unknown, ok, x, eps, max_iter, exact)


def _min_reward(mdp, g, r, target, unknown, ok, x, eps, max_iter, exact):
    # collapse end components made of zero-reward choices: staying in one
    # forever costs nothing but never reaches the target
    zero = ok & (r == 0) & unknown[g.cs]
    comp = _end_components(mdp, g, unknown, zero)
    n = mdp.n_states
    node = np.arange(n)
    internal = np.zeros(mdp.n_choices, dtype=bool)
    for states, choices in comp:
        node[states] = states[0]
        internal[choices] = True
    keep = unknown[g.cs] & ok & ~internal
    cidx = np.flatnonzero(keep)
    src = node[g.cs[cidx]]
    order = np.argsort(src, kind="stable")
    cidx, src = cidx[order], src[order]
    P = sparse.csr_matrix((mdp.prob, node[mdp.succ], mdp.choice_ptr),
                          shape=(mdp.n_choices, n))[cidx]
    P.sum_duplicates()
    fixed = ~unknown | (node != np.arange(n))
    sysm = _System(n, src, P, r[cidx], fixed, np.zeros(n))
    vals = _solve(sysm, "min", eps, max_iter, target.copy(), exact)
    x[unknown] = vals[node[unknown]]
    return x


def _end_components(mdp: Mdp, g: _Graph, states: np.ndarray, allowed: np.ndarray):
    """Maximal end components using only ``allowed`` choices inside ``states``."""
    S = states.copy()
    A = allowed & S[g.cs]
    n = mdp.n_states
    while True:
        A = A & S[g.cs] & g.inside(S)
        cidx = np.flatnonzero(A)
        rows = np.repeat(g.cs[cidx], np.diff(mdp.choice_ptr)[cidx])
        cols = np.concatenate([mdp.succ[mdp.choice_ptr[c]:mdp.choice_ptr[c + 1]] for c in cidx]) \
            if len(cidx) else np.zeros(0, dtype=np.int64)
        adj = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        _, lab = connected_components(adj, directed=True, connection="strong")
        leaves = np.zeros(mdp.n_choices, dtype=bool)
        if len(cidx):
            per = np.diff(mdp.choice_ptr)[cidx]
            differ = lab[cols] != lab[rows]
            bad_c = np.logical_or.reduceat(differ, np.r_[0, np.cumsum(per)[:-1]])
            leaves[cidx[bad_c]] = True
        A_new = A & ~leaves
        has = np.zeros(n, dtype=bool)
        has[g.cs[A_new]] = True
        S_new = S & has
        if np.array_equal(A_new, A) and np.array_equal(S_new, S):
            break
        A, S = A_new, S_new
    out = []
    for lb in np.unique(lab[S]):
        members = np.flatnonzero(S & (lab == lb))
        choices = np.flatnonzero(A & (lab[g.cs] == lb))
        out.append((members, choices))
    return out


def _mask(mdp: Mdp, target) -> np.ndarray:
    if isinstance(target, str):
        return np.asarray(mdp.label(target), dtype=bool).copy()
    m = np.asarray(target, dtype=bool)
    if m.shape != (mdp.n_states,):
        raise ValueError("target mask must have one entry per state")
    return m.copy()


_QUERY = re.compile(r'\s*(?:P(min|max)|R\{"([^"]+)"\}(min|max))=\?\s*\[\s*F\s+"([^"]+)"\s*\]\s*;?\s*')


def check_property(mdp: Mdp, prop: str, **kw) -> float:
    """Value at the initial state of a query such as ``Pmax=? [ F "done" ]``."""
    m = _QUERY.fullmatch(prop)
    if not m:
        raise ValueError(f"unsupported property {prop!r}")
    popt, rname, ropt, label = m.groups()
    if popt:
        vals = reach_probability(mdp, label, popt, **kw)
    else:
        vals = expected_reward(mdp, rname, label, ropt, **kw)
    return float(vals[mdp.initial])
