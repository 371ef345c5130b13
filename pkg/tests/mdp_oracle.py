"""Exhaustive strategy enumeration for small MDPs, solved with dense numpy.

Independent of the value-iteration code: every memoryless deterministic
strategy is turned into a Markov chain whose reachability probabilities and
expected rewards come from a direct linear solve. A tree-walking crawler
interprets guarded-command models directly to enumerate reachable states.
"""
import itertools
import math

import numpy as np


def chain_values(P, target, reward):
    """Reach probability and expected reward (inf unless reached a.s.)."""
    n = len(P)
    reach = target.copy()
    while True:
        new = reach | ((P[:, reach] > 0).any(axis=1))
        if (new == reach).all():
            break
        reach = new
    prob = np.zeros(n)
    prob[target] = 1.0
    unk = reach & ~target
    if unk.any():
        idx = np.flatnonzero(unk)
        A = np.eye(len(idx)) - P[np.ix_(idx, idx)]
        b = P[np.ix_(idx, np.flatnonzero(target))].sum(axis=1)
        prob[idx] = np.linalg.solve(A, b)
    rew = np.full(n, np.inf)
    rew[target] = 0.0
    sure = np.isclose(prob, 1.0, rtol=0, atol=1e-12)
    # states reached with probability one and whose successors all are
    ok = sure.copy()
    while True:
        new = ok & ~((P[:, ~ok] > 0).any(axis=1) & ~target)
        if (new == ok).all():
            break
        ok = new
    idx = np.flatnonzero(ok & ~target)
    if len(idx):
        A = np.eye(len(idx)) - P[np.ix_(idx, idx)]
        rew[idx] = np.linalg.solve(A, reward[idx])
    return prob, rew


def brute_force(choices, rewards, target):
    """Min/max of reach probability and expected reward over all strategies.

    ``choices[s]`` is a list of dicts {successor: prob}; ``rewards[s]`` the
    matching per-choice rewards.
    """
    n = len(choices)
    target = np.asarray(target, dtype=bool)
    pmin = np.full(n, np.inf)
    pmax = np.full(n, -np.inf)
    rmin = np.full(n, np.inf)
    rmax = np.full(n, -np.inf)
    for pick in itertools.product(*[range(len(c)) for c in choices]):
        P = np.zeros((n, n))
        r = np.zeros(n)
        for s, a in enumerate(pick):
            for t, p in choices[s][a].items():
                P[s, t] += p
            r[s] = rewards[s][a]
        prob, rew = chain_values(P, target, r)
        pmin = np.minimum(pmin, prob)
        pmax = np.maximum(pmax, prob)
        rmin = np.minimum(rmin, rew)
        rmax = np.maximum(rmax, rew)
    return pmin, pmax, rmin, rmax


def random_mdp(rng, max_states=12, max_actions=2, zero_reward_prob=0.3):
    n = int(rng.integers(1, max_states + 1))
    choices, rewards = [], []
    for _ in range(n):
        acts, rs = [], []
        for _ in range(int(rng.integers(1, max_actions + 1))):
            k = int(rng.integers(1, min(n, 3) + 1))
            succ = rng.choice(n, size=k, replace=False)
            w = rng.random(k) + 0.05
            w = w / w.sum()
            d = {int(t): float(p) for t, p in zip(succ, w)}
            # renormalise so the probabilities sum to one to the last bit
            last = max(d)
            d[last] = 1.0 - sum(v for t, v in d.items() if t != last)
            acts.append(d)
            rs.append(0.0 if rng.random() < zero_reward_prob else float(rng.integers(1, 5)))
        choices.append(acts)
        rewards.append(rs)
    target = rng.random(n) < 0.25
    return choices, rewards, target


# --------------------------------------------------------------------------- reachability crawler

def _apply(op, a, b):
    if op == "&":
        return a and b
    if op == "|":
        return a or b
    if op == "=>":
        return (not a) or b
    if op == "<=>":
        return a == b
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        return a / b
    raise ValueError(op)


def _call(fn, args):
    if fn == "min":
        return min(args)
    if fn == "max":
        return max(args)
    if fn == "pow":
        return args[0] ** args[1]
    if fn == "mod":
        return args[0] % args[1]
    if fn == "floor":
        return math.floor(args[0])
    if fn == "ceil":
        return math.ceil(args[0])
    if fn == "log":
        return math.log(args[0], args[1])
    raise ValueError(fn)


def ev(e, env, formulas):
    """Tree-walking evaluator, kept apart from the package's compiler."""
    kind = type(e).__name__
    if kind == "Num":
        return e.value
    if kind == "Var":
        if e.name in env:
            return env[e.name]
        return ev(formulas[e.name], env, formulas)
    if kind == "Unary":
        v = ev(e.arg, env, formulas)
        return (not v) if e.op == "!" else -v
    if kind == "Binary":
        return _apply(e.op, ev(e.left, env, formulas), ev(e.right, env, formulas))
    if kind == "Call":
        return _call(e.fn, [ev(a, env, formulas) for a in e.args])
    if kind == "Ite":
        return ev(e.then if ev(e.cond, env, formulas) else e.other, env, formulas)
    raise TypeError(kind)


def crawl(model):
    """Reachable valuations and their choices, by direct interpretation.

    Returns ``{state: sorted list of (action, reward, ((succ, prob), ...))}``
    where the reward is the first reward structure's value for the choice.
    """
    f = model.formulas
    consts = {}
    for c in model.constants:
        consts[c.name] = ev(c.value, consts, f)
    names = [v.name for v in model.variables()]
    init = tuple(ev(v.init, consts, f) for v in model.variables())
    actions = sorted({c.action for m in model.modules for c in m.commands if c.action})
    rew = model.rewards[0].items if model.rewards else []

    def dist(env, cmds):
        out = {}
        parts = []
        for c in cmds:
            parts.append([(ev(u.prob, env, f), u.assignments) for u in c.updates])
        for combo in itertools.product(*parts):
            p = 1.0
            new = dict(zip(names, [env[n] for n in names]))
            for q, assigns in combo:
                p *= q
                for n, e in assigns:
                    new[n] = ev(e, env, f)
            if p > 0:
                t = tuple(new[n] for n in names)
                out[t] = out.get(t, 0.0) + p
        return out

    seen = {init: None}
    queue = [init]
    result = {}
    while queue:
        s = queue.pop()
        env = dict(consts)
        env.update(zip(names, s))
        choices = []
        for m in model.modules:
            for c in m.commands:
                if c.action is None and ev(c.guard, env, f):
                    choices.append((None, dist(env, [c])))
        for a in actions:
            per = []
            for m in model.modules:
                mine = [c for c in m.commands if c.action == a]
                if not mine:
                    continue
                per.append([c for c in mine if ev(c.guard, env, f)])
            if all(per):
                for combo in itertools.product(*per):
                    choices.append((a, dist(env, combo)))
        if not choices:
            choices = [(None, {s: 1.0})]
        rows = []
        for a, d in choices:
            r = sum(float(ev(it.reward, env, f)) for it in rew
                    if (it.state or it.action == a) and ev(it.guard, env, f))
            rows.append((a or "", round(r, 9), tuple(sorted((t, round(p, 12)) for t, p in d.items()))))
            for t in d:
                if t not in seen:
                    seen[t] = None
                    queue.append(t)
        result[s] = sorted(rows, key=repr)
    return result
