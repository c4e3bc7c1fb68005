"""Truncations and structural classification of a chain on a finite window.

Everything here is computed from the positive-transition digraph of the
model restricted to a :class:`Truncation`. Closedness, though, is checked
against full rows, so a class flagged ``certified_closed`` is closed in the
whole (possibly infinite) chain.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .distribution import State, StateLike, as_state
from .minimal import DEFAULT_MAX_ITER, DEFAULT_TOL, ConvergenceError, minimal_solution
from .model import CONTINUOUS, DISCRETE, ChainModel, JumpDecomposition, StateIndexer


class Truncation:
    """A finite ordered set of states."""

    def __init__(self, states: Iterable[StateLike]):
        self._indexer = StateIndexer(states)
        if len(self._indexer) == 0:
            raise ValueError("a truncation needs at least one state")

    @classmethod
    def box(cls, lo, hi) -> "Truncation":
        """All integer points of the box ``lo <= x <= hi`` (per coordinate)."""
        lo, hi = as_state(lo), as_state(hi)
        if len(lo) != len(hi):
            raise ValueError("box bounds must have equal dimension")
        ranges = [range(a, b + 1) for a, b in zip(lo, hi)]
        return cls(itertools.product(*ranges))

    @classmethod
    def interval(cls, lo: int, hi: int) -> "Truncation":
        return cls((i,) for i in range(lo, hi + 1))

    @property
    def states(self) -> List[State]:
        return self._indexer.states

    def index(self, x: StateLike) -> int:
        return self._indexer.index(x)

    def get_index(self, x: StateLike) -> Optional[int]:
        return self._indexer.get(x)

    def __contains__(self, x) -> bool:
        return x in self._indexer

    def __len__(self) -> int:
        return len(self._indexer)

    def __iter__(self):
        return iter(self._indexer)

    def __repr__(self) -> str:
        return f"Truncation({len(self)} states)"

    def boundary(self, model: ChainModel) -> List[bool]:
        """Per state: does its row leave the truncation?"""
        return [any(y not in self for y, _ in model.row(x)) for x in self]

    def frontier(self, model: ChainModel) -> List[State]:
        """States outside the truncation reachable in one step, sorted."""
        out = set()
        for x in self:
            for y, _ in model.row(x):
                if y not in self:
                    out.add(y)
        return sorted(out)

    def expand(self, model: ChainModel) -> "Truncation":
        return Truncation(self.states + self.frontier(model))

    def union(self, states: Iterable[StateLike]) -> "Truncation":
        return Truncation(self.states + [as_state(s) for s in states])


def reachable_truncation(model: ChainModel, steps: int, sources: Optional[Iterable[StateLike]] = None,
                         max_states: Optional[int] = None) -> Truncation:
    """States reachable within ``steps`` transitions from ``sources`` (default: supp(gamma))."""
    start = sorted(as_state(s) for s in (model.gamma if sources is None else sources))
    seen = dict.fromkeys(start)
    layer = list(start)
    for _ in range(steps):
        nxt = []
        for x in layer:
            for y, _ in model.row(x):
                if y not in seen:
                    seen[y] = None
                    nxt.append(y)
        if not nxt:
            break
        if max_states is not None and len(seen) > max_states:
            raise ValueError(f"reachable set exceeds {max_states} states")
        layer = nxt
    return Truncation(seen)


RowFn = Callable[[State], Sequence[Tuple[State, float]]]


def restricted_matrix(row_fn: RowFn, trunc: Truncation) -> Tuple[sp.csr_matrix, np.ndarray]:
    """Weights between truncation states, plus per-row weight sent outside."""
    n = len(trunc)
    rows, cols, vals = [], [], []
    out = np.zeros(n)
    for i, x in enumerate(trunc):
        leak = []
        for y, w in row_fn(x):
            j = trunc.get_index(y)
            if j is None:
                leak.append(w)
            else:
                rows.append(i)
                cols.append(j)
                vals.append(w)
        out[i] = math.fsum(leak)
    W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=float)
    return W, out


@dataclass
class ClassDecomposition:
    """Communicating classes of the truncated digraph.

    ``recurrence`` is ``"recurrent"`` for certified-closed classes (finite
    closed classes are recurrent) and ``"unknown"`` otherwise; transience
    of the full chain cannot be settled from a window.
    """

    classes: List[List[State]]
    certified_closed: List[bool]
    periods: List[Optional[int]]
    recurrence: List[str]
    outside_closed: List[State]
    boundary: List[State]
    kind: str

    def closed_classes(self) -> List[List[State]]:
        return [c for c, ok in zip(self.classes, self.certified_closed) if ok]

    def class_of(self, x: StateLike) -> int:
        key = as_state(x)
        for i, c in enumerate(self.classes):
            if key in c:
                return i
        raise KeyError(key)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "classes": [
                {
                    "states": [list(s) for s in c],
                    "certified_closed": closed,
                    "period": per,
                    "recurrence": rec,
                }
                for c, closed, per, rec in zip(self.classes, self.certified_closed, self.periods, self.recurrence)
            ],
            "outside_closed": [list(s) for s in self.outside_closed],
            "boundary": [list(s) for s in self.boundary],
        }


def _class_period(members: np.ndarray, adj: sp.csr_matrix) -> int:
    """gcd of ``level(u) + 1 - level(v)`` over in-class edges of a BFS tree."""
    inside = set(members.tolist())
    root = int(members[0])
    level = {root: 0}
    queue = [root]
    g = 0
    head = 0
    while head < len(queue):
        u = queue[head]
        head += 1
        for v in adj.indices[adj.indptr[u]:adj.indptr[u + 1]]:
            v = int(v)
            if v not in inside:
                continue
            if v not in level:
                level[v] = level[u] + 1
                queue.append(v)
            else:
                g = math.gcd(g, abs(level[u] + 1 - level[v]))
    # no in-class return edges at all: empty return set, period 1 by convention
    return g if g > 0 else 1


def classify(model: ChainModel, trunc: Truncation) -> ClassDecomposition:
    """Strongly connected components of the positive-transition graph on ``trunc``."""
    W, _ = restricted_matrix(model.row, trunc)
    adj = (W > 0).astype(np.int8).tocsr()
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    states = trunc.states
    groups: Dict[int, List[int]] = {}
    for i, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(i)
    ordered = sorted(groups.values(), key=lambda idx: min(states[i] for i in idx))

    classes, closed, periods, rec = [], [], [], []
    for idx in ordered:
        members = sorted(states[i] for i in idx)
        member_set = set(members)
        is_closed = all(y in member_set for x in members for y, _ in model.row(x))
        if model.kind == DISCRETE:
            per = _class_period(np.array(sorted(idx)), adj)
        else:
            per = 1
        classes.append(members)
        closed.append(is_closed)
        periods.append(per)
        rec.append("recurrent" if is_closed else "unknown")
    outside = sorted(s for c, ok in zip(classes, closed) if not ok for s in c)
    bflags = trunc.boundary(model)
    boundary = sorted(s for s, f in zip(states, bflags) if f)
    return ClassDecomposition(classes, closed, periods, rec, outside, boundary, model.kind)


def hitting_probabilities(
    model: ChainModel,
    target: Iterable[StateLike],
    trunc: Truncation,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    keep_history: bool = False,
):
    """Probability of ever hitting ``target`` from each truncation state.

    Returns the minimal nonnegative solution of the hitting equations with
    every state outside ``trunc`` treated as never reaching the target, so
    the values are lower bounds on the true probabilities. Continuous
    models are handled through their jump chain.

    Returns
    -------
    dict
        ``state -> probability``; with ``keep_history=True`` a pair
        ``(dict, list of iterate arrays)`` in truncation order.

    Raises
    ------
    ConvergenceError
        If the iteration budget is exhausted.
    """
    targets = {as_state(a) for a in target}
    missing = [a for a in targets if a not in trunc]
    if missing:
        raise ValueError(f"target states outside the truncation: {sorted(missing)}")
    row_fn = JumpDecomposition(model).row if model.kind == CONTINUOUS else model.row
    W, _ = restricted_matrix(row_fn, trunc)
    n = len(trunc)
    in_target = np.array([s in targets for s in trunc], dtype=bool)
    b = np.asarray(W[:, in_target].sum(axis=1)).ravel()
    b[in_target] = 0.0
    keep = ~in_target
    M = W.multiply(keep[None, :]).multiply(keep[:, None]).tocsr()
    sol = minimal_solution(M, b, tol=tol, max_iter=max_iter, keep_history=keep_history)
    if not sol.converged:
        raise ConvergenceError(
            f"hitting probabilities did not converge (residual {sol.residual:.3g})", sol.residual, sol.values
        )
    h = np.minimum(sol.values, 1.0)
    h[in_target] = 1.0
    result = {s: float(v) for s, v in zip(trunc, h)}
    if keep_history:
        hist = []
        for it in sol.history:
            it = np.minimum(it.copy(), 1.0)
            it[in_target] = 1.0
            hist.append(it)
        return result, hist
    return result
