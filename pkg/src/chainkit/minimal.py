"""Minimal nonnegative solutions of ``x = b + M x`` (or ``x = b + x M``).

``M`` is entrywise nonnegative and ``b >= 0``. The minimal solution is the
limit of value iteration started from zero,

    x_0 = 0,  x_{k+1} = b + M x_k,   so   x_k = sum_{n<k} M^n b,

and may be infinite at some states. The iterates increase pointwise.

For small systems we compute iterate ``x_{2^j}`` directly by repeated
squaring, ``x_{2N} = x_N + M^N x_N``; every reported iterate is an exact
value-iteration iterate, so monotonicity and the limit are unchanged, but
``2^j`` sweeps cost ``j`` dense products. Large systems fall back to plain
sparse sweeps.

Only states connected to the support of ``b`` are iterated (reachable from
it for the row-vector form, able to reach it for the column form); the rest
are exactly zero at every iterate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10**6
DEFAULT_CAP = 1e15
DENSE_LIMIT = 2500
# dense doubling stops after this many squarings (2**MAX_STAGES equivalent sweeps)
MAX_STAGES = 200


class ConvergenceError(RuntimeError):
    """Value iteration did not reach its tolerance."""

    def __init__(self, message: str, residual: float, values: Optional[np.ndarray] = None):
        super().__init__(message)
        self.residual = residual
        self.values = values


@dataclass
class MinimalSolution:
    values: np.ndarray
    converged: bool
    sweeps: int
    residual: float
    unbounded: np.ndarray
    method: str
    history: List[np.ndarray] = field(default_factory=list)


def _reach(adj: sp.csr_matrix, seeds: np.ndarray) -> np.ndarray:
    """Boolean mask of nodes reachable from ``seeds`` (seeds included)."""
    n = adj.shape[0]
    mask = np.zeros(n, dtype=bool)
    if seeds.size == 0:
        return mask
    # a virtual source wired to all seeds keeps this a single BFS
    src = sp.csr_matrix((np.ones(seeds.size), (np.full(seeds.size, n), seeds)), shape=(n + 1, n + 1))
    big = sp.bmat([[adj, None], [None, sp.csr_matrix((1, 1))]], format="csr") + src
    order = breadth_first_order(big, n, directed=True, return_predecessors=False)
    order = order[order != n]
    mask[order] = True
    return mask


def minimal_solution(
    M,
    b,
    *,
    left: bool = False,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    cap: float = DEFAULT_CAP,
    dense_limit: int = DENSE_LIMIT,
    keep_history: bool = False,
) -> MinimalSolution:
    """Minimal nonnegative solution of ``x = b + M x`` (``left=False``) or ``x = b + x M``.

    Parameters
    ----------
    M : (n, n) sparse or dense nonnegative matrix
    b : (n,) nonnegative vector
    left : bool
        Solve the row-vector system ``x = b + x M`` instead.
    tol : float
        Sup-norm tolerance on the remaining increment.
    max_iter : int
        Sweep budget of the sparse path. The dense path is bounded by
        ``MAX_STAGES`` squarings instead.
    cap : float
        Iterates above ``cap`` are declared unbounded (value ``inf``) together
        with every state they feed into.

    Returns
    -------
    MinimalSolution
        ``converged`` is False when the iteration budget ran out; the values
        are then the last (lower-bound) iterate.
    """
    M = sp.csr_matrix(M, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    n = M.shape[0]
    if M.shape != (n, n) or b.shape != (n,):
        raise ValueError("shape mismatch between M and b")
    if (M.data < 0).any() or (b < 0).any():
        raise ValueError("minimal solutions need nonnegative M and b")

    # propagation graph: x(i) depends on x(j) when M[i, j] > 0 (column form)
    flow = M if left else M.T.tocsr()
    active = _reach(flow, np.flatnonzero(b > 0))
    values = np.zeros(n)
    unbounded = np.zeros(n, dtype=bool)
    history: List[np.ndarray] = []
    total_sweeps = 0
    method = "dense-doubling" if active.sum() <= dense_limit else "sparse-sweeps"

    while True:
        idx = np.flatnonzero(active & ~unbounded)
        if idx.size == 0:
            return MinimalSolution(values, True, total_sweeps, 0.0, unbounded, method, history)
        Msub = M[idx][:, idx]
        bsub = b[idx]
        if idx.size <= dense_limit:
            x, ok, sweeps, resid, blown = _dense_doubling(
                Msub.toarray(), bsub, left, tol, cap, history if keep_history else None, idx, n
            )
        else:
            x, ok, sweeps, resid, blown = _sparse_sweeps(
                Msub, bsub, left, tol, max_iter, cap, history if keep_history else None, idx, n
            )
        total_sweeps += sweeps
        if blown.any():
            seeds = idx[blown]
            spread = _reach(flow, seeds)
            newly = spread & active & ~unbounded
            log.debug("%d states declared unbounded", int(newly.sum()))
            unbounded |= newly
            values[unbounded] = np.inf
            continue
        values[idx] = x
        if not ok:
            return MinimalSolution(values, False, total_sweeps, resid, unbounded, method, history)
        return MinimalSolution(values, True, total_sweeps, resid, unbounded, method, history)


def _record(history, x, idx, n):
    if history is not None:
        full = np.zeros(n)
        full[idx] = x
        history.append(full)


def _dense_doubling(A, b, left, tol, cap, history, idx, n):
    if left:
        A = A.T.copy()
    x = b.copy()
    sweeps = 1
    stage = 0
    _record(history, x, idx, n)
    resid = np.inf
    with np.errstate(over="ignore", invalid="ignore"):
        while True:
            inc = A @ x
            x = x + inc
            sweeps *= 2
            _record(history, x, idx, n)
            blown = ~np.isfinite(x) | (x > cap)
            if blown.any():
                return x, False, sweeps, np.inf, blown
            # tail after x_{2N} is sum_{k>=2} A^k x_N; bound it through ||A||.
            # Row-vector systems (transposed here) use l1, column systems sup-norm.
            if left:
                inc_norm = float(np.sum(inc))
                s = float(np.max(A.sum(axis=0))) if inc_norm > 0 else 0.0
            else:
                inc_norm = float(np.max(inc)) if inc.size else 0.0
                s = float(np.max(A.sum(axis=1))) if inc_norm > 0 else 0.0
            if inc_norm == 0.0:
                return x, True, sweeps, 0.0, np.zeros_like(blown)
            if s < 1.0:
                resid = inc_norm * s / (1.0 - s)
                if resid <= tol:
                    return x, True, sweeps, resid, np.zeros_like(blown)
            else:
                resid = np.inf
            stage += 1
            if stage >= MAX_STAGES:
                return x, False, sweeps, resid, np.zeros_like(blown)
            A = A @ A
            if not np.isfinite(A).all():
                return x, False, sweeps, resid, blown | ~np.isfinite(A).all(axis=1)


def _sparse_sweeps(M, b, left, tol, max_iter, cap, history, idx, n):
    op = M.T.tocsr() if left else M
    x = np.zeros_like(b)
    resid = np.inf
    for k in range(1, max_iter + 1):
        new = b + op @ x
        resid = float(np.max(new - x))
        x = new
        if history is not None and (k & (k - 1)) == 0:
            _record(history, x, idx, n)
        blown = ~np.isfinite(x) | (x > cap)
        if blown.any():
            return x, False, k, np.inf, blown
        if resid <= tol:
            return x, True, k, resid, np.zeros(b.shape, dtype=bool)
    return x, False, max_iter, resid, np.zeros(b.shape, dtype=bool)
