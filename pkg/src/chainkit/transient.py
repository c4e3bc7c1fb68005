"""Time-varying laws: exact propagation, finite state projection, skeletons.

FSP makes every state outside the truncation absorbing and propagates the
initial law through the truncated rows only. The result is a pointwise
lower bound on the true law, and the missing mass bounds the
total-variation error (it equals it in discrete time).

Continuous truncations are integrated by uniformization,

    p_t = sum_k Poisson(L t; k) * gamma P_L^k,   P_L = I + Q_r / L,

cut off once the Poisson tail drops below ``series_tol``. When ``L t`` is
too large for term-by-term summation (explosive or very stiff chains) the
truncated semigroup is formed densely by scaling and squaring, carrying
``exp(hQ) - I`` rather than ``exp(hQ)`` so that rates many orders of
magnitude below ``L`` survive the squarings.

Nothing here differentiates ``p_t``. It is open whether the usual
summability condition on the rates is needed for ``p_t`` to be
differentiable, and the integrators do not depend on the answer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.signal import lfilter
from scipy.stats import poisson

from .distribution import SparseDistribution, State, StateLike, as_state
from .model import CONTINUOUS, DISCRETE, ChainModel, JumpDecomposition, ModelError
from .structure import Truncation, reachable_truncation, restricted_matrix

log = logging.getLogger(__name__)

# term-by-term uniformization is used while L*t stays below this
MAX_SERIES_TERMS = 200_000
# matrix-valued semigroups switch to scaling and squaring above this L*t
MATRIX_SERIES_TERMS = 2_000
# flop budget for one dense scaling-and-squaring solve
DENSE_WORK_LIMIT = 5e8
DENSE_LIMIT = 2000


class SolverBudgetError(RuntimeError):
    """The truncated problem is too stiff or too large for the available solvers."""


@dataclass
class TruncationResult:
    """FSP output: lower-bound law on the truncation and its error bound."""

    distribution: SparseDistribution
    retained_mass: float
    epsilon: float
    truncation: Truncation
    horizon: Union[int, float]
    log: Dict[str, object] = field(default_factory=dict)
    converged: bool = True
    reason: str = "solved"

    def vector(self) -> np.ndarray:
        return np.array([self.distribution.get(s, 0.0) for s in self.truncation])


def _gamma_vector(model: ChainModel, trunc: Truncation) -> np.ndarray:
    v = np.zeros(len(trunc))
    for s, p in model.gamma.items():
        i = trunc.get_index(s)
        if i is not None:
            v[i] = p
    return v


def _to_distribution(trunc: Truncation, vec: np.ndarray) -> SparseDistribution:
    vec = np.where(vec > 0.0, vec, 0.0)
    return SparseDistribution(((s, float(v)) for s, v in zip(trunc, vec) if v > 0.0), check_mass=False)


def law_exact_dt(model: ChainModel, n: int, trunc: Truncation) -> SparseDistribution:
    """``gamma P^n`` when every state reachable in ``n`` steps lies in ``trunc``."""
    if model.kind != DISCRETE:
        raise ValueError("law_exact_dt needs a discrete model")
    if n < 0:
        raise ValueError("n must be nonnegative")
    layer = set(model.gamma)
    seen = set(layer)
    for s in layer:
        if s not in trunc:
            raise ValueError(f"initial state {s} lies outside the truncation")
    for _ in range(n):
        nxt = set()
        for x in sorted(layer):
            for y, _w in model.row(x):
                if y not in trunc:
                    raise ValueError(f"state {y} (reached from {x}) escapes the truncation")
                if y not in seen:
                    seen.add(y)
                    nxt.add(y)
        if not nxt:
            break
        layer = nxt
    res = fsp_dt(model, n, trunc)
    return res.distribution


def fsp_dt(model: ChainModel, n: int, trunc: Truncation) -> TruncationResult:
    """Discrete FSP: propagate through truncated rows for ``n`` steps.

    ``epsilon = 1 - p^r_n(S_r)`` is exactly the probability of having left
    the truncation by step ``n`` and equals the total-variation error.
    """
    if model.kind != DISCRETE:
        raise ValueError("fsp_dt needs a discrete model")
    if n < 0:
        raise ValueError("n must be nonnegative")
    W, _ = restricted_matrix(model.row, trunc)
    WT = W.T.tocsr()
    p = _gamma_vector(model, trunc)
    for _ in range(n):
        p = WT @ p
    retained = math.fsum(p)
    eps = min(max(1.0 - retained, 0.0), 1.0)
    return TruncationResult(_to_distribution(trunc, p), retained, eps, trunc, n, {"sweeps": n, "method": "sparse"})


def _generator_parts(model: ChainModel, trunc: Truncation):
    """Off-diagonal rates inside the truncation and full exit rates."""
    W, _ = restricted_matrix(model.row, trunc)
    q = np.array([model.exit_rate(x) for x in trunc])
    return W, q


def _poisson_weights(mu: float, series_tol: float):
    K = int(poisson.isf(series_tol, mu))
    K = max(K, 0)
    ks = np.arange(K + 1)
    w = poisson.pmf(ks, mu)
    tail = float(poisson.sf(K, mu))
    return w, tail


def _uniformized_propagate(p0: np.ndarray, W: sp.csr_matrix, q: np.ndarray, t: float, series_tol: float,
                           out: Optional[np.ndarray] = None, integrate: bool = False):
    """``p0 exp(t Q_r)`` by uniformization; optionally also ``int_0^t p_s ds``.

    ``out`` is the per-state rate of leaving the truncation. When given, the
    log records the leaked mass ``sum_j sf(j) <v_j, out> / L`` accumulated
    over the computed terms, independently of the retained mass.
    """
    lam = float(q.max()) if q.size else 0.0
    if lam == 0.0 or t == 0.0:
        integral = p0 * t if integrate else None
        return p0.copy(), {"terms": 0, "series_tail": 0.0, "rate": lam, "leak": 0.0}, integral
    PT = (W / lam).T.tocsr() + sp.diags(1.0 - q / lam)
    mu = lam * t
    w, tail = _poisson_weights(mu, series_tol)
    sf = poisson.sf(np.arange(len(w)), mu)
    v = p0.copy()
    out_terms = []
    res = w[0] * v
    acc = sf[0] * v if integrate else None
    for k in range(1, len(w)):
        if out is not None:
            out_terms.append(sf[k - 1] * float(v @ out))
        v = PT @ v
        res += w[k] * v
        if integrate:
            acc += sf[k] * v
    info = {"terms": len(w), "series_tail": tail, "rate": lam}
    if out is not None:
        info["leak"] = math.fsum(out_terms) / lam
    integral = acc / lam if integrate else None
    return res, info, integral


def _expm_minus_identity(G: np.ndarray, t: float, rate: float, series_tol: float):
    """``exp(t G) - I`` by Taylor series plus squaring of the increment.

    ``rate`` bounds the absolute row sums of ``G``. Returns the matrix and
    a bound on the Taylor truncation error accumulated over the squarings.
    """
    n = G.shape[0]
    norm = rate * t
    s = 0 if norm <= 0.5 else int(math.ceil(math.log2(norm / 0.5)))
    h = t / 2.0**s
    Gh = G * h
    x = rate * h
    # Taylor order so that the per-step remainder times 2**s stays far below series_tol
    K, term = 1, x
    while term * 2.0**s > 1e-3 * series_tol and K < 60:
        K += 1
        term = term * x / K
    D = Gh / K
    for k in range(K - 1, 0, -1):
        D = Gh @ (np.eye(n) + D) / k
    for _ in range(s):
        D = 2.0 * D + D @ D
    return D, {"squarings": s, "taylor_order": K, "series_tail": term * 2.0**s}


def _dense_work(n: int, rate: float, t: float) -> float:
    norm = rate * t
    s = 0 if norm <= 0.5 else math.ceil(math.log2(norm / 0.5))
    return float(n) ** 3 * (s + 20)


def truncated_semigroup(model: ChainModel, t: float, trunc: Truncation, series_tol: float = 1e-12,
                        method: str = "auto"):
    """Dense ``exp(t Q_r)`` over the truncation, with a log of the method.

    ``method`` is ``"series"`` (uniformization applied to the identity),
    ``"dense"`` (scaling and squaring) or ``"auto"``, which picks the series
    unless ``L t`` is large.
    """
    W, q = _generator_parts(model, trunc)
    n = len(trunc)
    lam = float(q.max()) if n else 0.0
    if lam == 0.0 or t == 0.0:
        return np.eye(n), {"method": "identity", "series_tail": 0.0, "rate": lam}
    if method not in ("auto", "series", "dense"):
        raise ValueError("method must be 'auto', 'series' or 'dense'")
    if method == "series" or (method == "auto" and lam * t <= MATRIX_SERIES_TERMS):
        ET, info, _ = _uniformized_propagate(np.eye(n), W, q, t, series_tol)
        info["method"] = "uniformization"
        return np.ascontiguousarray(ET.T), info
    if n > DENSE_LIMIT or _dense_work(n, lam, t) > DENSE_WORK_LIMIT:
        raise SolverBudgetError(f"dense semigroup on {n} states with rate {lam:.3g} exceeds the work budget")
    G = W.toarray() - np.diag(q)
    D, info = _expm_minus_identity(G, t, 2.0 * lam, series_tol)
    E = np.eye(n) + D
    E[E < 0.0] = 0.0
    info.update(method="dense-squaring", rate=lam)
    return E, info


def fsp_ct(model: ChainModel, t: float, trunc: Truncation, series_tol: float = 1e-12) -> TruncationResult:
    """Continuous FSP on ``trunc`` up to time ``t``.

    The reported bound is ``epsilon = 1 - p^r_t(S_r) + series_tol``; it
    bounds the total-variation error of the returned lower bound even when
    the chain explodes.
    """
    if model.kind != CONTINUOUS:
        raise ValueError("fsp_ct needs a continuous model")
    if not 0.0 < series_tol <= 1e-6:
        raise ValueError("series_tol must lie in (0, 1e-6]")
    if t < 0:
        raise ValueError("t must be nonnegative")
    W, q = _generator_parts(model, trunc)
    out = q - np.asarray(W.sum(axis=1)).ravel()
    p0 = _gamma_vector(model, trunc)
    lam = float(q.max())
    if lam * t <= MAX_SERIES_TERMS:
        p, info, _ = _uniformized_propagate(p0, W, q, t, series_tol, out=np.maximum(out, 0.0))
        info["method"] = "uniformization"
        info["initial_outside"] = max(1.0 - math.fsum(p0), 0.0)
        retained = math.fsum(p)
    else:
        E, info = truncated_semigroup(model, t, trunc, series_tol, method="dense")
        p = p0 @ E
        retained = math.fsum(p)
        info["leak"] = max(1.0 - info["series_tail"] - retained, 0.0)
    eps = min(1.0, max(0.0, 1.0 - retained) + series_tol)
    return TruncationResult(_to_distribution(trunc, p), retained, eps, trunc, t, info)


def fsp_adaptive(model: ChainModel, horizon, tol: float, trunc: Optional[Truncation] = None,
                 max_states: int = 10_000, series_tol: float = 1e-12) -> TruncationResult:
    """Grow the truncation by its one-step frontier until ``epsilon <= tol``.

    Never raises on failure to converge: explosive chains keep ``epsilon``
    above their explosion probability, so the loop would not terminate.
    The last result is returned with ``converged=False`` and ``reason`` set
    to ``max-states`` or ``solver-budget``.
    """
    if not 0.0 < tol:
        raise ValueError("tol must be positive")
    if trunc is None:
        trunc = Truncation(sorted(model.gamma))

    def solve(tr):
        if model.kind == DISCRETE:
            return fsp_dt(model, int(horizon), tr)
        return fsp_ct(model, float(horizon), tr, series_tol)

    result = solve(trunc)
    rounds = 0
    while result.epsilon > tol:
        try:
            grow = trunc.frontier(model) + [s for s in sorted(model.gamma) if s not in trunc]
        except ModelError as exc:
            result.converged, result.reason = False, "unrepresentable-rows"
            result.log["detail"] = str(exc)
            break
        if not grow:
            result.converged, result.reason = False, "no-frontier"
            break
        if len(trunc) + len(grow) > max_states:
            result.converged, result.reason = False, "max-states"
            break
        candidate = trunc.union(grow)
        try:
            nxt = solve(candidate)
        except SolverBudgetError as exc:
            result.converged, result.reason = False, "solver-budget"
            result.log["detail"] = str(exc)
            break
        trunc, result = candidate, nxt
        rounds += 1
    else:
        result.converged, result.reason = True, "tolerance-met"
    result.log["rounds"] = rounds
    result.log["states"] = len(result.truncation)
    log.debug("fsp_adaptive: %s after %d rounds, %d states, eps=%g", result.reason, rounds,
              len(result.truncation), result.epsilon)
    return result


def skeleton_matrix(model: ChainModel, delta: float, trunc: Truncation, series_tol: float = 1e-12) -> np.ndarray:
    """Truncated ``delta``-skeleton one-step matrix over ``trunc``.

    Row ``x`` is the FSP law at time ``delta`` started from ``1_x``; the
    missing row mass is the probability of having left the truncation.
    """
    if model.kind != CONTINUOUS:
        raise ValueError("skeleton chains are built from continuous models")
    if not delta > 0:
        raise ValueError("delta must be positive")
    E, _ = truncated_semigroup(model, delta, trunc, series_tol)
    return E


@dataclass
class FirBirResult:
    """FIR value of ``p^n_t(x, y)`` with the BIR value kept for cross-checking."""

    value: float
    bir: float
    by_jumps_fir: List[float]
    by_jumps_bir: List[float]
    states: List[State]


def _exp_convolve(g: np.ndarray, rates: np.ndarray, h: float) -> np.ndarray:
    """Trapezoid values of ``int_0^{t_j} g(s) exp(-rate (t_j - s)) ds`` on the grid.

    Column-wise recursion ``I_{j+1} = a I_j + h/2 (a g_j + g_{j+1})``.
    """
    out = np.empty_like(g)
    for col in range(g.shape[1]):
        a = math.exp(-rates[col] * h)
        drive = np.empty(g.shape[0])
        drive[0] = 0.0
        drive[1:] = 0.5 * h * (a * g[:-1, col] + g[1:, col])
        out[:, col] = lfilter([1.0], [1.0, -a], drive)
    return out


def fir_bir_oracle(model: ChainModel, x: StateLike, y: StateLike, t: float, n_jumps: int,
                   quad_steps: int = 1000) -> FirBirResult:
    """``P_x(X_t = y, at most n jumps by t)`` via the forward and backward integral recursions.

    A test fixture: both recursions are discretized with the trapezoid rule
    on a uniform grid, so stiff rates need many steps. Only chains whose
    ``n_jumps``-step reachable set from ``x`` has at most 20 states are
    accepted.
    """
    if model.kind != CONTINUOUS:
        raise ValueError("fir_bir_oracle needs a continuous model")
    if n_jumps < 0 or n_jumps > 8:
        raise ValueError("n_jumps must lie in 0..8")
    if quad_steps < 100:
        raise ValueError("quad_steps must be at least 100")
    x, y = as_state(x), as_state(y)
    jumps = JumpDecomposition(model)
    jump_model = jumps.as_discrete_model().with_gamma({x: 1.0})
    region = reachable_truncation(jump_model, n_jumps, max_states=20)
    if len(region) > 20:
        raise ValueError("instance too large for the quadrature oracle (more than 20 states)")
    states = region.states
    n = len(states)
    lam = np.array([jumps.rate(s) for s in states])
    J = np.zeros((n, n))
    for i, s in enumerate(states):
        for z, p in jumps.row(s):
            j = region.get_index(z)
            if j is not None:
                J[i, j] = lam[i] * p
    grid = np.linspace(0.0, t, quad_steps + 1)
    h = t / quad_steps
    ix = region.index(x)
    iy = region.get_index(y)

    # forward: row x of p^n on the grid, columns indexed by the end state
    decay = np.exp(-np.outer(grid, lam))
    fwd0 = np.zeros((len(grid), n))
    fwd0[:, ix] = decay[:, ix]
    fwd = fwd0
    fir_vals = [fwd[-1, iy] if iy is not None else 0.0]
    for _ in range(n_jumps):
        fwd = fwd0 + _exp_convolve(fwd @ J, lam, h)
        fir_vals.append(fwd[-1, iy] if iy is not None else 0.0)

    # backward: column y of p^n on the grid, rows indexed by the start state
    bir_vals = [0.0]
    if iy is not None:
        bwd0 = np.zeros((len(grid), n))
        bwd0[:, iy] = decay[:, iy]
        bwd = bwd0
        bir_vals = [bwd[-1, ix]]
        for _ in range(n_jumps):
            bwd = bwd0 + _exp_convolve(bwd @ J.T, lam, h)
            bir_vals.append(bwd[-1, ix])
    else:
        bir_vals = [0.0] * (n_jumps + 1)
    return FirBirResult(float(fir_vals[-1]), float(bir_vals[-1]), [float(v) for v in fir_vals],
                        [float(v) for v in bir_vals], states)
