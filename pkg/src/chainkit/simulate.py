"""Path sampling for discrete chains and the Kendall-Gillespie construction.

Both samplers pick the next state by inverse CDF over the row in state
order, stepping through targets while the uniform exceeds the running sum.
Trajectory ``i`` of seed ``s`` uses the counter-based stream ``(s, i)``.
"""

from __future__ import annotations

import bisect
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import accumulate
from typing import Dict, List, Optional, Sequence, Tuple

from .distribution import SparseDistribution, State
from .model import CONTINUOUS, DISCRETE, ChainModel, JumpDecomposition, ModelError
from .rng import UniformBuffer, stream

HORIZON = "horizon"
JUMP_BUDGET = "jump-budget"
# the rate at the current state is not representable as a float
RATE_OVERFLOW = "rate-overflow"
# holding times fell below the float resolution of the clock
TIME_RESOLUTION = "time-resolution"


@dataclass(frozen=True)
class PathDT:
    states: List[State]
    seed: int
    stream: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.states) - 1


@dataclass(frozen=True)
class PathCT:
    """Jump chain ``Y_0..Y_m`` with jump times ``T_0 = 0 < ... < T_m <= t_max``.

    ``diagnostic`` is ``sum_k 1/lambda(Y_k)`` over the recorded jump chain;
    it stays bounded along paths heading for explosion.
    """

    states: List[State]
    times: List[float]
    t_max: float
    reason: str
    diagnostic: float
    seed: int
    stream: int = 0

    @property
    def n_jumps(self) -> int:
        return len(self.states) - 1


@dataclass(frozen=True)
class EmpiricalDistribution:
    distribution: SparseDistribution
    horizon: float


class _Cdf:
    """Cached cumulative sums of rows for inverse-CDF sampling."""

    def __init__(self, row_fn):
        self._row_fn = row_fn
        self._cache: Dict[State, Tuple[List[State], List[float]]] = {}

    def get(self, x: State):
        hit = self._cache.get(x)
        if hit is None:
            row = self._row_fn(x)
            hit = ([y for y, _ in row], list(accumulate(w for _, w in row)))
            self._cache[x] = hit
        return hit


def _inverse_cdf(targets: Sequence[State], cum: Sequence[float], u: float) -> State:
    # smallest i with u <= cum[i]; rounding can leave cum[-1] a hair below 1
    i = bisect.bisect_left(cum, u)
    return targets[min(i, len(targets) - 1)]


def _draw_initial(model: ChainModel, u: float) -> State:
    support = sorted(model.gamma.items())
    states = [s for s, _ in support]
    return _inverse_cdf(states, list(accumulate(p for _, p in support)), u)


def sample_path_dt(model: ChainModel, n_steps: int, seed: int, stream_index: int = 0) -> PathDT:
    """Run ``n_steps`` steps of a discrete chain started from ``gamma``."""
    if model.kind != DISCRETE:
        raise ValueError("sample_path_dt needs a discrete model")
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    uniforms = UniformBuffer(stream(seed, stream_index))
    cdf = _Cdf(model.row)
    x = _draw_initial(model, uniforms.next())
    path = [x]
    for _ in range(n_steps):
        targets, cum = cdf.get(x)
        x = _inverse_cdf(targets, cum, uniforms.next())
        path.append(x)
    return PathDT(path, seed, stream_index)


def sample_path_ct(model: ChainModel, t_max: float, max_jumps: int, seed: int, stream_index: int = 0) -> PathCT:
    """Kendall-Gillespie path on ``[0, t_max]`` with a jump budget.

    Each jump consumes a uniform (choice of target) and a unit exponential
    (waiting time ``xi / lambda``). Absorbing states end the path at the
    horizon; no fictitious jumps are recorded. A path that reaches a state
    whose rate overflows a float stops there with reason ``rate-overflow``;
    one whose next holding time no longer advances the clock stops with
    ``time-resolution``. Both mean the path is exploding before ``t_max``.
    """
    if model.kind != CONTINUOUS:
        raise ValueError("sample_path_ct needs a continuous model")
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    if max_jumps < 1:
        raise ValueError("max_jumps must be at least 1")
    uniforms = UniformBuffer(stream(seed, stream_index))
    jumps = JumpDecomposition(model)
    cdf = _Cdf(jumps.row)
    rates: Dict[State, float] = {}

    y = _draw_initial(model, uniforms.next())
    states = [y]
    times = [0.0]
    t = 0.0
    q = model.exit_rate(y)
    diag = 1.0 / (q if q > 0 else 1.0)
    reason = HORIZON
    while True:
        if q == 0.0:
            break
        u = uniforms.next()
        xi = -math.log1p(-uniforms.next())
        t_next = t + xi / q
        if t_next > t_max:
            break
        if t_next == t:
            reason = TIME_RESOLUTION
            break
        targets, cum = cdf.get(y)
        y = _inverse_cdf(targets, cum, u)
        t = t_next
        states.append(y)
        times.append(t)
        q = rates.get(y)
        if q is None:
            try:
                q = rates[y] = model.exit_rate(y)
            except ModelError:
                reason = RATE_OVERFLOW
                break
        diag += 1.0 / (q if q > 0 else 1.0)
        if len(states) - 1 >= max_jumps:
            reason = JUMP_BUDGET
            break
    return PathCT(states, times, float(t_max), reason, diag, seed, stream_index)


def empirical_distribution(path, n: Optional[int] = None) -> EmpiricalDistribution:
    """Fraction of time spent in each state.

    Discrete paths: the first ``n`` states (default: all of them) are
    weighted ``1/n`` each. Continuous paths: time-weighted occupation of
    ``[0, t_max]``, known only up to the last jump for paths stopped by the
    jump budget, so the mass is then below one.
    """
    if isinstance(path, PathDT):
        states = path.states if n is None else path.states[:n]
        if not states:
            raise ValueError("empty path")
        counts: Dict[State, int] = {}
        for s in states:
            counts[s] = counts.get(s, 0) + 1
        N = len(states)
        return EmpiricalDistribution(SparseDistribution({s: c / N for s, c in counts.items()}), N)
    if isinstance(path, PathCT):
        T = path.t_max
        end = T if path.reason == HORIZON else path.times[-1]
        occ: Dict[State, List[float]] = {}
        bounds = path.times[1:] + [end]
        for s, a, b in zip(path.states, path.times, bounds):
            occ.setdefault(s, []).append(b - a)
        return EmpiricalDistribution(SparseDistribution({s: math.fsum(v) / T for s, v in occ.items()}), T)
    raise TypeError(f"unsupported path type {type(path).__name__}")


def worker_count(requested: Optional[int] = None) -> int:
    cap = os.environ.get("CHAINKIT_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def sample_ensemble(model: ChainModel, n_paths: int, seed: int, *, n_steps: int = 0, t_max: float = 1.0,
                    max_jumps: int = 10**6, workers: Optional[int] = None) -> list:
    """``n_paths`` independent trajectories; trajectory ``i`` uses stream ``(seed, i)``.

    The output order is the trajectory order whatever the worker count.
    """
    if model.kind == DISCRETE:
        def one(i):
            return sample_path_dt(model, n_steps, seed, i)
    else:
        def one(i):
            return sample_path_ct(model, t_max, max_jumps, seed, i)
    n_workers = worker_count(workers)
    if n_workers == 1 or n_paths < 2:
        return [one(i) for i in range(n_paths)]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(one, range(n_paths)))
