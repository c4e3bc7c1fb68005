"""Exit distributions and occupation measures of a domain.

For the first exit time ``sigma`` from a domain ``D``,

    mu(n, x) = P(sigma = n, X_n = x),    nu(n, x) = P(sigma > n, X_n = x),

with space marginals ``mu_S`` (where the chain leaves) and ``nu_S``
(expected time spent in each state before leaving). ``mu_S`` has mass
``P(sigma < inf)`` and ``nu_S`` has mass ``E[sigma]``.

Space marginals are the minimal nonnegative solutions of

    nu_S = gamma 1_D + nu_S P_DD,      mu_S = gamma 1_Dc + nu_S P_DDc,

which are computed by value iteration from zero. A direct linear solve is
not used because the system can have many solutions when closed sets that
the chain never reaches sit inside ``D``. When the system has more than
one nonnegative solution is an open question; the solvers do not try to
detect it. It is also open whether a finite exit time is needed for the
space-marginal equations to hold, so that assumption is carried as the
``assumed_finite_exit`` flag instead.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .distribution import SparseDistribution, State, StateLike, as_state
from .minimal import DEFAULT_MAX_ITER, DEFAULT_TOL, minimal_solution
from .model import CONTINUOUS, DISCRETE, ChainModel, JumpDecomposition, ModelError
from .structure import Truncation, restricted_matrix
from .transient import (
    DENSE_WORK_LIMIT,
    MAX_SERIES_TERMS,
    SolverBudgetError,
    _dense_work,
    _expm_minus_identity,
    _uniformized_propagate,
)


class Domain:
    """A set of states given by a predicate or an explicit list."""

    def __init__(self, predicate: Optional[Callable[[State], bool]] = None,
                 states: Optional[Iterable[StateLike]] = None, name: str = "D"):
        if (predicate is None) == (states is None):
            raise ValueError("give exactly one of predicate or states")
        self._states = None if states is None else frozenset(as_state(s) for s in states)
        self._predicate = predicate
        self.name = name

    @classmethod
    def from_states(cls, states: Iterable[StateLike], name: str = "D") -> "Domain":
        return cls(states=states, name=name)

    @classmethod
    def box(cls, lo, hi, name: str = "D") -> "Domain":
        lo, hi = as_state(lo), as_state(hi)
        if len(lo) != len(hi):
            raise ValueError("box corners differ in dimension")
        return cls(states=itertools.product(*(range(a, b + 1) for a, b in zip(lo, hi))), name=name)

    def __contains__(self, x) -> bool:
        x = as_state(x)
        if self._states is not None:
            return x in self._states
        return bool(self._predicate(x))

    @property
    def states(self) -> Optional[List[State]]:
        return None if self._states is None else sorted(self._states)

    def within(self, trunc: Truncation) -> List[State]:
        return [x for x in trunc if x in self]


def load_domain(path) -> Domain:
    """Domain from JSON: ``{"states": [...]}``, ``{"box": [lo, hi]}`` or ``{"complement": [...]}``."""
    with open(path) as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ModelError(f"{path}: domain must have exactly one of 'states', 'box', 'complement'")
    (key, val), = spec.items()
    try:
        if key == "states":
            return Domain.from_states(val)
        if key == "box":
            lo, hi = val
            return Domain.box(lo, hi)
        if key == "complement":
            excluded = frozenset(as_state(s) for s in val)
            return Domain(predicate=lambda x: x not in excluded)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"{path}: bad domain field {key!r}: {exc}") from None
    raise ModelError(f"{path}: unknown domain field {key!r}")


@dataclass
class ExitStatistics:
    """Exit distribution and occupation measure of a domain.

    ``mu`` and ``nu`` are the joint tables, one row per time (discrete) or
    per time bin (continuous), columns in ``truncation`` order; they are
    ``None`` when only space marginals were computed. ``mu_atom`` holds the
    exit mass at time zero for continuous runs.
    """

    mu_space: SparseDistribution
    nu_space: SparseDistribution
    exit_probability: float
    mean_exit_time: float
    error_bound: Optional[float]
    truncation: Truncation
    converged: bool = True
    reason: str = "solved"
    assumed_finite_exit: bool = False
    unbounded: List[State] = field(default_factory=list)
    mu: Optional[np.ndarray] = None
    nu: Optional[np.ndarray] = None
    times: Optional[np.ndarray] = None
    mu_atom: Optional[np.ndarray] = None
    log: Dict[str, object] = field(default_factory=dict)

    def exit_time_marginal(self) -> np.ndarray:
        """Exit mass per time (discrete) or per bin (continuous)."""
        if self.mu is None:
            raise ValueError("joint tables were not computed")
        return self.mu.sum(axis=1)

    def exit_time_density(self) -> np.ndarray:
        """Bin-averaged exit-time density of a continuous run."""
        if self.mu is None or self.times is None or len(self.times) != self.mu.shape[0] + 1:
            raise ValueError("density needs a binned continuous run")
        return self.mu.sum(axis=1) / np.diff(self.times)


def _split(model: ChainModel, domain: Domain, trunc: Truncation):
    inside = np.array([x in domain for x in trunc], dtype=bool)
    if not inside.any():
        raise ValueError("the truncation contains no state of the domain")
    return inside


def _gamma_on(trunc: Truncation, gamma: SparseDistribution) -> np.ndarray:
    v = np.zeros(len(trunc))
    for s, p in gamma.items():
        i = trunc.get_index(s)
        if i is not None:
            v[i] = p
    return v


def _dist(trunc: Truncation, vec: np.ndarray, check_mass: bool = True) -> SparseDistribution:
    return SparseDistribution(((s, float(v)) for s, v in zip(trunc, vec) if v > 0.0), check_mass=check_mass)


def exit_joint_dt(model: ChainModel, domain: Domain, n_f: int, trunc: Truncation,
                  gamma: Optional[SparseDistribution] = None) -> ExitStatistics:
    """Exit-time finite state projection for a discrete chain.

    Propagates ``nu^r(n+1) = nu^r(n) P`` over ``D`` within the truncation
    and collects ``mu^r(n+1)`` on the complement states of the truncation.
    Both tables are lower bounds on the true ``mu`` and ``nu``;
    ``error_bound = 1 - mu^r`` mass bounds the exit-distribution error.
    """
    if model.kind != DISCRETE:
        raise ValueError("exit_joint_dt needs a discrete model")
    if n_f < 0:
        raise ValueError("n_f must be nonnegative")
    gamma = model.gamma if gamma is None else gamma
    inside = _split(model, domain, trunc)
    W, _ = restricted_matrix(model.row, trunc)
    from_d = sp.diags(inside.astype(float)) @ W
    WT = from_d.T.tocsr()
    g = _gamma_on(trunc, gamma)
    mu = np.zeros((n_f + 1, len(trunc)))
    nu = np.zeros((n_f + 1, len(trunc)))
    mu[0] = np.where(inside, 0.0, g)
    nu[0] = np.where(inside, g, 0.0)
    for n in range(n_f):
        step = WT @ nu[n]
        nu[n + 1] = np.where(inside, step, 0.0)
        mu[n + 1] = np.where(inside, 0.0, step)
    mu_s = mu.sum(axis=0)
    nu_s = nu.sum(axis=0)
    exit_prob = math.fsum(mu_s)
    return ExitStatistics(
        mu_space=_dist(trunc, mu_s),
        nu_space=_dist(trunc, nu_s, check_mass=False),
        exit_probability=exit_prob,
        mean_exit_time=math.fsum(nu_s),
        error_bound=min(1.0, max(0.0, 1.0 - exit_prob)),
        truncation=trunc,
        mu=mu,
        nu=nu,
        times=np.arange(n_f + 1),
        log={"steps": n_f, "remaining_in_domain": float(nu[n_f].sum())},
    )


def exit_marginals_minimal(model: ChainModel, domain: Domain, gamma: Optional[SparseDistribution] = None,
                           trunc: Optional[Truncation] = None, tol: float = DEFAULT_TOL, *,
                           assume_finite_exit: bool = False, max_iter: int = DEFAULT_MAX_ITER) -> ExitStatistics:
    """Space marginals ``mu_S`` and ``nu_S`` as minimal nonnegative solutions.

    Discrete chains solve ``nu_S = gamma 1_D + nu_S P_DD`` on ``D`` within
    the truncation. Continuous chains solve the same system for the jump
    chain occupation ``w`` and set ``nu_S = w / q``, which is the minimal
    solution of ``q(x) nu_S(x) = gamma(x) + sum_z nu_S(z) q(z, x)``.
    Transitions from ``D`` to states of ``D`` outside the truncation are
    dropped, so truncated results are lower bounds.

    The characterization assumes the exit happens almost surely; that is
    not checked here and is recorded as ``assumed_finite_exit``.
    States with infinite expected occupation are listed in ``unbounded``
    and the result is flagged non-converged.
    """
    gamma = model.gamma if gamma is None else gamma
    if trunc is None:
        raise ValueError("a truncation is required")
    inside = _split(model, domain, trunc)
    if model.kind == CONTINUOUS:
        jumps = JumpDecomposition(model)
        row_fn = jumps.row
        rates = np.array([jumps.rate(x) for x in trunc])
    else:
        row_fn = model.row
        rates = np.ones(len(trunc))
    W, _ = restricted_matrix(row_fn, trunc)
    idx = np.flatnonzero(inside)
    sub_states = [trunc.states[i] for i in idx]
    M = W[idx][:, idx]
    g = _gamma_on(trunc, gamma)
    b = g[idx]
    sol = minimal_solution(M, b, left=True, tol=tol, max_iter=max_iter)
    w = sol.values
    finite = np.isfinite(w)

    # one-step exits, including targets outside the truncation
    mu_acc: Dict[State, List[float]] = {}
    for s, p in gamma.items():
        if s not in domain:
            mu_acc.setdefault(s, []).append(p)
    for wi, x, ok in zip(w, sub_states, finite):
        if not ok or wi == 0.0:
            continue
        for y, p in row_fn(x):
            if y not in domain:
                mu_acc.setdefault(y, []).append(wi * p)
    mu_space = SparseDistribution({s: math.fsum(v) for s, v in mu_acc.items()}, check_mass=False)

    nu_vals = np.where(finite, w, 0.0) / rates[idx]
    nu_space = SparseDistribution(
        ((s, float(v)) for s, v in zip(sub_states, nu_vals) if v > 0.0), check_mass=False
    )
    unbounded = [s for s, ok in zip(sub_states, finite) if not ok]
    converged = sol.converged and not unbounded
    if unbounded:
        reason = "unbounded"
    elif not sol.converged:
        reason = "max-iter"
    else:
        reason = "solved"
    exit_prob = mu_space.mass
    mean_time = math.inf if unbounded else nu_space.mass
    return ExitStatistics(
        mu_space=mu_space,
        nu_space=nu_space,
        exit_probability=exit_prob,
        mean_exit_time=mean_time,
        error_bound=min(1.0, max(0.0, 1.0 - exit_prob)) if assume_finite_exit else None,
        truncation=trunc,
        converged=converged,
        reason=reason,
        assumed_finite_exit=assume_finite_exit,
        unbounded=unbounded,
        log={"sweeps": sol.sweeps, "residual": sol.residual, "method": sol.method,
             "last_iterate_mass": float(np.sum(nu_vals))},
    )


def _bin_edges(t_f: float, bins: Union[int, Sequence[float]]) -> np.ndarray:
    if isinstance(bins, (int, np.integer)):
        if bins < 1:
            raise ValueError("bins must be positive")
        return np.linspace(0.0, t_f, int(bins) + 1)
    edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or edges[0] != 0.0 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must start at 0 and increase strictly")
    return edges


def exit_density_ct(model: ChainModel, domain: Domain, t_f: float, trunc: Truncation,
                    series_tol: float = 1e-12, bins: Union[int, Sequence[float]] = 100,
                    gamma: Optional[SparseDistribution] = None) -> ExitStatistics:
    """Binned exit-time distribution of a continuous chain.

    States outside ``D`` are made absorbing and the truncated law ``p^_t``
    on ``D`` is propagated bin by bin. Per bin, ``nu`` is the time
    integral of ``p^_t`` on ``D`` and ``mu`` the mass that enters each
    complement state, ``int p^_s Q ds``. Exit mass present at time zero
    (``gamma`` outside ``D``) is reported separately as ``mu_atom``.
    """
    if model.kind != CONTINUOUS:
        raise ValueError("exit_density_ct needs a continuous model")
    if not t_f > 0:
        raise ValueError("t_f must be positive")
    gamma = model.gamma if gamma is None else gamma
    edges = _bin_edges(t_f, bins)
    if edges[-1] > t_f * (1 + 1e-12) or edges[-1] < t_f * (1 - 1e-12):
        raise ValueError("the last bin edge must equal t_f")
    inside = _split(model, domain, trunc)
    W, _ = restricted_matrix(model.row, trunc)
    q = np.array([model.exit_rate(x) for x in trunc])
    idx = np.flatnonzero(inside)
    W_dd = W[idx][:, idx].tocsr()
    to_exit = W[idx].tocsr()
    to_exit = to_exit.multiply(np.where(inside, 0.0, 1.0)[None, :]).tocsr()
    q_d = q[idx]
    g = _gamma_on(trunc, gamma)
    atom = np.where(inside, 0.0, g)
    p = g[idx].copy()
    n_bins = len(edges) - 1
    mu = np.zeros((n_bins, len(trunc)))
    nu = np.zeros((n_bins, len(trunc)))
    lam = float(q_d.max()) if q_d.size else 0.0
    methods = set()
    for k in range(n_bins):
        h = edges[k + 1] - edges[k]
        if lam * h <= MAX_SERIES_TERMS:
            p_next, _, integral = _uniformized_propagate(p, W_dd, q_d, h, series_tol, integrate=True)
            methods.add("uniformization")
        else:
            p_next, integral = _dense_with_integral(p, W_dd, q_d, h, series_tol)
            methods.add("dense-squaring")
        nu[k, idx] = integral
        mu[k] = to_exit.T @ integral
        p = np.maximum(p_next, 0.0)
    mu_s = atom + mu.sum(axis=0)
    nu_s = nu.sum(axis=0)
    exit_prob = math.fsum(mu_s)
    return ExitStatistics(
        mu_space=_dist(trunc, mu_s),
        nu_space=_dist(trunc, nu_s, check_mass=False),
        exit_probability=exit_prob,
        mean_exit_time=math.fsum(nu_s),
        error_bound=min(1.0, max(0.0, 1.0 - exit_prob) + n_bins * series_tol),
        truncation=trunc,
        mu=mu,
        nu=nu,
        times=edges,
        mu_atom=atom,
        log={"bins": n_bins, "method": ",".join(sorted(methods)), "remaining_in_domain": float(p.sum())},
    )


def _dense_with_integral(p0, W, q, h, series_tol):
    """``p0 exp(hG)`` and ``int_0^h p0 exp(sG) ds`` from one augmented exponential."""
    n = len(q)
    lam = float(q.max())
    if _dense_work(2 * n, 2 * lam + 1.0, h) > DENSE_WORK_LIMIT:
        raise SolverBudgetError(f"dense exit solve on {n} states exceeds the work budget")
    G = W.toarray() - np.diag(q)
    B = np.zeros((2 * n, 2 * n))
    B[:n, :n] = G
    B[:n, n:] = np.eye(n)
    D, _ = _expm_minus_identity(B, h, 2.0 * lam + 1.0, series_tol)
    E = np.eye(n) + D[:n, :n]
    E[E < 0.0] = 0.0
    integral = p0 @ np.maximum(D[:n, n:], 0.0)
    return p0 @ E, integral


def gambler_oracle(a, K: int, gamma) -> Tuple[float, float]:
    """Closed-form success and ruin probabilities of the gambler's ruin.

    Success means reaching ``K`` before ``0`` when each round is won with
    probability ``a``. With ``alpha = (1 - a) / a`` the success probability
    from ``x`` is ``x / K`` for ``a = 1/2`` and
    ``(1 - alpha**x) / (1 - alpha**K)`` otherwise, averaged over ``gamma``.
    """
    a = float(a)
    if not 0.0 < a < 1.0:
        raise ValueError("a must lie in (0, 1)")
    if K < 2:
        raise ValueError("K must be at least 2")
    if isinstance(gamma, (int, np.integer)):
        gamma = SparseDistribution.point(int(gamma))
    elif not isinstance(gamma, SparseDistribution):
        gamma = SparseDistribution(gamma)
    if abs(gamma.mass - 1.0) > 1e-12:
        raise ValueError("gamma must be a probability distribution")
    xs = []
    for s, p in gamma.items():
        if len(s) != 1 or not 1 <= s[0] <= K - 1:
            raise ValueError(f"gamma puts mass on {s}, outside 1..{K - 1}")
        xs.append((s[0], p))
    if a == 0.5:
        success = math.fsum(p * x / K for x, p in xs)
    else:
        alpha = (1.0 - a) / a
        if alpha < 1.0:
            la = math.log(alpha)
            success = math.fsum(p * math.expm1(x * la) / math.expm1(K * la) for x, p in xs)
        else:
            # divide through by alpha**K to stay finite for large K
            lb = -math.log(alpha)
            success = math.fsum(p * math.exp((K - x) * lb) * math.expm1(x * lb) / math.expm1(K * lb) for x, p in xs)
    success = min(max(success, 0.0), 1.0)
    return success, 1.0 - success
