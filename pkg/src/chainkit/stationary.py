"""Ergodic distributions of finite closed classes and balance residuals.

Every stationary distribution of a chain is a convex combination of the
ergodic distributions of its positive recurrent closed classes. Here only
finite classes certified closed by :func:`chainkit.structure.classify` are
solved, so each returned distribution is genuinely stationary.

For continuous chains ``pi Q = 0`` alone does not make ``pi`` stationary:
the chain must also be non-explosive when started from ``pi``. Residual
reports therefore carry a ``requires_non_explosivity`` flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .distribution import SparseDistribution, State, StateLike, as_state
from .exit import Domain, exit_marginals_minimal
from .model import CONTINUOUS, DISCRETE, ChainModel, JumpDecomposition
from .structure import ClassDecomposition, Truncation, restricted_matrix

DENSE_LIMIT = 2000
POWER_TOL = 1e-12
POWER_MAX_ITER = 10**6


@dataclass
class ClassSolution:
    states: List[State]
    distribution: SparseDistribution
    residual: float
    method: str
    attempts: List[Dict[str, object]] = field(default_factory=list)


@dataclass
class ErgodicReport:
    """One ergodic distribution per certified-closed class.

    The stationary distributions supported on these classes are exactly
    the convex combinations of ``distributions``.
    """

    classes: List[ClassSolution]
    skipped: List[List[State]]
    kind: str
    note: str = ""

    @property
    def distributions(self) -> List[SparseDistribution]:
        return [c.distribution for c in self.classes]

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "note": self.note,
            "classes": [
                {"states": [list(s) for s in c.states], "residual": c.residual, "method": c.method,
                 "attempts": c.attempts}
                for c in self.classes
            ],
            "skipped_classes": [[list(s) for s in c] for c in self.skipped],
        }


def _class_operator(model: ChainModel, states: Sequence[State]):
    """``P - I`` (discrete) or ``Q`` (continuous) on a closed class, sparse."""
    trunc = Truncation(states)
    W, out = restricted_matrix(model.row, trunc)
    if np.any(out > 0):
        raise ValueError("class is not closed")
    n = len(states)
    if model.kind == DISCRETE:
        return (W - sp.identity(n)).tocsr()
    q = np.array([model.exit_rate(x) for x in states])
    return (W - sp.diags(q)).tocsr()


def _l1_residual(pi: np.ndarray, G: sp.csr_matrix) -> float:
    return float(np.abs(G.T @ pi).sum())


def _direct(G: sp.csr_matrix) -> np.ndarray:
    A = G.T.toarray()
    A[0, :] = 1.0
    rhs = np.zeros(A.shape[0])
    rhs[0] = 1.0
    pi = np.linalg.solve(A, rhs)
    if not np.all(np.isfinite(pi)) or pi.min() < -1e-10:
        raise np.linalg.LinAlgError("direct solve returned an invalid vector")
    return pi


def _power(G: sp.csr_matrix, kind: str, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER):
    """Damped power iteration on ``(P + I) / 2`` or ``(P_L + I) / 2``."""
    n = G.shape[0]
    if kind == DISCRETE:
        P = G + sp.identity(n)
    else:
        lam = float(-G.diagonal().min()) or 1.0
        P = sp.identity(n) + G / lam
    T = (0.5 * (P + sp.identity(n))).T.tocsr()
    pi = np.full(n, 1.0 / n)
    resid = math.inf
    for k in range(1, max_iter + 1):
        nxt = T @ pi
        nxt /= nxt.sum()
        if k % 16 == 0:
            resid = _l1_residual(nxt, G)
            if resid <= tol:
                return nxt, k, resid
        pi = nxt
    return pi, max_iter, _l1_residual(pi, G)


def _solve_class(model: ChainModel, states: List[State]) -> ClassSolution:
    if len(states) == 1:
        x = states[0]
        return ClassSolution(states, SparseDistribution.point(x), 0.0, "singleton", [{"method": "singleton"}])
    G = _class_operator(model, states)
    attempts = []
    pi = None
    method = ""
    if len(states) <= DENSE_LIMIT:
        try:
            pi = _direct(G)
            method = "direct"
            attempts.append({"method": "direct", "ok": True})
        except np.linalg.LinAlgError as exc:
            attempts.append({"method": "direct", "ok": False, "error": str(exc)})
    if pi is None:
        pi, iters, resid = _power(G, model.kind)
        method = "power-iteration"
        attempts.append({"method": method, "ok": resid <= POWER_TOL, "iterations": iters, "residual": resid})
    pi = np.maximum(pi, 0.0)
    pi = pi / math.fsum(pi)
    resid = _l1_residual(pi, G)
    dist = SparseDistribution(((s, float(v)) for s, v in zip(states, pi) if v > 0.0))
    return ClassSolution(states, dist, resid, method, attempts)


def ergodic_distributions(model: ChainModel, decomposition: ClassDecomposition) -> ErgodicReport:
    """Solve ``pi P = pi`` or ``pi Q = 0`` with ``sum pi = 1`` on every certified-closed class.

    Classes up to 2000 states use a dense solve with the first balance
    equation replaced by the normalization; larger classes, or a failed
    dense solve, fall back to damped power iteration. Classes that are not
    certified closed are listed in ``skipped``.
    """
    if decomposition.kind != model.kind:
        raise ValueError("decomposition was computed for a different kind of model")
    solved = []
    skipped = []
    for states, closed in zip(decomposition.classes, decomposition.certified_closed):
        if closed:
            solved.append(_solve_class(model, list(states)))
        else:
            skipped.append(list(states))
    note = "stationary distributions on these classes are the convex combinations of the listed ones"
    if skipped:
        note += f"; {len(skipped)} class(es) not certified closed were not solved"
    return ErgodicReport(solved, skipped, model.kind, note)


@dataclass
class ResidualReport:
    """Balance residual ``||pi Q||_1`` or ``||pi P - pi||_1`` over a truncation.

    A small residual never by itself certifies stationarity of a continuous
    chain; see ``requires_non_explosivity``.
    """

    residual: float
    per_state: Dict[State, float]
    mass_outside: float
    kind: str
    requires_non_explosivity: bool
    certificate: Optional[object] = None

    @property
    def caveat_discharged(self) -> bool:
        cert = self.certificate
        return cert is not None and getattr(cert, "kind", None) == "ct-regularity" and cert.holds

    def to_json(self) -> dict:
        return {
            "residual": self.residual,
            "mass_outside": self.mass_outside,
            "kind": self.kind,
            "requires_non_explosivity": self.requires_non_explosivity,
            "caveat_discharged_on_truncation": self.caveat_discharged,
            "stationarity_asserted": False,
        }


def stationary_residual(model: ChainModel, pi: SparseDistribution, trunc: Truncation,
                        certificate=None) -> ResidualReport:
    """Balance residual of ``pi`` at the states of ``trunc``.

    Inflow into each truncation state is summed over the whole support of
    ``pi``, which may extend past the truncation; the mass of ``pi``
    outside ``trunc`` is reported. For continuous models the report always
    sets ``requires_non_explosivity``; a ``ct-regularity`` certificate
    report that holds marks the caveat as discharged on the truncation.
    """
    inflow: Dict[State, List[float]] = {x: [] for x in trunc}
    for x, p in pi.items():
        for y, w in model.row(x):
            if y in inflow:
                inflow[y].append(p * w)
    per_state = {}
    for y in trunc:
        own = pi.get(y, 0.0)
        loss = own * (model.exit_rate(y) if model.kind == CONTINUOUS else 1.0)
        per_state[y] = math.fsum(inflow[y] + [-loss])
    residual = math.fsum(abs(v) for v in per_state.values())
    outside = math.fsum(p for x, p in pi.items() if x not in trunc)
    return ResidualReport(residual, per_state, outside, model.kind, model.kind == CONTINUOUS, certificate)


def ergodic_via_regeneration(model: ChainModel, states: Sequence[StateLike], anchor: StateLike,
                             tol: float = 1e-13) -> SparseDistribution:
    """Ergodic distribution from the occupation measure of one excursion.

    ``pi(y)`` is the expected time spent at ``y`` before the first return
    to ``anchor``, divided by the expected return time. The excursion
    occupation is the minimal solution for the domain ``C \\ {anchor}``
    started from the anchor's row, plus the initial sojourn at the anchor.
    """
    members = [as_state(s) for s in states]
    x = as_state(anchor)
    if x not in members:
        raise ValueError("anchor must belong to the class")
    trunc = Truncation(members)
    _, out = restricted_matrix(model.row, trunc)
    if np.any(out > 0):
        raise ValueError("class is not closed")
    if len(members) == 1:
        return SparseDistribution.point(x)
    if model.kind == CONTINUOUS:
        jumps = JumpDecomposition(model)
        start = SparseDistribution(dict(jumps.row(x)))
        sojourn = 1.0 / model.exit_rate(x)
    else:
        start = SparseDistribution(dict(model.row(x)))
        sojourn = 1.0
    rest = [s for s in members if s != x]
    stats = exit_marginals_minimal(model, Domain.from_states(rest), start, trunc, tol, assume_finite_exit=True)
    if not stats.converged:
        raise RuntimeError(f"excursion occupation did not converge ({stats.reason})")
    occ = {s: v for s, v in stats.nu_space.items()}
    occ[x] = occ.get(x, 0.0) + sojourn
    total = math.fsum(occ.values())
    return SparseDistribution({s: v / total for s, v in occ.items()})
