"""Foster-Lyapunov drift certificates and hitting-time functionals.

A certificate pairs a nonnegative test function ``v`` with a finite set
``F`` and one of the drift inequalities below; it is checked pointwise at
every truncation state whose row stays inside the truncation.

============== ==================================
kind           inequality
============== ==================================
dt-recurrence  Pv <= v            off F
dt-foster      Pv <= v - 1 + b 1_F
dt-geometric   Pv <= v / theta - 1 + b 1_F
ct-regularity  Qv <= c v
ct-positive    Qv <= -1 + b 1_F
ct-exponential Qv <= -alpha v - 1 + b 1_F
============== ==================================

The inequalities quantify over an infinite state space, so a passing
check only covers the truncation. Whatever the user claims about the tail
is stored verbatim and never machine-checked. Only the sufficient
direction of each criterion is checked. For the geometric criteria it is
open whether the converse needs the absence of transient states.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .distribution import State, StateLike, as_state
from .minimal import DEFAULT_CAP, DEFAULT_MAX_ITER, DEFAULT_TOL, _reach, minimal_solution
from .model import CONTINUOUS, DISCRETE, ChainModel, ModelError
from .structure import Truncation, restricted_matrix

KINDS = ("dt-recurrence", "dt-foster", "dt-geometric", "ct-regularity", "ct-positive", "ct-exponential")
SLACK_RTOL = 1e-12


def l1_norm(x: State) -> int:
    return sum(abs(c) for c in x)


def polynomial_v(coefficients: Sequence[float] = (), terms: Sequence[Tuple[float, Sequence[int]]] = ()):
    """``v(x) = sum_k c_k |x|_1^k`` plus monomial ``terms`` ``(coef, exponents)``."""
    coefficients = [float(c) for c in coefficients]
    terms = [(float(c), tuple(int(e) for e in exps)) for c, exps in terms]

    def v(x: State) -> float:
        n = l1_norm(x)
        total = [c * float(n) ** k for k, c in enumerate(coefficients)]
        for c, exps in terms:
            if len(exps) != len(x):
                raise ValueError(f"term exponents {exps} do not match state {x}")
            total.append(c * math.prod(float(xi) ** e for xi, e in zip(x, exps)))
        return math.fsum(total)

    return v


def exponential_v(base: float, scale: float = 1.0):
    """``v(x) = scale * base**|x|_1``; overflow gives ``inf``, which checks reject."""
    base = float(base)
    if base <= 0:
        raise ValueError("base must be positive")

    def v(x: State) -> float:
        try:
            return scale * base ** l1_norm(x)
        except OverflowError:
            return math.inf

    return v


@dataclass
class Certificate:
    """A drift inequality, test function and finite set ``F``."""

    kind: str
    v: Callable[[State], float]
    F: FrozenSet[State]
    b: float = 0.0
    theta: Optional[float] = None
    alpha: Optional[float] = None
    c: Optional[float] = None
    tail: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown certificate kind {self.kind!r}; expected one of {KINDS}")
        self.F = frozenset(as_state(s) for s in self.F)
        if self.kind == "dt-geometric" and not (self.theta is not None and self.theta > 1):
            raise ValueError("dt-geometric needs theta > 1")
        if self.kind == "ct-exponential" and not (self.alpha is not None and self.alpha > 0):
            raise ValueError("ct-exponential needs alpha > 0")
        if self.kind == "ct-regularity" and (self.c is None or not math.isfinite(self.c)):
            raise ValueError("ct-regularity needs a real constant c")
        if not math.isfinite(self.b):
            raise ValueError("b must be finite")

    @property
    def time(self) -> str:
        return DISCRETE if self.kind.startswith("dt") else CONTINUOUS


def certificate_from_json(spec: Mapping) -> Certificate:
    """Certificate from a JSON object.

    ``{"kind": ..., "v": {"family": "polynomial", "coefficients": [...]}
    | {"family": "polynomial", "terms": [[coef, [e1, ...]], ...]}
    | {"family": "exponential", "base": 2}, "F": [...], "b": ..., "theta": ...,
    "alpha": ..., "c": ..., "tail": "..."}``
    """
    allowed = {"kind", "v", "F", "b", "theta", "alpha", "c", "tail"}
    unknown = set(spec) - allowed
    if unknown:
        raise ModelError(f"unknown certificate field(s): {sorted(unknown)}")
    try:
        vs = spec["v"]
        family = vs.get("family")
        if family == "polynomial":
            v = polynomial_v(vs.get("coefficients", ()), vs.get("terms", ()))
        elif family == "exponential":
            v = exponential_v(vs["base"], vs.get("scale", 1.0))
        else:
            raise ModelError(f"unknown v family {family!r}")
        return Certificate(
            kind=spec["kind"],
            v=v,
            F=frozenset(as_state(s) for s in spec.get("F", [])),
            b=float(spec.get("b", 0.0)),
            theta=None if spec.get("theta") is None else float(spec["theta"]),
            alpha=None if spec.get("alpha") is None else float(spec["alpha"]),
            c=None if spec.get("c") is None else float(spec["c"]),
            tail=str(spec.get("tail", "")),
        )
    except KeyError as exc:
        raise ModelError(f"certificate is missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ModelError(f"bad certificate: {exc}") from None


def load_certificate(path) -> Certificate:
    with open(path) as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(spec, dict):
        raise ModelError(f"{path}: certificate must be a JSON object")
    return certificate_from_json(spec)


@dataclass
class CertificateReport:
    """Outcome of checking a certificate on a truncation.

    ``slack`` maps each checked state to ``rhs - lhs``. Boundary states,
    whose rows leave the truncation, are listed in ``unchecked``.
    """

    kind: str
    verdict: str
    violations: List[Tuple[State, float]]
    worst_slack: float
    slack: Dict[State, float]
    unchecked: List[State]
    exempt: List[State]
    tail: str
    coverage: str = ""

    @property
    def holds(self) -> bool:
        return self.verdict == "holds-on-truncation"

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "verdict": self.verdict,
            "worst_slack": self.worst_slack,
            "violations": [[list(s), sl] for s, sl in self.violations],
            "checked_states": len(self.slack),
            "unchecked_boundary_states": [list(s) for s in self.unchecked],
            "coverage": self.coverage,
            "tail_claim": self.tail,
        }


def _value(v, x: State) -> float:
    val = float(v(x))
    if not math.isfinite(val) or val < 0:
        raise ValueError(f"test function is {val} at state {x}; it must be finite and nonnegative")
    return val


def check_certificate(model: ChainModel, cert: Certificate, trunc: Truncation) -> CertificateReport:
    """Check the drift inequality of ``cert`` at every interior truncation state."""
    if cert.time != model.kind:
        raise ValueError(f"a {cert.kind} certificate needs a {cert.time} model")
    outside_f = [s for s in cert.F if s not in trunc]
    if outside_f:
        raise ValueError(f"F has states outside the truncation: {sorted(outside_f)}")
    cache: Dict[State, float] = {}

    def v(x):
        if x not in cache:
            cache[x] = _value(cert.v, x)
        return cache[x]

    slack: Dict[State, float] = {}
    unchecked, exempt = [], []
    for x in trunc:
        vx = v(x)
        row = model.row(x)
        if any(y not in trunc for y, _ in row):
            unchecked.append(x)
            continue
        in_f = x in cert.F
        if cert.kind == "dt-recurrence" and in_f:
            exempt.append(x)
            continue
        if model.kind == DISCRETE:
            lhs = math.fsum(w * v(y) for y, w in row)
        else:
            lhs = math.fsum(w * (v(y) - vx) for y, w in row)
        bump = cert.b if in_f else 0.0
        if cert.kind == "dt-recurrence":
            rhs = vx
        elif cert.kind == "dt-foster":
            rhs = vx - 1.0 + bump
        elif cert.kind == "dt-geometric":
            rhs = vx / cert.theta - 1.0 + bump
        elif cert.kind == "ct-regularity":
            rhs = cert.c * vx
        elif cert.kind == "ct-positive":
            rhs = -1.0 + bump
        else:
            rhs = -cert.alpha * vx - 1.0 + bump
        s = rhs - lhs
        tol = SLACK_RTOL * max(1.0, abs(lhs), abs(rhs))
        slack[x] = 0.0 if abs(s) <= tol else s
    violations = sorted(((x, s) for x, s in slack.items() if s < 0), key=lambda t: (t[1], t[0]))
    worst = min(slack.values()) if slack else math.inf
    coverage = (f"{len(slack)} interior state(s) checked, {len(unchecked)} boundary state(s) unchecked"
                + (f", {len(exempt)} state(s) in F exempt" if exempt else ""))
    return CertificateReport(cert.kind, "violated" if violations else "holds-on-truncation", violations, worst,
                             slack, sorted(unchecked), sorted(exempt), cert.tail, coverage)


@dataclass
class HittingFunctional:
    """Minimal solution of the hitting-time recursion on a truncation.

    ``values`` is zero on ``F`` and ``inf`` at states flagged unbounded.
    ``returns`` holds the one-step recursion evaluated at the states of
    ``F``: the mean (or weighted) return time to ``F``.
    """

    values: Dict[State, float]
    returns: Dict[State, float]
    unbounded: List[State]
    converged: bool
    sweeps: int
    residual: float

    def __getitem__(self, x) -> float:
        return self.values[as_state(x)]

    def __len__(self) -> int:
        return len(self.values)


def minimal_hitting_functional(model: ChainModel, F: Iterable[StateLike], weight: float, trunc: Truncation,
                               tol: float = DEFAULT_TOL, *, outside: str = "unbounded", cap: float = DEFAULT_CAP,
                               max_iter: int = DEFAULT_MAX_ITER) -> HittingFunctional:
    """Value iteration from zero for hitting-time functionals of ``F``.

    Discrete chains (``weight = theta >= 1``) solve
    ``u(x) = theta (1 + sum_{z not in F} p(x, z) u(z))`` off ``F``, so
    ``theta = 1`` gives mean hitting times. Continuous chains
    (``weight = alpha >= 0``, with ``alpha < q(x)`` off ``F``) solve
    ``u(x) = (1 + sum_z q(x, z) u(z)) / (q(x) - alpha)``.

    ``outside`` decides what happens to mass that leaves the truncation:
    ``"unbounded"`` treats outside states as ``u = inf``, so every state
    that can escape while avoiding ``F`` is flagged; ``"zero"`` drops that
    mass and gives lower bounds.
    """
    if outside not in ("unbounded", "zero"):
        raise ValueError("outside must be 'unbounded' or 'zero'")
    targets = {as_state(s) for s in F}
    missing = [s for s in targets if s not in trunc]
    if missing:
        raise ValueError(f"F has states outside the truncation: {sorted(missing)}")
    W, out = restricted_matrix(model.row, trunc)
    states = trunc.states
    n = len(states)
    in_f = np.array([s in targets for s in states], dtype=bool)
    if model.kind == DISCRETE:
        theta = float(weight)
        if theta < 1:
            raise ValueError("discrete functionals need theta >= 1")
        scale = np.full(n, theta)
        b = np.full(n, theta)
        stuck = np.zeros(n, dtype=bool)
    else:
        alpha = float(weight)
        if alpha < 0:
            raise ValueError("continuous functionals need alpha >= 0")
        q = np.array([model.exit_rate(x) for x in states])
        stuck = (q == 0.0) & ~in_f
        bad = [s for s, qx, f, st in zip(states, q, in_f, stuck) if not f and not st and alpha >= qx]
        if bad:
            raise ValueError(f"alpha must be below q(x) off F; fails at {bad[0]}")
        denom = np.where(stuck | in_f, 1.0, q - alpha)
        scale = 1.0 / denom
        b = scale.copy()
    keep = ~in_f
    M = W.multiply(keep[None, :]).multiply(keep[:, None]).multiply(scale[:, None]).tocsr()
    b = np.where(keep, b, 0.0)

    forced = stuck.copy()
    if outside == "unbounded":
        forced |= (out > 0) & keep
    if forced.any():
        # states that can reach a forced state through non-F states
        forced = _reach(M.T.tocsr(), np.flatnonzero(forced)) & keep
    M = M.multiply(~forced[None, :]).multiply(~forced[:, None]).tocsr()
    b = np.where(forced, 0.0, b)
    sol = minimal_solution(M, b, tol=tol, max_iter=max_iter, cap=cap)
    u = sol.values.copy()
    u[forced] = np.inf
    u[in_f] = 0.0
    unbounded_mask = ~np.isfinite(u)

    returns: Dict[State, float] = {}
    for i in np.flatnonzero(in_f):
        x = states[i]
        row = model.row(x)
        if outside == "unbounded" and out[i] > 0:
            returns[x] = math.inf
            continue
        acc = [1.0]
        for y, w in row:
            j = trunc.get_index(y)
            if j is None or in_f[j]:
                continue
            acc.append(w * u[j])
        total = math.fsum(acc) if all(math.isfinite(a) for a in acc) else math.inf
        if model.kind == DISCRETE:
            returns[x] = float(weight) * total
        else:
            qx = model.exit_rate(x)
            returns[x] = total / (qx - float(weight)) if qx > float(weight) else math.inf
    values = {s: float(val) for s, val in zip(states, u)}
    return HittingFunctional(values, returns, [s for s, m in zip(states, unbounded_mask) if m],
                             sol.converged, sol.sweeps, sol.residual)
