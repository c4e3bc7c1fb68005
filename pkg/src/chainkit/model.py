"""Chain models as lazy sparse row oracles.

A model never materializes its transition matrix. It exposes ``row(x)``
returning the finitely many ``(target, weight)`` pairs leaving ``x``:
one-step probabilities ``p(x, y)`` for discrete chains (diagonal
included), or off-diagonal rates ``q(x, y)`` for continuous chains (the
diagonal ``-q(x)`` is implied, so conservativity cannot be violated).

Rows are returned sorted by target in the lexicographic state order,
which is the enumeration used by the path samplers.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .distribution import MASS_TOL, SparseDistribution, State, StateLike, as_state

DISCRETE = "discrete"
CONTINUOUS = "continuous"

Row = List[Tuple[State, float]]


class ModelError(ValueError):
    """Raised for model descriptions or rows violating the matrix axioms."""


class StateIndexer:
    """Dense indices for states in discovery (insertion) order.

    Not thread safe; use one indexer per thread.
    """

    def __init__(self, states: Iterable[StateLike] = ()):
        self._index: Dict[State, int] = {}
        self._states: List[State] = []
        for s in states:
            self.add(s)

    def add(self, x: StateLike) -> int:
        key = as_state(x)
        i = self._index.get(key)
        if i is None:
            i = len(self._states)
            self._index[key] = i
            self._states.append(key)
        return i

    def index(self, x: StateLike) -> int:
        return self._index[as_state(x)]

    def get(self, x: StateLike, default=None):
        return self._index.get(as_state(x), default)

    def inverse(self, i: int) -> State:
        return self._states[i]

    @property
    def states(self) -> List[State]:
        return list(self._states)

    def __contains__(self, x) -> bool:
        try:
            return as_state(x) in self._index
        except (TypeError, ValueError):
            return False

    def __len__(self) -> int:
        return len(self._states)

    def __iter__(self):
        return iter(self._states)


def _normalize_row(x: State, raw: Iterable, kind: str) -> Row:
    merged: Dict[State, float] = {}
    for target, weight in raw:
        y = as_state(target)
        if len(y) != len(x):
            raise ModelError(f"row of {x}: target {y} has dimension {len(y)}, expected {len(x)}")
        w = float(weight)
        if math.isnan(w) or w < 0.0:
            raise ModelError(f"row of {x}: negative or NaN weight {weight!r} for target {y}")
        if math.isinf(w):
            raise ModelError(f"row of {x}: infinite weight for target {y}")
        if kind == CONTINUOUS and y == x:
            raise ModelError(f"row of {x}: continuous rows list off-diagonal rates only")
        if y in merged:
            raise ModelError(f"row of {x}: duplicate target {y}")
        merged[y] = w
    row = sorted((y, w) for y, w in merged.items() if w > 0.0)
    if kind == DISCRETE:
        total = math.fsum(w for _, w in row)
        if abs(total - 1.0) > MASS_TOL:
            raise ModelError(f"row of {x}: row mass {total!r} differs from 1")
    else:
        total = math.fsum(w for _, w in row)
        if not math.isfinite(total):
            raise ModelError(f"row of {x}: total rate is not finite")
    return row


@dataclass(frozen=True, eq=False)
class ChainModel:
    """A discrete- or continuous-time chain: row oracle plus initial law.

    ``description`` is the JSON-able record the model was built from, when
    it came from :func:`build_model`; it allows models to be written back
    to disk.
    """

    kind: str
    row_fn: Callable[[State], Iterable]
    gamma: SparseDistribution
    name: str = ""
    params: Mapping[str, Any] = field(default_factory=dict)
    description: Optional[dict] = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _lock: Any = field(default_factory=threading.Lock, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in (DISCRETE, CONTINUOUS):
            raise ModelError(f"unknown chain kind {self.kind!r}")
        if not isinstance(self.gamma, SparseDistribution):
            object.__setattr__(self, "gamma", SparseDistribution(self.gamma))
        if abs(self.gamma.mass - 1.0) > MASS_TOL:
            raise ModelError(f"initial distribution has mass {self.gamma.mass!r}, expected 1")
        dims = {len(s) for s in self.gamma}
        if len(dims) > 1:
            raise ModelError("initial distribution mixes state dimensions")

    @property
    def is_discrete(self) -> bool:
        return self.kind == DISCRETE

    @property
    def dim(self) -> int:
        return len(next(iter(self.gamma)))

    def row(self, x: StateLike) -> Row:
        """Validated row of ``x``: sorted ``(target, weight)`` pairs, zeros dropped."""
        key = as_state(x)
        row = self._cache.get(key)
        if row is None:
            row = _normalize_row(key, self.row_fn(key), self.kind)
            with self._lock:
                self._cache[key] = row
        return row

    def exit_rate(self, x: StateLike) -> float:
        """``q(x)``, the total off-diagonal rate (continuous models only)."""
        if self.kind != CONTINUOUS:
            raise ModelError("exit rates are defined for continuous models only")
        return math.fsum(w for _, w in self.row(x))

    def with_gamma(self, gamma) -> "ChainModel":
        if not isinstance(gamma, SparseDistribution):
            gamma = SparseDistribution(gamma)
        desc = None
        if self.description is not None:
            desc = dict(self.description)
            desc["gamma"] = [[list(s), p] for s, p in sorted(gamma.items())]
        return ChainModel(self.kind, self.row_fn, gamma, self.name, self.params, desc)


class JumpDecomposition:
    """Jump matrix ``P`` and jump rates ``lambda`` of a continuous model.

    For ``q(x) > 0``: ``P(x, y) = q(x, y) / q(x)`` and ``lambda(x) = q(x)``.
    Absorbing states get ``P(x, x) = 1`` and ``lambda(x) = 1``.
    """

    def __init__(self, model: ChainModel):
        if model.kind != CONTINUOUS:
            raise ModelError("jump decomposition needs a continuous model")
        self.model = model

    def rate(self, x: StateLike) -> float:
        q = self.model.exit_rate(x)
        return q if q > 0.0 else 1.0

    def row(self, x: StateLike) -> Row:
        key = as_state(x)
        qrow = self.model.row(key)
        q = math.fsum(w for _, w in qrow)
        if q == 0.0:
            return [(key, 1.0)]
        return [(y, w / q) for y, w in qrow]

    def as_discrete_model(self) -> ChainModel:
        """The jump chain as a discrete model with the same initial law."""
        return ChainModel(DISCRETE, self.row, self.model.gamma, name=f"jump chain of {self.model.name}")


def jump_decomposition(model: ChainModel) -> JumpDecomposition:
    return JumpDecomposition(model)


# ---------------------------------------------------------------------------
# model families


def _prob(value, name: str) -> float:
    if isinstance(value, str):
        value = Fraction(value)
    v = float(value)
    if not 0.0 < v < 1.0:
        raise ModelError(f"{name} must lie in (0, 1), got {value!r}")
    return v


def _nonneg(value, name: str) -> float:
    v = float(value)
    if not math.isfinite(v) or v < 0.0:
        raise ModelError(f"{name} must be a finite nonnegative number, got {value!r}")
    return v


def _gamma_from_json(entries, default: Optional[SparseDistribution]) -> SparseDistribution:
    if entries is None:
        if default is None:
            raise ModelError("model needs an initial distribution 'gamma'")
        return default
    if not isinstance(entries, list):
        raise ModelError("'gamma' must be a list of [state, probability] pairs")
    try:
        return SparseDistribution([(as_state(s), float(p)) for s, p in entries])
    except (TypeError, ValueError) as exc:
        raise ModelError(f"invalid 'gamma': {exc}") from None


def _poly_or_table(spec, name: str) -> Callable[[int], float]:
    """Rate function from ``{"poly": [c0, c1, ...]}`` or ``{"table": [...]}``.

    Tables give zero beyond their end.
    """
    if not isinstance(spec, dict) or len(spec) != 1 or not ({"poly", "table"} & set(spec)):
        raise ModelError(f"{name} must be {{'poly': [...]}} or {{'table': [...]}}")
    if "poly" in spec:
        coeffs = [float(c) for c in spec["poly"]]

        def f(x: int) -> float:
            return math.fsum(c * x**k for k, c in enumerate(coeffs))

        return f
    table = [_nonneg(v, name) for v in spec["table"]]
    return lambda x: table[x] if 0 <= x < len(table) else 0.0


def _family_rows(kind_name: str, params: dict):
    """Return (chain kind, row function, default gamma, normalized params)."""
    if kind_name == "gambler":
        _check_keys(params, {"a", "K"}, {"a", "K"})
        a = _prob(params["a"], "a")
        K = int(params["K"])
        if K < 2:
            raise ModelError(f"K must be at least 2, got {K}")

        def row(x: State):
            (s,) = x
            if s < 0 or s > K:
                raise ModelError(f"state {x} outside {{0, ..., {K}}}")
            if s == 0 or s == K:
                return [(x, 1.0)]
            return [((s - 1,), 1.0 - a), ((s + 1,), a)]

        return DISCRETE, row, SparseDistribution.point(K // 2), {"a": params["a"], "K": K}

    if kind_name == "birth-death":
        _check_keys(params, {"birth", "death", "max_state"}, {"birth", "death"})
        birth = _poly_or_table(params["birth"], "birth")
        death = _poly_or_table(params["death"], "death")
        cap = params.get("max_state")
        cap = None if cap is None else int(cap)

        def row(x: State):
            (s,) = x
            if s < 0 or (cap is not None and s > cap):
                raise ModelError(f"state {x} outside the birth-death state space")
            out = []
            if s > 0:
                out.append(((s - 1,), death(s)))
            if cap is None or s < cap:
                out.append(((s + 1,), birth(s)))
            return out

        return CONTINUOUS, row, SparseDistribution.point(0), dict(params)

    if kind_name == "pure-birth-geometric":
        _check_keys(params, {"base"}, {"base"})
        base = _nonneg(params["base"], "base")
        if base <= 0.0:
            raise ModelError("base must be positive")

        def row(x: State):
            (s,) = x
            if s < 0:
                raise ModelError(f"state {x} outside the pure-birth state space")
            try:
                rate = base**s
            except OverflowError:
                raise ModelError(f"rate base**{s} overflows double precision") from None
            return [((s + 1,), rate)]

        return CONTINUOUS, row, SparseDistribution.point(0), {"base": params["base"]}

    if kind_name == "miller":
        _check_keys(params, set(), set())

        def row(x: State):
            (s,) = x
            if s < 0:
                raise ModelError(f"state {x} outside the state space")
            try:
                up = 4.0**s
            except OverflowError:
                raise ModelError(f"rate 4**{s} overflows double precision") from None
            out = [((s + 1,), up)]
            if s > 0:
                out.insert(0, ((s - 1,), up / 2.0))
            return out

        return CONTINUOUS, row, SparseDistribution.point(0), {}

    if kind_name == "two-state":
        _check_keys(params, {"a", "b", "time"}, {"a", "b"})
        time = params.get("time", CONTINUOUS)
        if time not in (DISCRETE, CONTINUOUS):
            raise ModelError(f"time must be 'discrete' or 'continuous', got {time!r}")
        a = _nonneg(params["a"], "a")
        b = _nonneg(params["b"], "b")
        if time == DISCRETE and (a > 1.0 or b > 1.0):
            raise ModelError("discrete two-state chains need a, b in [0, 1]")

        def row(x: State):
            (s,) = x
            if s == 0:
                out = [((1,), a)]
                return out + [((0,), 1.0 - a)] if time == DISCRETE else out
            if s == 1:
                out = [((0,), b)]
                return out + [((1,), 1.0 - b)] if time == DISCRETE else out
            raise ModelError(f"state {x} outside {{0, 1}}")

        return time, row, SparseDistribution.point(0), dict(params)

    raise ModelError(f"unknown model family {kind_name!r}")


def _check_keys(d: Mapping, allowed: set, required: set, where: str = "params") -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ModelError(f"unknown field(s) in {where}: {sorted(unknown)}")
    missing = required - set(d)
    if missing:
        raise ModelError(f"missing field(s) in {where}: {sorted(missing)}")


def _explicit_rows(entries, kind: str) -> Dict[State, Row]:
    if not isinstance(entries, list):
        raise ModelError("'rows' must be a list of [state, [[target, weight], ...]] entries")
    table: Dict[State, Row] = {}
    for i, entry in enumerate(entries):
        try:
            src, targets = entry
            x = as_state(src)
            raw = [(as_state(y), float(w)) for y, w in targets]
        except (TypeError, ValueError) as exc:
            raise ModelError(f"rows[{i}]: {exc}") from None
        if x in table:
            raise ModelError(f"rows[{i}]: duplicate row for state {x}")
        table[x] = _normalize_row(x, raw, kind)
    return table


def build_model(desc: Mapping[str, Any]) -> ChainModel:
    """Build a :class:`ChainModel` from a JSON-style description.

    ``desc`` has ``kind`` (``explicit-dt``, ``explicit-ct``, ``gambler``,
    ``birth-death``, ``pure-birth-geometric``, ``miller``, ``two-state``),
    optional ``params``, optional ``name``, ``gamma`` as a list of
    ``[state, prob]`` pairs, and ``rows`` for the explicit kinds.
    Unknown fields are rejected.
    """
    if not isinstance(desc, Mapping):
        raise ModelError("model description must be a JSON object")
    kind_name = desc.get("kind")
    explicit = kind_name in ("explicit-dt", "explicit-ct")
    allowed = {"kind", "params", "gamma", "name"} | ({"rows"} if explicit else set())
    _check_keys(desc, allowed, {"kind"} | ({"rows"} if explicit else set()), where="model")
    params = desc.get("params") or {}
    if not isinstance(params, dict):
        raise ModelError("'params' must be an object")
    name = str(desc.get("name", kind_name))

    if explicit:
        _check_keys(params, set(), set())
        kind = DISCRETE if kind_name == "explicit-dt" else CONTINUOUS
        table = _explicit_rows(desc["rows"], kind)

        def row_fn(x: State):
            try:
                return table[x]
            except KeyError:
                raise ModelError(f"state {x} has no row in the explicit model") from None

        gamma = _gamma_from_json(desc.get("gamma"), None)
        norm_params: dict = {}
    else:
        kind, row_fn, default_gamma, norm_params = _family_rows(kind_name, params)
        gamma = _gamma_from_json(desc.get("gamma"), default_gamma)

    record = {"kind": kind_name, "params": norm_params if not explicit else {}}
    if "name" in desc:
        record["name"] = name
    record["gamma"] = [[list(s), p] for s, p in sorted(gamma.items())]
    if explicit:
        record["rows"] = [[list(x), [[list(y), w] for y, w in r]] for x, r in sorted(table.items())]
    model = ChainModel(kind, row_fn, gamma, name=name, params=norm_params, description=record)
    if explicit:
        for x in gamma:
            model.row(x)
    return model


def explicit_model(kind: str, rows: Mapping[StateLike, Sequence], gamma, name: str = "explicit") -> ChainModel:
    """Convenience constructor for explicit tables from Python data."""
    kind_name = {DISCRETE: "explicit-dt", CONTINUOUS: "explicit-ct"}[kind]
    if not isinstance(gamma, SparseDistribution):
        gamma = SparseDistribution(gamma)
    desc = {
        "kind": kind_name,
        "name": name,
        "gamma": [[list(s), p] for s, p in gamma.items()],
        "rows": [[list(as_state(x)), [[list(as_state(y)), w] for y, w in r]] for x, r in rows.items()],
    }
    return build_model(desc)


def from_matrix(matrix, kind: str = DISCRETE, gamma=None, name: str = "matrix") -> ChainModel:
    """Explicit model over states ``0..n-1`` from a dense matrix.

    For continuous models the diagonal of ``matrix`` is ignored.
    """
    n = len(matrix)
    rows = {}
    for i in range(n):
        rows[i] = [(j, float(matrix[i][j])) for j in range(n) if matrix[i][j] != 0 and (kind == DISCRETE or i != j)]
    if gamma is None:
        gamma = {(0,): 1.0}
    return explicit_model(kind, rows, gamma, name=name)


def load_model(path) -> ChainModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            desc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return build_model(desc)


def dump_model(model: ChainModel) -> str:
    if model.description is None:
        raise ModelError("model was not built from a description and cannot be serialized")
    return json.dumps(model.description, indent=2, sort_keys=True)
