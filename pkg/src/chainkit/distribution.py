"""Finitely supported nonnegative measures over integer-tuple states."""

from __future__ import annotations

import math
from typing import Iterable, Iterator, Mapping, Tuple, Union

State = Tuple[int, ...]
StateLike = Union[int, Iterable[int]]

MASS_TOL = 1e-12


def as_state(x: StateLike) -> State:
    """Normalize an int or an integer sequence to a state tuple."""
    if isinstance(x, tuple) and all(type(c) is int for c in x):
        if not x:
            raise ValueError("state keys need at least one coordinate")
        return x
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return (int(x),)
    try:
        coords = tuple(x)  # type: ignore[arg-type]
    except TypeError:
        raise TypeError(f"cannot interpret {x!r} as a state") from None
    out = []
    for c in coords:
        if isinstance(c, bool) or int(c) != c:
            raise TypeError(f"state coordinates must be integers, got {x!r}")
        out.append(int(c))
    if not out:
        raise ValueError("state keys need at least one coordinate")
    return tuple(out)


class SparseDistribution(Mapping[State, float]):
    """Immutable map state -> mass with zero entries pruned.

    Masses must be nonnegative; the total may fall short of one (the
    truncation solvers return sub-probability lower bounds) but may not
    exceed ``1 + MASS_TOL``.
    """

    __slots__ = ("_data", "_mass")

    def __init__(self, items: Union[Mapping, Iterable] = (), *, check_mass: bool = True):
        pairs = items.items() if isinstance(items, Mapping) else items
        data: dict = {}
        for k, v in pairs:
            v = float(v)
            if not math.isfinite(v) or v < 0.0:
                raise ValueError(f"invalid mass {v!r} at state {k!r}")
            if v == 0.0:
                continue
            key = as_state(k)
            data[key] = data.get(key, 0.0) + v
        self._data = data
        self._mass = math.fsum(data.values())
        if check_mass and self._mass > 1.0 + MASS_TOL:
            raise ValueError(f"total mass {self._mass!r} exceeds one")

    @classmethod
    def point(cls, x: StateLike) -> "SparseDistribution":
        return cls({as_state(x): 1.0})

    @classmethod
    def from_arrays(cls, states, values, *, check_mass: bool = True) -> "SparseDistribution":
        return cls(zip(states, (float(v) for v in values)), check_mass=check_mass)

    def __getitem__(self, key) -> float:
        return self._data[as_state(key)]

    def get(self, key, default=0.0):  # type: ignore[override]
        return self._data.get(as_state(key), default)

    def __iter__(self) -> Iterator[State]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key) -> bool:
        try:
            return as_state(key) in self._data
        except (TypeError, ValueError):
            return False

    @property
    def mass(self) -> float:
        return self._mass

    def support(self) -> list:
        return sorted(self._data)

    def restrict(self, states) -> "SparseDistribution":
        keep = set(states)
        return SparseDistribution({k: v for k, v in self._data.items() if k in keep})

    def normalized(self) -> "SparseDistribution":
        if self._mass == 0.0:
            raise ValueError("cannot normalize an empty measure")
        return SparseDistribution({k: v / self._mass for k, v in self._data.items()})

    def l1_distance(self, other: Mapping) -> float:
        keys = set(self._data) | set(other)
        return math.fsum(abs(self._data.get(k, 0.0) - other.get(k, 0.0)) for k in keys)

    def __repr__(self) -> str:
        body = ", ".join(f"{k}: {v:.6g}" for k, v in sorted(self._data.items())[:8])
        more = ", ..." if len(self._data) > 8 else ""
        return f"SparseDistribution({{{body}{more}}}, mass={self._mass:.12g})"

    def __eq__(self, other) -> bool:
        if isinstance(other, SparseDistribution):
            return self._data == other._data
        return NotImplemented

    __hash__ = None  # type: ignore[assignment]


def total_variation(approx: Mapping, exact: Mapping) -> float:
    """Total-variation distance ``sup_A |exact(A) - approx(A)|`` between measures.

    Works for sub-probability measures: the supremum is the larger of the
    positive and negative parts of ``exact - approx``.
    """
    keys = set(approx) | set(exact)
    pos = math.fsum(max(exact.get(k, 0.0) - approx.get(k, 0.0), 0.0) for k in keys)
    neg = math.fsum(max(approx.get(k, 0.0) - exact.get(k, 0.0), 0.0) for k in keys)
    return max(pos, neg)
