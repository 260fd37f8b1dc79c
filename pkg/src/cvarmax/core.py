"""Ground sets, matroid constraints, greedy maximization and small-instance oracles.

Elements of a ground set are plain integers ``0 .. size-1``; an element set is
an ordered tuple of distinct indices (insertion order is the greedy pick
order).  Set functions are ordinary callables ``members -> float``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

from .errors import GuardError, InvalidElementError, ParameterError, ZeroSingletonError

Members = tuple[int, ...]
SetFunction = Callable[[Members], float]


@dataclass(frozen=True)
class GroundSet:
    """Finite universe of selectable items.

    ``labels``, when given, must name every element and is only used for
    reporting.
    """

    size: int
    labels: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ParameterError(f"ground set must be non-empty, got size={self.size}")
        if self.labels is not None and len(self.labels) != self.size:
            raise ParameterError(
                f"expected {self.size} labels, got {len(self.labels)}"
            )

    def elements(self) -> range:
        return range(self.size)

    def label(self, element: int) -> str:
        if self.labels is not None:
            return self.labels[element]
        return str(element)


class Matroid:
    """Downward-closed independence system over ``range(size)``."""

    size: int

    def contains(self, members: Iterable[int]) -> bool:
        raise NotImplementedError

    def can_extend(self, members: Members, element: int) -> bool:
        """True iff ``members + (element,)`` stays independent (members assumed independent)."""
        raise NotImplementedError

    def rank(self) -> int:
        """Cardinality of the largest independent set."""
        raise NotImplementedError

    def _check_elements(self, members: Iterable[int]) -> Members:
        out = tuple(members)
        for s in out:
            if not 0 <= s < self.size:
                raise InvalidElementError(f"element {s} outside ground set of size {self.size}")
        if len(set(out)) != len(out):
            raise ParameterError(f"duplicate elements in {out}")
        return out


class UniformMatroid(Matroid):
    """Independent sets are those of cardinality at most ``max_size``."""

    def __init__(self, size: int, max_size: int):
        if not 1 <= max_size <= size:
            raise ParameterError(f"need 1 <= max_size <= size, got {max_size}, {size}")
        self.size = size
        self.max_size = max_size

    def contains(self, members: Iterable[int]) -> bool:
        return len(self._check_elements(members)) <= self.max_size

    def can_extend(self, members: Members, element: int) -> bool:
        if not 0 <= element < self.size:
            raise InvalidElementError(f"element {element} outside ground set of size {self.size}")
        return len(members) < self.max_size

    def rank(self) -> int:
        return self.max_size


class PartitionMatroid(Matroid):
    """Per-block cardinality caps.

    ``block_of[s]`` gives the block index of element ``s``; ``caps[b]`` the
    cap of block ``b``.  Blocks partition the ground set by construction.
    """

    def __init__(self, block_of: Sequence[int], caps: Sequence[int]):
        self.block_of = tuple(int(b) for b in block_of)
        self.caps = tuple(int(c) for c in caps)
        self.size = len(self.block_of)
        if self.size == 0:
            raise ParameterError("empty ground set")
        n_blocks = len(self.caps)
        for s, b in enumerate(self.block_of):
            if not 0 <= b < n_blocks:
                raise ParameterError(f"element {s} assigned to unknown block {b}")
        if any(c < 1 for c in self.caps):
            raise ParameterError(f"all caps must be >= 1, got {self.caps}")

    def contains(self, members: Iterable[int]) -> bool:
        counts = [0] * len(self.caps)
        for s in self._check_elements(members):
            b = self.block_of[s]
            counts[b] += 1
            if counts[b] > self.caps[b]:
                return False
        return True

    def can_extend(self, members: Members, element: int) -> bool:
        if not 0 <= element < self.size:
            raise InvalidElementError(f"element {element} outside ground set of size {self.size}")
        b = self.block_of[element]
        used = sum(1 for s in members if self.block_of[s] == b)
        return used < self.caps[b]

    def rank(self) -> int:
        # A block can contribute at most min(cap, block population) elements.
        pop = [0] * len(self.caps)
        for b in self.block_of:
            pop[b] += 1
        return sum(min(c, p) for c, p in zip(self.caps, pop))


def matroid_contains(matroid: Matroid, members: Iterable[int]) -> bool:
    """True iff ``members`` is independent in ``matroid``."""
    return matroid.contains(members)


def greedy_maximize(
    evaluate: SetFunction,
    matroid: Matroid,
    ground: GroundSet,
    *,
    evaluate_many: Optional[Callable[[Members, Sequence[int]], Sequence[float]]] = None,
) -> tuple[Members, float]:
    """Build a maximal independent set by repeated best-marginal-gain picks.

    ``evaluate`` must be defined on every independent set and is assumed
    monotone (not checked).  Ties break toward the smallest element index and
    marginal gains are clamped at zero before comparison, so floating-point
    noise on an exactly submodular objective cannot flip a pick.  Returns the
    selected set in pick order together with its objective value.

    ``evaluate_many(members, candidates)`` may be supplied to score all
    one-element extensions of ``members`` in a single call; it must agree
    with ``evaluate`` on every candidate.
    """
    if matroid.size != ground.size:
        raise ParameterError(
            f"matroid universe {matroid.size} != ground set size {ground.size}"
        )
    selected: list[int] = []
    current = evaluate(())
    remaining = list(ground.elements())
    while True:
        candidates = [s for s in remaining if matroid.can_extend(tuple(selected), s)]
        if not candidates:
            break
        if evaluate_many is not None:
            values = list(evaluate_many(tuple(selected), candidates))
        else:
            values = [evaluate(tuple(selected) + (s,)) for s in candidates]
        best_idx = 0
        best_gain = -1.0
        for idx, value in enumerate(values):
            gain = max(value - current, 0.0)
            if gain > best_gain:
                best_gain = gain
                best_idx = idx
        chosen = candidates[best_idx]
        selected.append(chosen)
        remaining.remove(chosen)
        current = values[best_idx]
    return tuple(selected), current


@dataclass(frozen=True)
class Curvature:
    """How far a set function is from modular, in [0, 1].

    ``value`` is ``1 - min_s (f(X) - f(X \\ {s})) / f({s})`` with the marginal
    taken at the full ground set; for a submodular function that is the
    smallest marginal per element, so the result upper-bounds the curvature
    restricted to any independence system.  ``marginals`` and ``singletons``
    record the per-element quantities that entered the minimum.
    """

    value: float
    marginals: tuple[float, ...]
    singletons: tuple[float, ...]


def curvature_estimate(
    evaluate: SetFunction,
    ground: GroundSet,
    *,
    tolerance: float = 1e-12,
) -> Curvature:
    """Total curvature of ``evaluate`` with marginals evaluated at the full set.

    Raises :class:`ZeroSingletonError` when some singleton value is at or
    below ``tolerance``; the ratio would be meaningless there.
    """
    full = tuple(ground.elements())
    f_full = evaluate(full)
    marginals = []
    singletons = []
    worst = 1.0
    for s in ground.elements():
        without = tuple(e for e in full if e != s)
        marginal = f_full - evaluate(without)
        singleton = evaluate((s,))
        if singleton <= tolerance:
            raise ZeroSingletonError(
                f"singleton value {singleton!r} of element {s} is <= {tolerance}"
            )
        marginals.append(marginal)
        singletons.append(singleton)
        worst = min(worst, marginal / singleton)
    value = min(max(1.0 - worst, 0.0), 1.0)
    return Curvature(value=value, marginals=tuple(marginals), singletons=tuple(singletons))


def independent_sets(matroid: Matroid, ground: GroundSet, *, limit: int) -> list[Members]:
    """All independent sets in lexicographic order, guarded by ``limit``."""
    out: list[Members] = []

    def extend(prefix: tuple[int, ...], start: int) -> None:
        if len(out) > limit:
            raise GuardError(f"more than {limit} independent sets")
        out.append(prefix)
        for s in range(start, ground.size):
            if matroid.can_extend(prefix, s):
                extend(prefix + (s,), s + 1)

    extend((), 0)
    return out


def brute_force_max_h(
    h_eval: Callable[[Members, float], float],
    matroid: Matroid,
    ground: GroundSet,
    tau_grid: Sequence[float],
    *,
    max_evaluations: int = 10_000_000,
) -> tuple[Members, float, float]:
    """Exact maximizer of ``h_eval`` over independent sets x threshold grid.

    Test oracle for small instances.  Sets are enumerated in lexicographic
    order and thresholds in the given order; the first maximum wins, so ties
    resolve to the lexicographically smallest set, then the earliest
    threshold.  Raises :class:`GuardError` when the enumeration would exceed
    ``max_evaluations`` evaluations.
    """
    if ground.size > 20:
        raise GuardError(f"ground set of size {ground.size} too large for enumeration")
    if not tau_grid:
        raise ParameterError("tau_grid must be non-empty")
    sets = independent_sets(matroid, ground, limit=max_evaluations)
    if len(sets) * len(tau_grid) > max_evaluations:
        raise GuardError(
            f"{len(sets)} sets x {len(tau_grid)} thresholds exceeds {max_evaluations} evaluations"
        )
    best: Optional[tuple[Members, float, float]] = None
    for members in sets:
        for tau in tau_grid:
            value = h_eval(members, tau)
            if best is None or value > best[2]:
                best = (members, float(tau), value)
    assert best is not None
    return best
