"""The two study problem families: vehicle-to-demand assignment and sensor coverage.

Assignment family: ``R`` vehicles serve ``N`` demand points scattered in a
10-unit square.  The utility of an assignment is the sum over demands of the
best arrival efficiency among its vehicles; efficiencies are uniform draws
from per-pair intervals centered on ``10 / distance``, with wider intervals
for more efficient (closer) pairs.  Each vehicle serves at most one demand,
a partition constraint.

Coverage family: ``M`` of ``N`` candidate sites on an occupancy grid get a
sensor.  A sensor sees every free cell reachable by an unobstructed discrete
line from its own cell, survives with probability ``1 - v_i / v_free``
(large footprints fail more), and the utility of a scenario is the number of
free cells covered by the union of surviving footprints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import GroundSet, Members, PartitionMatroid, UniformMatroid
from .errors import (
    GenerationError,
    GuardError,
    InstanceFormatError,
    MatroidViolationError,
    ParameterError,
)
from .risk import SampledScenarioTable, substream

MOD_SCHEMA = "mod-instance-v1"
COVERAGE_SCHEMA = "coverage-instance-v1"

SQUARE_SIDE = 10.0
MIN_PAIR_DISTANCE = 0.5
_MAX_GENERATION_ATTEMPTS = 1000

# Acceptance-study obstacle layout for a 20x20 grid: three rectangles
# (x, y, width, height) in cell coordinates.
DEFAULT_OBSTACLES_20X20 = ((3, 3, 4, 4), (12, 5, 3, 8), (6, 14, 9, 3))


# ---------------------------------------------------------------------------
# assignment family


@dataclass(frozen=True, eq=False)
class ModInstance:
    """Vehicle-to-demand assignment instance.

    Pair ``(demand i, vehicle j)`` is element ``i * n_vehicles + j`` of the
    ground set.  ``mean_eff[i, j]`` is the mean arrival efficiency and
    ``eff_halfwidth[i, j]`` the half-width of its uniform interval; the
    generator guarantees ``halfwidth <= mean`` so sampled efficiencies stay
    non-negative.
    """

    n_demands: int
    n_vehicles: int
    demand_xy: np.ndarray
    vehicle_xy: np.ndarray
    mean_eff: np.ndarray
    eff_halfwidth: np.ndarray
    seed: int

    @property
    def n_pairs(self) -> int:
        return self.n_demands * self.n_vehicles

    def pair_id(self, demand: int, vehicle: int) -> int:
        return demand * self.n_vehicles + vehicle

    def demand_of(self, pair: int) -> int:
        return pair // self.n_vehicles

    def vehicle_of(self, pair: int) -> int:
        return pair % self.n_vehicles

    def pair_label(self, pair: int) -> str:
        return f"d{self.demand_of(pair)}:v{self.vehicle_of(pair)}"

    def ground_set(self) -> GroundSet:
        labels = tuple(self.pair_label(p) for p in range(self.n_pairs))
        return GroundSet(self.n_pairs, labels)

    def matroid(self) -> PartitionMatroid:
        # One block per vehicle, cap 1: a vehicle serves at most one demand.
        block_of = tuple(self.vehicle_of(p) for p in range(self.n_pairs))
        return PartitionMatroid(block_of, (1,) * self.n_vehicles)

    def interval(self, pair: int) -> tuple[float, float]:
        i, j = self.demand_of(pair), self.vehicle_of(pair)
        mean = float(self.mean_eff[i, j])
        half = float(self.eff_halfwidth[i, j])
        return mean - half, mean + half


def _efficiency_matrices(demand_xy: np.ndarray, vehicle_xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diff = demand_xy[:, None, :] - vehicle_xy[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    mean = SQUARE_SIDE / dist
    # Half-width grows as mean^2.5, normalized so the most efficient pair
    # gets half-width equal to its mean; every interval stays within [0, 2m].
    half = mean**2.5 / mean.max() ** 1.5
    return mean, half


def mod_generate(n_demands: int, n_vehicles: int, seed: int) -> ModInstance:
    """Sample an assignment instance with positions uniform in the square.

    Positions are resampled (up to 1000 attempts) while any demand-vehicle
    pair is closer than ``MIN_PAIR_DISTANCE``; near-collisions would blow up
    the efficiency scale and with it the threshold grid.
    """
    if n_demands < 1:
        raise ParameterError(f"need at least one demand, got {n_demands}")
    if n_vehicles < n_demands:
        raise ParameterError(
            f"need n_vehicles >= n_demands, got {n_vehicles} < {n_demands}"
        )
    rng = substream(seed, "mod-positions")
    for _ in range(_MAX_GENERATION_ATTEMPTS):
        demand_xy = rng.uniform(0.0, SQUARE_SIDE, size=(n_demands, 2))
        vehicle_xy = rng.uniform(0.0, SQUARE_SIDE, size=(n_vehicles, 2))
        diff = demand_xy[:, None, :] - vehicle_xy[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        if dist.min() < MIN_PAIR_DISTANCE:
            continue
        mean, half = _efficiency_matrices(demand_xy, vehicle_xy)
        if (mean - half).min() < 0.0:
            continue
        return ModInstance(
            n_demands=n_demands,
            n_vehicles=n_vehicles,
            demand_xy=demand_xy,
            vehicle_xy=vehicle_xy,
            mean_eff=mean,
            eff_halfwidth=half,
            seed=seed,
        )
    raise GenerationError(
        f"no valid placement after {_MAX_GENERATION_ATTEMPTS} attempts"
    )


def mod_gamma(inst: ModInstance) -> float:
    """Threshold cap: n_demands times the largest interval upper endpoint.

    Analytic, not sample-dependent; dominates every realizable utility.
    """
    return inst.n_demands * float((inst.mean_eff + inst.eff_halfwidth).max())


def _pair_uniforms(inst: ModInstance, seed: int, pair: int, count: int) -> np.ndarray:
    return substream(seed, "elem", pair).random(count)


class GroupMaxTable(SampledScenarioTable):
    """Scenario panel for sum-over-groups-of-max utilities.

    ``matrix[k, p]`` is element ``p``'s value in scenario ``k`` and
    ``group_of[p]`` the group whose maximum it competes for.  Groups with no
    selected element contribute zero.  Defined on every subset of elements;
    constraint checks live in the solver and the utility wrappers.
    """

    def __init__(
        self,
        matrix: np.ndarray,
        group_of: Sequence[int],
        n_groups: int,
        seed: Optional[int],
    ):
        super().__init__(matrix.shape[0], seed)
        if matrix.min() < 0:
            raise ParameterError("element values must be non-negative")
        self.matrix = matrix
        self.group_of = np.asarray(group_of, dtype=int)
        self.n_groups = int(n_groups)

    def values(self, members: Members) -> np.ndarray:
        out = np.zeros(self.n_scenarios)
        for g in range(self.n_groups):
            cols = [p for p in members if self.group_of[p] == g]
            if cols:
                out += self.matrix[:, cols].max(axis=1)
        return out

    def group_maxima(self, members: Members) -> np.ndarray:
        """Per-group running maxima, shape (n_groups, n_scenarios)."""
        maxima = np.zeros((self.n_groups, self.n_scenarios))
        for p in members:
            g = int(self.group_of[p])
            np.maximum(maxima[g], self.matrix[:, p], out=maxima[g])
        return maxima

    def outcomes_with_each(self, members: Members, candidates: Sequence[int]):
        maxima = self.group_maxima(members)
        total = maxima.sum(axis=0)
        cand = np.asarray(candidates, dtype=int)
        gains = np.maximum(self.matrix[:, cand].T - maxima[self.group_of[cand]], 0.0)
        return total[None, :] + gains, self._weights


def mod_scenario_table(
    inst: ModInstance, n_scenarios: int, seed: Optional[int] = None
) -> GroupMaxTable:
    """Draw the fixed scenario panel for an assignment instance.

    Scenario ``k`` of pair ``p`` is the k-th uniform of the stream keyed
    ``(seed, "elem", p)`` mapped onto the pair's interval, so every (set,
    threshold) evaluation shares common random numbers and adding pairs
    never perturbs existing samples.  ``seed`` defaults to the instance
    seed.
    """
    table_seed = inst.seed if seed is None else seed
    lo = (inst.mean_eff - inst.eff_halfwidth).reshape(-1)
    hi = (inst.mean_eff + inst.eff_halfwidth).reshape(-1)
    matrix = np.empty((n_scenarios, inst.n_pairs))
    for p in range(inst.n_pairs):
        u = _pair_uniforms(inst, table_seed, p, n_scenarios)
        matrix[:, p] = lo[p] + u * (hi[p] - lo[p])
    group_of = [inst.demand_of(p) for p in range(inst.n_pairs)]
    return GroupMaxTable(matrix, group_of, inst.n_demands, table_seed)


def mod_utility(
    inst: ModInstance, members: Members, scenario: int, seed: Optional[int] = None
) -> float:
    """Utility of one assignment in one scenario.

    Matches ``mod_scenario_table(inst, n, seed).values(members)[scenario]``
    for any ``n > scenario``.
    """
    if scenario < 0:
        raise ParameterError(f"scenario index must be >= 0, got {scenario}")
    table_seed = inst.seed if seed is None else seed
    if not inst.matroid().contains(members):
        raise MatroidViolationError(f"set {members} violates the assignment constraint")
    best = [0.0] * inst.n_demands
    for p in members:
        lo, hi = inst.interval(p)
        u = float(_pair_uniforms(inst, table_seed, p, scenario + 1)[-1])
        value = lo + u * (hi - lo)
        g = inst.demand_of(p)
        best[g] = max(best[g], value)
    return float(sum(best))


# ---------------------------------------------------------------------------
# coverage family


@dataclass(frozen=True, eq=False)
class CoverageInstance:
    """Sensor-coverage instance on a rectangular occupancy grid.

    Cells are indexed ``y * width + x``.  ``footprints[i]`` lists the free
    cells visible from candidate ``i`` (always including its own cell) and
    ``success_prob[i] = 1 - len(footprints[i]) / free_count``.
    """

    width: int
    height: int
    obstacles: tuple[tuple[int, int, int, int], ...]
    candidates: tuple[tuple[int, int], ...]
    footprints: tuple[tuple[int, ...], ...]
    success_prob: tuple[float, ...]
    budget: int
    seed: int

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)

    def obstacle_mask(self) -> np.ndarray:
        mask = np.zeros((self.height, self.width), dtype=bool)
        for x, y, w, h in self.obstacles:
            mask[y : y + h, x : x + w] = True
        return mask

    @property
    def free_count(self) -> int:
        return self.width * self.height - int(self.obstacle_mask().sum())

    def ground_set(self) -> GroundSet:
        return GroundSet(self.n_candidates, tuple(f"s{i}" for i in range(self.n_candidates)))

    def matroid(self) -> UniformMatroid:
        return UniformMatroid(self.n_candidates, self.budget)

    def footprint_masks(self) -> np.ndarray:
        masks = np.zeros((self.n_candidates, self.width * self.height), dtype=bool)
        for i, cells in enumerate(self.footprints):
            masks[i, list(cells)] = True
        return masks


def bresenham_cells(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    """Cells of the discrete line segment between two cell centers (inclusive)."""
    cells = []
    dx = abs(x1 - x0)
    dy = abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx - dy
    x, y = x0, y0
    while True:
        cells.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy
    return cells


def _visible_cells(mask: np.ndarray, cx: int, cy: int) -> list[int]:
    height, width = mask.shape
    out = []
    for y in range(height):
        for x in range(width):
            if mask[y, x]:
                continue
            if any(mask[yy, xx] for xx, yy in bresenham_cells(cx, cy, x, y)):
                continue
            out.append(y * width + x)
    return out


def coverage_generate(
    width: int,
    height: int,
    obstacles: Sequence[Sequence[int]],
    n_candidates: int,
    seed: int,
    *,
    budget: int,
) -> CoverageInstance:
    """Sample candidate sites uniformly from the free cells and ray-cast footprints."""
    if width < 1 or height < 1:
        raise ParameterError(f"grid must be non-empty, got {width}x{height}")
    if not 1 <= budget <= n_candidates:
        raise ParameterError(f"need 1 <= budget <= n_candidates, got {budget}, {n_candidates}")
    rects = tuple(tuple(int(v) for v in r) for r in obstacles)
    for x, y, w, h in rects:
        if w < 1 or h < 1 or x < 0 or y < 0 or x + w > width or y + h > height:
            raise ParameterError(f"obstacle {(x, y, w, h)} outside the {width}x{height} grid")
    mask = np.zeros((height, width), dtype=bool)
    for x, y, w, h in rects:
        mask[y : y + h, x : x + w] = True
    free = [(x, y) for y in range(height) for x in range(width) if not mask[y, x]]
    if len(free) < n_candidates:
        raise GenerationError(
            f"{len(free)} free cells cannot host {n_candidates} candidates"
        )
    rng = substream(seed, "coverage-sites")
    picks = rng.choice(len(free), size=n_candidates, replace=False)
    candidates = tuple(free[i] for i in picks)
    v_free = len(free)
    footprints = []
    probs = []
    for cx, cy in candidates:
        cells = _visible_cells(mask, cx, cy)
        footprints.append(tuple(cells))
        probs.append(1.0 - len(cells) / v_free)
    return CoverageInstance(
        width=width,
        height=height,
        obstacles=rects,
        candidates=candidates,
        footprints=tuple(footprints),
        success_prob=tuple(probs),
        budget=budget,
        seed=seed,
    )


class CoverageSampledTable(SampledScenarioTable):
    """Scenario panel of independent per-sensor survival draws."""

    def __init__(self, inst: CoverageInstance, n_scenarios: int, seed: Optional[int]):
        super().__init__(n_scenarios, seed)
        self.inst = inst
        probs = np.asarray(inst.success_prob)
        alive = np.empty((n_scenarios, inst.n_candidates), dtype=bool)
        for i in range(inst.n_candidates):
            u = substream(self.seed, "elem", i).random(n_scenarios)
            alive[:, i] = u < probs[i]
        self.alive = alive
        self._masks = inst.footprint_masks()
        self._masks_f32 = self._masks.astype(np.float32)
        self._alive_f32 = alive.astype(np.float32)

    def values(self, members: Members) -> np.ndarray:
        if not members:
            return np.zeros(self.n_scenarios)
        cols = list(members)
        hit = self._alive_f32[:, cols] @ self._masks_f32[cols]
        return (hit > 0).sum(axis=1).astype(float)

    def outcomes_with_each(self, members: Members, candidates: Sequence[int]):
        cols = list(members)
        if cols:
            covered = (self._alive_f32[:, cols] @ self._masks_f32[cols]) > 0
        else:
            covered = np.zeros((self.n_scenarios, self._masks.shape[1]), dtype=bool)
        rows = np.empty((len(candidates), self.n_scenarios))
        for idx, c in enumerate(candidates):
            extra = self.alive[:, c : c + 1] & self._masks[c][None, :]
            rows[idx] = (covered | extra).sum(axis=1)
        return rows, self._weights


def coverage_scenario_table(
    inst: CoverageInstance, n_scenarios: int, seed: Optional[int] = None
) -> CoverageSampledTable:
    """Survival panel with one Bernoulli stream per sensor; seed defaults to the instance's."""
    return CoverageSampledTable(inst, n_scenarios, inst.seed if seed is None else seed)


def coverage_utility(
    inst: CoverageInstance, members: Members, scenario: int, seed: Optional[int] = None
) -> float:
    """Covered-cell count of one selection in one scenario."""
    if scenario < 0:
        raise ParameterError(f"scenario index must be >= 0, got {scenario}")
    if len(members) > inst.budget:
        raise MatroidViolationError(
            f"{len(members)} sensors exceed the budget of {inst.budget}"
        )
    table_seed = inst.seed if seed is None else seed
    covered: set[int] = set()
    for i in members:
        u = float(substream(table_seed, "elem", i).random(scenario + 1)[-1])
        if u < inst.success_prob[i]:
            covered.update(inst.footprints[i])
    return float(len(covered))


def coverage_exact_scenarios(
    inst: CoverageInstance, members: Members
) -> list[tuple[float, float]]:
    """Exact utility distribution of a selection: (probability, value) pairs.

    Enumerates the ``2^|S|`` survive/fail outcomes; probabilities sum to one.
    Guarded at 20 sensors.
    """
    if len(members) > 20:
        raise GuardError(f"cannot enumerate outcomes of {len(members)} sensors")
    out = []
    k = len(members)
    for bits in range(2**k):
        prob = 1.0
        covered: set[int] = set()
        for b in range(k):
            i = members[b]
            if bits >> b & 1:
                prob *= inst.success_prob[i]
                covered.update(inst.footprints[i])
            else:
                prob *= 1.0 - inst.success_prob[i]
        out.append((prob, float(len(covered))))
    return out


class CoverageExactTable:
    """Exact-expectation outcome model; no sampling error (epsilon = 0)."""

    def __init__(self, inst: CoverageInstance):
        self.inst = inst
        self.seed = None
        # Envelope size for evaluation accounting: outcomes per evaluation
        # never exceed 2^budget.
        self.n_scenarios = 2**inst.budget

    def outcomes(self, members: Members) -> tuple[np.ndarray, np.ndarray]:
        pairs = coverage_exact_scenarios(self.inst, members)
        probs = np.array([p for p, _ in pairs])
        values = np.array([v for _, v in pairs])
        return values, probs

    def outcomes_with_each(self, members: Members, candidates: Sequence[int]):
        rows = []
        weights = []
        for c in candidates:
            v, w = self.outcomes(members + (c,))
            rows.append(v)
            weights.append(w)
        return np.stack(rows), np.stack(weights)


def coverage_exact_table(inst: CoverageInstance) -> CoverageExactTable:
    return CoverageExactTable(inst)


# ---------------------------------------------------------------------------
# instance files


def save_instance(inst, path) -> None:
    """Write an instance as versioned JSON; floats round-trip exactly."""
    if isinstance(inst, ModInstance):
        doc = {
            "schema": MOD_SCHEMA,
            "n_demands": inst.n_demands,
            "n_vehicles": inst.n_vehicles,
            "seed": inst.seed,
            "demand_xy": inst.demand_xy.tolist(),
            "vehicle_xy": inst.vehicle_xy.tolist(),
            "mean_eff": inst.mean_eff.tolist(),
            "eff_halfwidth": inst.eff_halfwidth.tolist(),
        }
    elif isinstance(inst, CoverageInstance):
        doc = {
            "schema": COVERAGE_SCHEMA,
            "width": inst.width,
            "height": inst.height,
            "obstacles": [list(r) for r in inst.obstacles],
            "budget": inst.budget,
            "seed": inst.seed,
            "candidates": [list(c) for c in inst.candidates],
            "footprints": [list(f) for f in inst.footprints],
            "success_prob": list(inst.success_prob),
        }
    else:
        raise ParameterError(f"cannot serialize {type(inst).__name__}")
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_instance(path):
    """Read a ``mod-instance-v1`` or ``coverage-instance-v1`` file."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InstanceFormatError(f"cannot read instance file {path}: {exc}") from exc
    schema = doc.get("schema")
    try:
        if schema == MOD_SCHEMA:
            inst = ModInstance(
                n_demands=int(doc["n_demands"]),
                n_vehicles=int(doc["n_vehicles"]),
                demand_xy=np.asarray(doc["demand_xy"], dtype=float),
                vehicle_xy=np.asarray(doc["vehicle_xy"], dtype=float),
                mean_eff=np.asarray(doc["mean_eff"], dtype=float),
                eff_halfwidth=np.asarray(doc["eff_halfwidth"], dtype=float),
                seed=int(doc["seed"]),
            )
            if inst.mean_eff.shape != (inst.n_demands, inst.n_vehicles):
                raise InstanceFormatError(
                    f"mean_eff shape {inst.mean_eff.shape} does not match sizes"
                )
            if (inst.mean_eff - inst.eff_halfwidth).min() < 0:
                raise InstanceFormatError("some efficiency interval dips below zero")
            return inst
        if schema == COVERAGE_SCHEMA:
            inst = CoverageInstance(
                width=int(doc["width"]),
                height=int(doc["height"]),
                obstacles=tuple(tuple(int(v) for v in r) for r in doc["obstacles"]),
                candidates=tuple(tuple(int(v) for v in c) for c in doc["candidates"]),
                footprints=tuple(tuple(int(v) for v in f) for f in doc["footprints"]),
                success_prob=tuple(float(p) for p in doc["success_prob"]),
                budget=int(doc["budget"]),
                seed=int(doc["seed"]),
            )
            mask = inst.obstacle_mask().reshape(-1)
            for cells in inst.footprints:
                for cell in cells:
                    if not 0 <= cell < mask.size or mask[cell]:
                        raise InstanceFormatError(f"footprint cell {cell} is not free")
            return inst
    except KeyError as exc:
        raise InstanceFormatError(f"missing field {exc} in {path}") from exc
    raise InstanceFormatError(f"unknown instance schema {schema!r} in {path}")
