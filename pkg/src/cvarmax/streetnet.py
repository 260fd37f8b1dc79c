"""Directed street networks with stochastic intersection waits and the online
triggering dispatch simulator.

Vehicles travel edges at fixed speed and wait a random time at every
intersection they enter; the wait at a node is truncated-normal with
variance proportional to the node degree and support ``[0, t_max_factor *
deg]``.  The simulator advances in variable steps: each step lasts until the
first vehicle reaches its next intersection, mirroring a per-step interval
equal to the minimum over vehicles of their time-to-next-node.

Four dispatch modes share the movement rules and differ only in when the
risk-aware assignment solver is re-run: never (``offline``), every step
(``all-step``), when one vehicle dominates another on remaining path length
and degree (``ota-street``), or on remaining travel-time mean and variance
(``ota-general``).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from heapq import heappop, heappush
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import sga as sga_mod
from .casestudies import GroupMaxTable
from .core import GroundSet, PartitionMatroid
from .errors import (
    GuardError,
    InstanceFormatError,
    InvalidElementError,
    ParameterError,
    UnreachableError,
)
from .risk import RiskParams, substream

NETWORK_SCHEMA = "streetnet-v1"
MODES = ("offline", "all-step", "ota-street", "ota-general")

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(eq=False)
class StreetNetwork:
    """Directed road graph.

    ``edges`` holds ``(u, v, length_m, maxv_mps)`` tuples.  Node degree is
    the total incident edge count (in plus out).  Treat instances as
    immutable once built; derived indices are computed here and not
    refreshed.
    """

    xs: tuple[float, ...]
    ys: tuple[float, ...]
    edges: tuple[tuple[int, int, float, float], ...]
    beta1: float = 1.0
    beta2: float = 1.0
    t_max_factor: float = 5.0

    def __post_init__(self) -> None:
        n = len(self.xs)
        if len(self.ys) != n:
            raise ParameterError("xs and ys must have equal length")
        if self.beta1 <= 0 or self.beta2 < 1:
            raise ParameterError("need beta1 > 0 and beta2 >= 1")
        if self.t_max_factor < 0:
            raise ParameterError("t_max_factor must be >= 0")
        degree = [0] * n
        out_adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        index: dict[tuple[int, int], int] = {}
        for e, (u, v, length, maxv) in enumerate(self.edges):
            if not (0 <= u < n and 0 <= v < n):
                raise ParameterError(f"edge {(u, v)} references unknown nodes")
            if length <= 0 or maxv <= 0:
                raise ParameterError(f"edge {(u, v)} needs positive length and speed")
            if (u, v) in index:
                raise ParameterError(f"duplicate edge {(u, v)}")
            degree[u] += 1
            degree[v] += 1
            out_adj[u].append((v, e))
            index[(u, v)] = e
        for adj in out_adj:
            adj.sort()
        self._degree = tuple(degree)
        self._out_adj = tuple(tuple(a) for a in out_adj)
        self._edge_index = index

    @property
    def n_nodes(self) -> int:
        return len(self.xs)

    def degree(self, node: int) -> int:
        return self._degree[node]

    def out_neighbors(self, node: int) -> tuple[tuple[int, int], ...]:
        return self._out_adj[node]

    def edge_id(self, u: int, v: int) -> int:
        try:
            return self._edge_index[(u, v)]
        except KeyError:
            raise ParameterError(f"no edge {(u, v)} in the network") from None

    def edge_time(self, edge: int) -> float:
        _, _, length, maxv = self.edges[edge]
        return self.beta2 * length / maxv

    def _check_node(self, node: int) -> None:
        if not 0 <= node < self.n_nodes:
            raise InvalidElementError(f"node {node} outside network of {self.n_nodes} nodes")

    # wait model -----------------------------------------------------------

    def wait_sigma(self, node: int) -> float:
        return math.sqrt(self.beta1 * self.degree(node))

    def wait_cap(self, node: int) -> float:
        return self.t_max_factor * self.degree(node)

    def wait_mean(self, node: int) -> float:
        """Mean of the zero-located truncated normal wait at ``node``."""
        sigma = self.wait_sigma(node)
        cap = self.wait_cap(node)
        if cap <= 0 or sigma <= 0:
            return 0.0
        b = cap / sigma
        z = ndtr(b) - 0.5
        phi0 = 1.0 / _SQRT_2PI
        phib = math.exp(-0.5 * b * b) / _SQRT_2PI
        return sigma * (phi0 - phib) / z

    def wait_variance(self, node: int) -> float:
        sigma = self.wait_sigma(node)
        cap = self.wait_cap(node)
        if cap <= 0 or sigma <= 0:
            return 0.0
        b = cap / sigma
        z = ndtr(b) - 0.5
        phib = math.exp(-0.5 * b * b) / _SQRT_2PI
        second = sigma**2 * (1.0 - b * phib / z)
        return second - self.wait_mean(node) ** 2

    def sample_waits(self, node: int, uniforms: np.ndarray) -> np.ndarray:
        """Inverse-CDF waits at ``node`` from uniform draws (rejection-free)."""
        sigma = self.wait_sigma(node)
        cap = self.wait_cap(node)
        u = np.asarray(uniforms, dtype=float)
        if cap <= 0 or sigma <= 0:
            return np.zeros_like(u)
        b = cap / sigma
        z = ndtr(b) - 0.5
        return sigma * ndtri(0.5 + u * z)


def synth_city(
    rows: int, cols: int, seed: int, *, diagonal_prob: float = 0.0
) -> StreetNetwork:
    """Synthetic grid city: bidirectional streets with random lengths and speeds.

    Both directions of a street share one sampled length (uniform in
    [80, 400] m) and speed limit (from {5, 10, 15, 20} m/s).  With
    ``diagonal_prob`` > 0, each grid cell may gain a diagonal shortcut,
    which varies node degrees.
    """
    if rows < 2 or cols < 2:
        raise ParameterError(f"grid must be at least 2x2, got {rows}x{cols}")
    if not 0.0 <= diagonal_prob <= 1.0:
        raise ParameterError(f"diagonal_prob must be in [0, 1], got {diagonal_prob}")
    rng = substream(seed, "city")
    spacing = 100.0

    def node(r: int, c: int) -> int:
        return r * cols + c

    xs = []
    ys = []
    for r in range(rows):
        for c in range(cols):
            xs.append(c * spacing)
            ys.append(r * spacing)

    speeds = (5.0, 10.0, 15.0, 20.0)
    edges: list[tuple[int, int, float, float]] = []

    def add_street(u: int, v: int, scale: float = 1.0) -> None:
        length = float(rng.uniform(80.0, 400.0)) * scale
        maxv = speeds[int(rng.integers(len(speeds)))]
        edges.append((u, v, length, maxv))
        edges.append((v, u, length, maxv))

    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                add_street(node(r, c), node(r, c + 1))
            if r + 1 < rows:
                add_street(node(r, c), node(r + 1, c))
    if diagonal_prob > 0.0:
        for r in range(rows - 1):
            for c in range(cols - 1):
                roll = float(rng.random())
                if roll < diagonal_prob:
                    add_street(node(r, c), node(r + 1, c + 1), scale=math.sqrt(2.0))
                elif roll < 2.0 * diagonal_prob:
                    add_street(node(r, c + 1), node(r + 1, c), scale=math.sqrt(2.0))
    return StreetNetwork(xs=tuple(xs), ys=tuple(ys), edges=tuple(edges))


def save_network(net: StreetNetwork, path) -> None:
    doc = {
        "schema": NETWORK_SCHEMA,
        "beta1": net.beta1,
        "beta2": net.beta2,
        "t_max_factor": net.t_max_factor,
        "nodes": [{"id": i, "x": net.xs[i], "y": net.ys[i]} for i in range(net.n_nodes)],
        "edges": [
            {"from": u, "to": v, "len_m": length, "maxv_mps": maxv}
            for u, v, length, maxv in net.edges
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_network(path) -> StreetNetwork:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InstanceFormatError(f"cannot read network file {path}: {exc}") from exc
    if doc.get("schema") != NETWORK_SCHEMA:
        raise InstanceFormatError(f"unknown network schema {doc.get('schema')!r} in {path}")
    try:
        nodes = sorted(doc["nodes"], key=lambda n: int(n["id"]))
        if [int(n["id"]) for n in nodes] != list(range(len(nodes))):
            raise InstanceFormatError("node ids must be 0..n-1")
        xs = tuple(float(n["x"]) for n in nodes)
        ys = tuple(float(n["y"]) for n in nodes)
        edges = tuple(
            (int(e["from"]), int(e["to"]), float(e["len_m"]), float(e["maxv_mps"]))
            for e in doc["edges"]
        )
        return StreetNetwork(
            xs=xs,
            ys=ys,
            edges=edges,
            beta1=float(doc["beta1"]),
            beta2=float(doc["beta2"]),
            t_max_factor=float(doc["t_max_factor"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceFormatError(f"malformed network file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# shortest paths


@dataclass(frozen=True)
class PathResult:
    """A shortest path: node sequence, total edge length, summed node degrees."""

    nodes: tuple[int, ...]
    length: float
    degree: int

    @property
    def n_edges(self) -> int:
        return len(self.nodes) - 1


def shortest_paths_from(net: StreetNetwork, source: int) -> dict[int, PathResult]:
    """Dijkstra by edge length from ``source`` to every reachable node.

    Ties on length resolve to the lexicographically smallest node sequence
    (the heap orders by ``(length, nodes)``), making results deterministic.
    """
    net._check_node(source)
    settled: dict[int, PathResult] = {}
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (source,))]
    while heap:
        dist, nodes = heappop(heap)
        tail = nodes[-1]
        if tail in settled:
            continue
        settled[tail] = PathResult(
            nodes=nodes, length=dist, degree=sum(net.degree(v) for v in nodes)
        )
        for nxt, edge in net.out_neighbors(tail):
            if nxt not in settled:
                heappush(heap, (dist + net.edges[edge][2], nodes + (nxt,)))
    return settled


def shortest_path(net: StreetNetwork, source: int, target: int) -> Optional[PathResult]:
    """Shortest path or ``None`` when the target is unreachable (infinite travel time)."""
    net._check_node(target)
    return shortest_paths_from(net, source).get(target)


def path_travel_time_samples(
    net: StreetNetwork, nodes: Sequence[int], n: int, rng: np.random.Generator
) -> np.ndarray:
    """Sampled traversal times: waits at every node on the path plus edge times."""
    nodes = list(nodes)
    if not nodes:
        raise ParameterError("path must contain at least one node")
    edge_total = 0.0
    for u, v in zip(nodes, nodes[1:]):
        edge_total += net.edge_time(net.edge_id(u, v))
    out = np.full(n, edge_total)
    for v in nodes:
        out += net.sample_waits(v, rng.random(n))
    return out


def path_efficiency_samples(
    net: StreetNetwork, nodes: Sequence[int], n: int, rng: np.random.Generator
) -> np.ndarray:
    """Reciprocal travel times of a path."""
    return 1.0 / np.maximum(path_travel_time_samples(net, nodes, n, rng), 1e-9)


# ---------------------------------------------------------------------------
# online triggering simulation


@dataclass(frozen=True)
class OtaRun:
    """Full record of one dispatch episode.

    ``arrival_time`` is the sum of all per-step intervals from the first
    step to termination; ``assignment_count`` equals the number of trigger
    steps plus one (the initial assignment).  ``events`` holds one
    serializable snapshot per step for newline-delimited JSON replay logs;
    wall-clock time is recorded separately and never enters the log.
    """

    mode: str
    seed: int
    gamma_trigger: float
    assignments: tuple[tuple[int, tuple[tuple[int, tuple[int, ...]], ...]], ...]
    trigger_steps: tuple[int, ...]
    step_intervals: tuple[float, ...]
    arrival_time: float
    assignment_count: int
    events: tuple[dict, ...]
    wall_time: float


def run_log_lines(run: OtaRun) -> list[str]:
    """Replay log lines: a config record followed by one record per step."""
    head = {
        "type": "config",
        "mode": run.mode,
        "seed": run.seed,
        "gamma_trigger": run.gamma_trigger,
    }
    lines = [json.dumps(head, sort_keys=True)]
    for event in run.events:
        lines.append(json.dumps(event, sort_keys=True))
    return lines


def write_run_log(run: OtaRun, path) -> None:
    Path(path).write_text("\n".join(run_log_lines(run)) + "\n", encoding="utf-8")


class _Vehicle:
    __slots__ = (
        "node",
        "prev_sampled",
        "wait",
        "t_next",
        "path",
        "ptr",
        "demand",
        "park_at_next",
        "stream",
    )

    def __init__(self, node: int, stream: np.random.Generator):
        self.node = node
        self.prev_sampled: Optional[int] = None
        self.wait = 0.0
        self.t_next = math.inf
        self.path: tuple[int, ...] = (node,)
        self.ptr = 0
        self.demand: Optional[int] = None
        self.park_at_next = False
        self.stream = stream

    @property
    def moving(self) -> bool:
        # A vehicle without a demand still finishes its committed edge.
        return self.ptr < len(self.path) - 1 and (
            self.demand is not None or self.park_at_next
        )

    def on_edge(self, net: StreetNetwork) -> Optional[tuple[int, int, float]]:
        """Current edge and fraction traversed, or None when at a node.

        Purely geometric: valid also for vehicles that just lost their
        assignment and are coasting to the next intersection.
        """
        if self.ptr >= len(self.path) - 1 or self.wait > 0.0:
            return None
        u = self.path[self.ptr]
        v = self.path[self.ptr + 1]
        total = net.edge_time(net.edge_id(u, v))
        if self.t_next >= total:
            return None
        return u, v, 1.0 - self.t_next / total

    def effective_node(self, net: StreetNetwork) -> int:
        """Node a fresh plan starts from: the edge head when committed mid-edge."""
        edge = self.on_edge(net)
        return edge[1] if edge is not None else self.node


def ota_run(
    net: StreetNetwork,
    vehicles: Sequence[int],
    demands: Sequence[int],
    *,
    mode: str,
    seed: int,
    alpha: float = 0.1,
    gamma_trigger: float = 0.5,
    n_scenarios: int = 200,
    grid_points: int = 50,
    step_cap: int = 100_000,
) -> OtaRun:
    """Simulate one dispatch episode until every demand is reached.

    Requires at least as many vehicles as demands.  The episode is
    deterministic in ``seed``: waits use one substream per vehicle (one draw
    per intersection arrival) and every solver invocation gets its own
    scenario substream keyed by the invocation index.
    """
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    if len(vehicles) < len(demands):
        raise ParameterError(
            f"need at least as many vehicles as demands, got {len(vehicles)} < {len(demands)}"
        )
    if not demands:
        raise ParameterError("need at least one demand")
    if not 0 < alpha <= 1:
        raise ParameterError(f"alpha must be in (0, 1], got {alpha}")
    if not 0 < gamma_trigger < 1:
        raise ParameterError(f"gamma_trigger must be in (0, 1), got {gamma_trigger}")
    for node in list(vehicles) + list(demands):
        net._check_node(node)

    started = time.perf_counter()
    sim = _Simulation(
        net,
        list(vehicles),
        list(demands),
        mode=mode,
        seed=seed,
        alpha=alpha,
        gamma_trigger=gamma_trigger,
        n_scenarios=n_scenarios,
        grid_points=grid_points,
        step_cap=step_cap,
    )
    sim.run()
    wall = time.perf_counter() - started
    return OtaRun(
        mode=mode,
        seed=seed,
        gamma_trigger=gamma_trigger,
        assignments=tuple(sim.assignment_snapshots),
        trigger_steps=tuple(sim.trigger_steps),
        step_intervals=tuple(sim.step_intervals),
        arrival_time=float(sum(sim.step_intervals)),
        assignment_count=sim.assignment_count,
        events=tuple(sim.events),
        wall_time=wall,
    )


class _Simulation:
    def __init__(
        self,
        net: StreetNetwork,
        vehicles: list[int],
        demands: list[int],
        *,
        mode: str,
        seed: int,
        alpha: float,
        gamma_trigger: float,
        n_scenarios: int,
        grid_points: int,
        step_cap: int,
    ):
        self.net = net
        self.demand_nodes = demands
        self.mode = mode
        self.seed = seed
        self.alpha = alpha
        self.gamma = gamma_trigger
        self.n_scenarios = n_scenarios
        self.grid_points = grid_points
        self.step_cap = step_cap

        self.vehicles = [
            _Vehicle(node, substream(seed, "wait", j)) for j, node in enumerate(vehicles)
        ]
        self.reached: set[int] = set()
        self.assignment: dict[int, list[int]] = {}
        self.assignment_count = 0
        self.trigger_steps: list[int] = []
        self.step_intervals: list[float] = []
        self.assignment_snapshots: list[tuple[int, tuple[tuple[int, tuple[int, ...]], ...]]] = []
        self.events: list[dict] = []
        self.step = 0
        self.clock = 0.0
        # The network never changes, so shortest-path trees are cached per
        # start node for the whole episode.
        self._plan_cache: dict[int, dict[int, PathResult]] = {}

    # -- assignment ---------------------------------------------------------

    def active_demands(self) -> list[int]:
        return [i for i in range(len(self.demand_nodes)) if i not in self.reached]

    def _plans_from(self, start: int) -> dict[int, PathResult]:
        if start not in self._plan_cache:
            self._plan_cache[start] = shortest_paths_from(self.net, start)
        return self._plan_cache[start]

    def _pair_model(self):
        """Candidate (demand, vehicle) pairs with start node, deterministic time,
        random-wait node list and full plan, from current positions."""
        active = self.active_demands()
        pairs = []
        for j, veh in enumerate(self.vehicles):
            start = veh.effective_node(self.net)
            edge = veh.on_edge(self.net)
            for i in active:
                plan = self._plans_from(start).get(self.demand_nodes[i])
                if plan is None:
                    continue
                det = 0.0
                nodes = list(plan.nodes)
                if edge is not None:
                    det += veh.t_next  # committed remainder of the current edge
                elif veh.prev_sampled == veh.node:
                    det += veh.wait  # wait already realized at this node
                    nodes = nodes[1:]
                for u, v in zip(plan.nodes, plan.nodes[1:]):
                    det += self.net.edge_time(self.net.edge_id(u, v))
                pairs.append((i, j, det, tuple(nodes), plan))
        return active, pairs

    def _solve_assignment(self) -> dict[int, list[int]]:
        active, pairs = self._pair_model()
        if not pairs:
            raise UnreachableError("no vehicle can reach any open demand")
        for i in active:
            if not any(p[0] == i for p in pairs):
                raise UnreachableError(
                    f"demand {i} at node {self.demand_nodes[i]} is unreachable"
                )
        call = self.assignment_count
        n_pairs = len(pairs)
        matrix = np.empty((self.n_scenarios, n_pairs))
        upper = np.empty(n_pairs)
        for p, (i, j, det, nodes, _plan) in enumerate(pairs):
            stream = substream(self.seed, "sga", call, p)
            total = np.full(self.n_scenarios, det)
            for v in nodes:
                total += self.net.sample_waits(v, stream.random(self.n_scenarios))
            matrix[:, p] = 1.0 / np.maximum(total, 1e-9)
            upper[p] = 1.0 / max(det, 1e-9)
        demand_index = {i: k for k, i in enumerate(active)}
        group_of = [demand_index[p[0]] for p in pairs]
        block_of = [p[1] for p in pairs]
        ground = GroundSet(n_pairs)
        matroid = PartitionMatroid(block_of, (1,) * len(self.vehicles))
        gamma_cap = len(active) * float(upper.max())
        params = RiskParams(
            alpha=self.alpha, gamma_cap=gamma_cap, delta_step=gamma_cap / self.grid_points
        )
        table = GroupMaxTable(matrix, group_of, len(active), None)
        result = sga_mod.sga_solve(table, matroid, ground, params)

        chosen: dict[int, list[int]] = {i: [] for i in active}
        for p in result.selected:
            i, j = pairs[p][0], pairs[p][1]
            chosen[i].append(j)
        self._complete_assignment(chosen, pairs)
        for i in chosen:
            chosen[i].sort()
        self.assignment_count += 1
        return chosen

    def _complete_assignment(self, chosen: dict[int, list[int]], pairs) -> None:
        # Solver output is a maximal independent set, which can still leave a
        # demand with no vehicle; donate from the most crowded demand so the
        # episode terminates.  No-op on non-degenerate instances.
        mean_eff = {(i, j): 1.0 / max(det, 1e-9) for i, j, det, _n, _p in pairs}
        for i in sorted(chosen):
            if chosen[i]:
                continue
            feasible = {j for (di, j) in mean_eff if di == i}
            donors = sorted(
                (d for d in chosen if len(chosen[d]) > 1),
                key=lambda d: (-len(chosen[d]), d),
            )
            moved = False
            for donor in donors:
                candidates = [j for j in chosen[donor] if j in feasible]
                if not candidates:
                    continue
                best = max(candidates, key=lambda j: (mean_eff[(i, j)], -j))
                chosen[donor].remove(best)
                chosen[i].append(best)
                moved = True
                break
            if not moved and feasible:
                # Fall back to any feasible vehicle serving a single demand.
                for donor in sorted(chosen, key=lambda d: (-len(chosen[d]), d)):
                    candidates = [j for j in chosen[donor] if j in feasible]
                    if donor != i and candidates:
                        best = max(candidates, key=lambda j: (mean_eff[(i, j)], -j))
                        chosen[donor].remove(best)
                        chosen[i].append(best)
                        break

    def _apply_assignment(self, chosen: dict[int, list[int]]) -> None:
        assigned: dict[int, int] = {}
        for i, js in chosen.items():
            for j in js:
                assigned[j] = i
        for j, veh in enumerate(self.vehicles):
            edge = veh.on_edge(self.net)
            if j not in assigned:
                veh.demand = None
                veh.park_at_next = edge is not None
                if not veh.park_at_next:
                    self._truncate_to_node(veh)
                continue
            i = assigned[j]
            veh.demand = i
            veh.park_at_next = False
            target = self.demand_nodes[i]
            start = veh.effective_node(self.net)
            plan = self._plans_from(start)[target]
            if edge is not None:
                u, v, _frac = edge
                veh.path = (u,) + plan.nodes
                veh.ptr = 0
                # t_next (remaining time on the committed edge) is unchanged.
            else:
                veh.path = plan.nodes
                veh.ptr = 0
                if len(plan.nodes) > 1 and veh.prev_sampled == veh.node:
                    first_edge = self.net.edge_id(plan.nodes[0], plan.nodes[1])
                    veh.t_next = veh.wait + self.net.edge_time(first_edge)
        self.assignment = {i: list(js) for i, js in chosen.items()}
        self.assignment_snapshots.append((self.step, self._snapshot_assignment()))

    def _truncate_to_node(self, veh: _Vehicle) -> None:
        veh.path = (veh.node,)
        veh.ptr = 0
        veh.t_next = math.inf

    def _snapshot_assignment(self):
        return tuple(
            (i, tuple(sorted(js))) for i, js in sorted(self.assignment.items())
        )

    # -- per-step mechanics --------------------------------------------------

    def _sample_wait(self, veh: _Vehicle) -> float:
        return float(self.net.sample_waits(veh.node, veh.stream.random(1))[0])

    def _process_reached(self, newly: list[int]) -> None:
        for i in newly:
            self.reached.add(i)
            self.assignment.pop(i, None)
            for veh in self.vehicles:
                if veh.demand == i:
                    edge = veh.on_edge(self.net)
                    veh.demand = None
                    if edge is not None:
                        veh.park_at_next = True
                    else:
                        self._truncate_to_node(veh)

    def _initial_reaches(self) -> list[int]:
        newly = []
        for veh in self.vehicles:
            i = veh.demand
            if i is None or i in self.reached or i in newly:
                continue
            if veh.on_edge(self.net) is None and veh.node == self.demand_nodes[i]:
                newly.append(i)
        return newly

    def _remaining_plan(self, veh: _Vehicle) -> Optional[tuple[float, int]]:
        """Remaining (length, degree) to the assigned demand from the current
        position, recomputed on the current graph state."""
        if veh.demand is None:
            return None
        target = self.demand_nodes[veh.demand]
        edge = veh.on_edge(self.net)
        if edge is not None:
            u, v, frac = edge
            plan = self._plans_from(v).get(target)
            if plan is None:
                return None
            partial = self.net.edges[self.net.edge_id(u, v)][2] * (1.0 - frac)
            return partial + plan.length, plan.degree
        plan = self._plans_from(veh.node).get(target)
        if plan is None:
            return None
        return plan.length, plan.degree

    def _remaining_moments(self, veh: _Vehicle) -> Optional[tuple[float, float]]:
        """Mean and variance of the remaining travel time to the assigned demand."""
        if veh.demand is None:
            return None
        target = self.demand_nodes[veh.demand]
        edge = veh.on_edge(self.net)
        if edge is not None:
            plan = self._plans_from(edge[1]).get(target)
            if plan is None:
                return None
            det = veh.t_next
            nodes = plan.nodes
        else:
            plan = self._plans_from(veh.node).get(target)
            if plan is None:
                return None
            det = 0.0
            nodes = plan.nodes
            if veh.prev_sampled == veh.node:
                det += veh.wait
                nodes = nodes[1:]
        mean = det
        var = 0.0
        for u, v in zip(plan.nodes, plan.nodes[1:]):
            mean += self.net.edge_time(self.net.edge_id(u, v))
        for v in nodes:
            mean += self.net.wait_mean(v)
            var += self.net.wait_variance(v)
        return mean, var

    def _street_trigger(self) -> bool:
        for i, js in self.assignment.items():
            if len(js) < 2:
                continue
            stats = {}
            for j in js:
                plan = self._remaining_plan(self.vehicles[j])
                if plan is not None:
                    stats[j] = plan
            for j in js:
                for jp in js:
                    if j == jp or j not in stats or jp not in stats:
                        continue
                    len_j, deg_j = stats[j]
                    len_jp, deg_jp = stats[jp]
                    if len_j <= self.gamma * len_jp and deg_j <= deg_jp:
                        return True
        return False

    def _general_trigger(self) -> bool:
        for i, js in self.assignment.items():
            if len(js) < 2:
                continue
            stats = {}
            for j in js:
                moments = self._remaining_moments(self.vehicles[j])
                if moments is not None:
                    stats[j] = moments
            for j in js:
                for jp in js:
                    if j == jp or j not in stats or jp not in stats:
                        continue
                    mean_j, var_j = stats[j]
                    mean_jp, var_jp = stats[jp]
                    if mean_j <= self.gamma * mean_jp and var_j <= var_jp:
                        return True
        return False

    def _should_trigger(self) -> bool:
        if self.mode == "offline":
            return False
        if self.mode == "all-step":
            return True
        if self.mode == "ota-street":
            return self._street_trigger()
        return self._general_trigger()

    def _position_record(self, veh: _Vehicle):
        edge = veh.on_edge(self.net)
        if edge is None:
            return veh.node
        u, v, frac = edge
        return [u, v, round(frac, 12)]

    def _record_event(self, t_step: float, trigger: bool, newly: list[int]) -> None:
        vehicles = []
        for j, veh in enumerate(self.vehicles):
            plan = self._remaining_plan(veh)
            vehicles.append(
                {
                    "id": j,
                    "pos": self._position_record(veh),
                    "demand": veh.demand,
                    "remaining_len": None if plan is None else round(plan[0], 9),
                    "remaining_deg": None if plan is None else plan[1],
                }
            )
        self.events.append(
            {
                "step": self.step,
                "t_step": round(t_step, 9),
                "time": round(self.clock, 9),
                "vehicles": vehicles,
                "assignment": {str(i): sorted(js) for i, js in sorted(self.assignment.items())},
                "trigger": trigger,
                "reached": sorted(newly),
            }
        )

    # -- main loop ------------------------------------------------------------

    def run(self) -> None:
        chosen = self._solve_assignment()
        self._apply_assignment(chosen)
        newly = self._initial_reaches()
        self._process_reached(newly)
        self._record_event(0.0, False, newly)

        n_demands = len(self.demand_nodes)
        stalled_once = False
        while len(self.reached) < n_demands:
            self.step += 1
            if self.step > self.step_cap:
                raise GuardError(f"simulation exceeded {self.step_cap} steps")

            # Arrivals since the previous step acquire their wait and the time
            # to the next intersection; everyone else already carries the
            # correct remainder.
            for veh in self.vehicles:
                if not veh.moving:
                    continue
                if veh.prev_sampled != veh.node:
                    veh.prev_sampled = veh.node
                    veh.wait = self._sample_wait(veh)
                    nxt = veh.path[veh.ptr + 1]
                    edge = self.net.edge_id(veh.node, nxt)
                    veh.t_next = veh.wait + self.net.edge_time(edge)

            movers = [veh for veh in self.vehicles if veh.moving]
            if not movers:
                if self.mode == "offline":
                    raise GuardError("offline assignment stalled with open demands")
                if stalled_once:
                    raise UnreachableError("no vehicle can make progress toward open demands")
                stalled_once = True
                self.trigger_steps.append(self.step)
                self.step_intervals.append(0.0)
                chosen = self._solve_assignment()
                self._apply_assignment(chosen)
                newly = self._initial_reaches()
                self._process_reached(newly)
                self._record_event(0.0, True, newly)
                continue
            stalled_once = False

            t_step = min(veh.t_next for veh in movers)
            self.clock += t_step
            self.step_intervals.append(t_step)

            arrivals: list[_Vehicle] = []
            for veh in movers:
                if veh.t_next == t_step:
                    veh.ptr += 1
                    veh.node = veh.path[veh.ptr]
                    veh.wait = 0.0
                    veh.t_next = math.inf
                    arrivals.append(veh)
                elif veh.wait >= t_step:
                    veh.wait -= t_step
                    veh.t_next -= t_step
                else:
                    veh.wait = 0.0
                    veh.t_next -= t_step

            newly = []
            for veh in arrivals:
                if veh.park_at_next:
                    veh.park_at_next = False
                    self._truncate_to_node(veh)
                    continue
                i = veh.demand
                if i is not None and veh.node == self.demand_nodes[i] and i not in self.reached:
                    if i not in newly:
                        newly.append(i)
            self._process_reached(newly)

            if len(self.reached) >= n_demands:
                self._record_event(t_step, False, newly)
                break

            trigger = self._should_trigger()
            if trigger:
                self.trigger_steps.append(self.step)
                chosen = self._solve_assignment()
                self._apply_assignment(chosen)
                extra = self._initial_reaches()
                if extra:
                    self._process_reached(extra)
                    newly.extend(extra)
            self._record_event(t_step, trigger, newly)
