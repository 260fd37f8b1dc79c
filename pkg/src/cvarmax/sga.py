"""Grid-search sequential greedy solver and its curvature-based certificate.

For every threshold ``tau_i = i * delta_step`` on the inclusive grid
``i = 0 .. ceil(gamma/delta)`` a matroid-constrained greedy pass maximizes
the sampled auxiliary objective at that threshold; the best ``(set, tau)``
pair over the grid is returned together with the full per-threshold trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import core, risk
from .core import Curvature, GroundSet, Matroid, Members
from .errors import EvaluationError, ParameterError, ZeroSingletonError
from .risk import RiskParams, ScenarioTable


@dataclass(frozen=True)
class TracePoint:
    """Greedy outcome at one grid threshold."""

    tau: float
    members: Members
    h_value: float


@dataclass(frozen=True)
class SgaResult:
    """Solver output.

    ``eval_count`` counts objective evaluations (each one touches every
    scenario of the table, so utility evaluations are ``eval_count *
    n_scenarios``).  The trace keeps one entry per grid threshold; it is
    required downstream for concavity reports and grid-refinement checks.
    """

    selected: Members
    tau_g: float
    h_value: float
    trace: tuple[TracePoint, ...]
    eval_count: int


@dataclass(frozen=True)
class Certificate:
    """Data-dependent upper bound on the unknown optimum.

    ``optimum_upper_bound = (1 + k_f) h + k_f gamma (1/alpha - 1) + delta
    + (1 + k_f) epsilon`` and the additive slack term is
    ``k_f / (1 + k_f) * gamma * (1/alpha - 1)``; both shrink to zero as the
    curvature, grid step and sampling error go to zero.
    """

    k_f: float
    additive_term: float
    delta_step: float
    epsilon: float
    gamma_cap: float
    alpha: float
    optimum_upper_bound: float


def sga_solve(
    table: ScenarioTable,
    matroid: Matroid,
    ground: GroundSet,
    params: RiskParams,
) -> SgaResult:
    """Run the sequential greedy grid search.

    Deterministic given ``(table, matroid, ground, params)``: greedy ties
    break toward the smallest element index and, among grid points tying at
    the maximal objective value, the largest threshold is returned (at
    ``alpha = 1`` the top of the grid reduces every hinge to a plain
    expectation, so the returned set is exactly the expectation-greedy set).
    """
    eval_count = 0
    alpha = params.alpha

    trace: list[TracePoint] = []
    for tau in params.tau_grid():

        def evaluate(members: Members, _tau: float = tau) -> float:
            nonlocal eval_count
            if not members:
                return risk.h_at_empty(_tau, alpha)
            eval_count += 1
            try:
                values, weights = table.outcomes(members)
            except Exception as exc:  # pragma: no cover - defensive context
                raise EvaluationError(
                    f"objective evaluation failed at tau={_tau}, set={members}"
                ) from exc
            return risk.h_from_outcomes(values, weights, _tau, alpha)

        def evaluate_many(
            members: Members, candidates: Sequence[int], _tau: float = tau
        ) -> np.ndarray:
            nonlocal eval_count
            eval_count += len(candidates)
            try:
                values, weights = table.outcomes_with_each(members, candidates)
            except Exception as exc:  # pragma: no cover - defensive context
                raise EvaluationError(
                    f"batch evaluation failed at tau={_tau}, set={members}"
                ) from exc
            hinge = np.maximum(_tau - values, 0.0)
            return _tau - np.sum(weights * hinge, axis=-1) / alpha

        members, value = core.greedy_maximize(
            evaluate, matroid, ground, evaluate_many=evaluate_many
        )
        trace.append(TracePoint(tau=tau, members=members, h_value=value))

    best = max(range(len(trace)), key=lambda i: (trace[i].h_value, i))
    chosen = trace[best]
    return SgaResult(
        selected=chosen.members,
        tau_g=chosen.tau,
        h_value=chosen.h_value,
        trace=tuple(trace),
        eval_count=eval_count,
    )


def certificate(
    result: SgaResult, k_f: float, params: RiskParams, *, epsilon: Optional[float] = None
) -> Certificate:
    """Optimality certificate for a solver result given a curvature bound.

    ``epsilon`` defaults to ``params.epsilon`` when set and to 0 otherwise
    (exact-expectation tables have no sampling error).
    """
    if not 0 <= k_f <= 1:
        raise ParameterError(f"curvature must be in [0, 1], got {k_f}")
    eps = params.epsilon if epsilon is None else epsilon
    if eps is None:
        eps = 0.0
    slack = params.gamma_cap * (1.0 / params.alpha - 1.0)
    additive = k_f / (1.0 + k_f) * slack
    bound = (1.0 + k_f) * result.h_value + k_f * slack + params.delta_step + (1.0 + k_f) * eps
    return Certificate(
        k_f=k_f,
        additive_term=additive,
        delta_step=params.delta_step,
        epsilon=eps,
        gamma_cap=params.gamma_cap,
        alpha=params.alpha,
        optimum_upper_bound=bound,
    )


def eval_count_bound(ground: GroundSet, params: RiskParams, n_scenarios: int) -> int:
    """Utility-evaluation envelope: grid points x |X|^2 x n_scenarios.

    A greedy pass scores at most ``|X| + (|X|-1) + ... <= |X|^2`` candidate
    sets per grid point, so ``result.eval_count * n_scenarios`` never exceeds
    this product.
    """
    if n_scenarios < 1:
        raise ParameterError(f"n_scenarios must be >= 1, got {n_scenarios}")
    return params.grid_index_count() * ground.size**2 * n_scenarios


def mean_value_curvature(table: ScenarioTable, ground: GroundSet) -> Curvature:
    """Curvature of the scenario-mean utility ``S -> E[f(S, y)]``.

    This is the default curvature reported in certificates; per-threshold
    curvatures of the auxiliary objective itself are available from
    :func:`tau_curvature_samples` as diagnostics.
    """

    def mean_value(members: Members) -> float:
        values, weights = table.outcomes(members)
        return float(np.sum(weights * values))

    return core.curvature_estimate(mean_value, ground)


def tau_curvature_samples(
    table: ScenarioTable, ground: GroundSet, params: RiskParams
) -> list[tuple[float, Optional[float]]]:
    """Curvature of the normalized auxiliary objective at each grid threshold.

    The objective is shifted by its empty-set value before the curvature
    formula is applied.  Thresholds where some normalized singleton is ~0
    (always the case at ``tau = 0``) report ``None``.
    """
    # The same 2|X|+1 sets are probed at every threshold; fetch their
    # outcome arrays once.
    cache: dict[Members, tuple[np.ndarray, np.ndarray]] = {}

    def outcomes_of(members: Members):
        if members not in cache:
            cache[members] = table.outcomes(members)
        return cache[members]

    out: list[tuple[float, Optional[float]]] = []
    for tau in params.tau_grid():
        base = risk.h_at_empty(tau, params.alpha)

        def normalized(members: Members, _tau: float = tau, _base: float = base) -> float:
            if not members:
                return 0.0
            values, weights = outcomes_of(members)
            return risk.h_from_outcomes(values, weights, _tau, params.alpha) - _base

        try:
            k = core.curvature_estimate(normalized, ground).value
        except ZeroSingletonError:
            k = None
        out.append((tau, k))
    return out


def max_tau_curvature(
    table: ScenarioTable, ground: GroundSet, params: RiskParams
) -> float:
    """Largest defined per-threshold curvature; the bound the guarantee is stated with."""
    ks = [k for _, k in tau_curvature_samples(table, ground, params) if k is not None]
    if not ks:
        raise ParameterError("curvature undefined at every grid threshold")
    return max(ks)


def theorem_lower_bound(h_star: float, k_f: float, params: RiskParams) -> float:
    """Guaranteed solver value given the optimum: (h* - delta)/(1+k) - add - (1+?)eps.

    Returned without sampling slack; callers subtract epsilon themselves when
    comparing sampled quantities.
    """
    slack = params.gamma_cap * (1.0 / params.alpha - 1.0)
    return (h_star - params.delta_step) / (1.0 + k_f) - k_f / (1.0 + k_f) * slack


def hinge_breakpoints(values: np.ndarray, gamma_cap: float) -> list[float]:
    """Candidate maximizing thresholds of a piecewise-linear auxiliary objective.

    The objective is linear between consecutive distinct outcome values, so
    its exact maximum over ``[0, gamma]`` is attained at an outcome value or
    an interval endpoint.
    """
    pts = {0.0, float(gamma_cap)}
    for v in np.unique(np.asarray(values, dtype=float)):
        if 0.0 <= v <= gamma_cap:
            pts.add(float(v))
    return sorted(pts)
