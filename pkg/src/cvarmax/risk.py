"""Empirical VaR/CVaR estimation, the sampled auxiliary objective, and sample sizing.

Risk convention: utilities are rewards, so the risky tail is the *lower*
tail.  At risk level ``alpha`` the value-at-risk is the left endpoint of the
alpha-quantile and the conditional value-at-risk is the mean of the worst
``ceil(alpha * n)`` outcomes; at ``alpha = 1`` it equals the plain mean.

Maximizing CVaR over a set is driven through the auxiliary objective

    H(S, tau) = tau - E[(tau - f(S, y))_+] / alpha

evaluated on a fixed panel of sampled scenarios (a :class:`ScenarioTable`).
One table is drawn per solver run and shared by every ``(S, tau)``
evaluation, which makes the sampled objective exactly monotone, submodular
in ``S`` and piecewise-linear concave in ``tau`` and keeps runs reproducible.

Randomness: every stream is a Philox4x64 counter-based generator keyed
through ``numpy.random.SeedSequence((seed, *key))``.  Scenario ``k`` of
element ``j`` is the k-th draw of the stream keyed ``(seed, j)``, so element
streams never perturb one another and adding elements leaves existing
samples unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ParameterError

Members = tuple[int, ...]


def substream(seed: int, *key) -> np.random.Generator:
    """Independent Philox stream for ``(seed, *key)``.

    Keys may mix integers and short strings; strings are folded to stable
    integers so that stream identities survive serialization.
    """
    ints = [int(seed)]
    for part in key:
        if isinstance(part, str):
            ints.append(int.from_bytes(part.encode("utf-8"), "big") % (2**63))
        else:
            ints.append(int(part))
    seq = np.random.SeedSequence(tuple(ints))
    return np.random.Generator(np.random.Philox(seq))


def required_samples(gamma_cap: float, epsilon: float, delta_conf: float) -> int:
    """Smallest scenario count giving CVaR error <= epsilon w.p. >= 1 - delta_conf.

    A Dvoretzky-Kiefer-Wolfowitz bound on the empirical CDF of a utility
    supported on ``[0, gamma_cap]``: the deviation event has probability at
    most ``2 exp(-2 n eps^2 / gamma^2)``, so ``n = ceil(gamma^2 / (2 eps^2)
    * ln(2 / delta))`` suffices.
    """
    if gamma_cap <= 0:
        raise ParameterError(f"gamma_cap must be > 0, got {gamma_cap}")
    if not 0 < epsilon <= 1:
        raise ParameterError(f"epsilon must be in (0, 1], got {epsilon}")
    if not 0 < delta_conf < 1:
        raise ParameterError(f"delta_conf must be in (0, 1), got {delta_conf}")
    n = gamma_cap**2 / (2.0 * epsilon**2) * math.log(2.0 / delta_conf)
    return max(1, math.ceil(n))


@dataclass(frozen=True)
class RiskParams:
    """Solver parameters: risk level, threshold range and grid, sampling error.

    ``epsilon``/``delta_conf`` are only needed when the scenario count is
    being sized from them; ``epsilon`` also feeds the optimality certificate
    (0 is used in exact-expectation mode).
    """

    alpha: float
    gamma_cap: float
    delta_step: float
    epsilon: Optional[float] = None
    delta_conf: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0 < self.alpha <= 1:
            raise ParameterError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.gamma_cap <= 0:
            raise ParameterError(f"gamma_cap must be > 0, got {self.gamma_cap}")
        if not 0 < self.delta_step <= self.gamma_cap:
            raise ParameterError(
                f"delta_step must be in (0, gamma_cap], got {self.delta_step}"
            )
        if self.epsilon is not None and not 0 < self.epsilon <= 1:
            raise ParameterError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if self.delta_conf is not None and not 0 < self.delta_conf < 1:
            raise ParameterError(f"delta_conf must be in (0, 1), got {self.delta_conf}")

    def grid_index_count(self) -> int:
        """Number of grid points: indices 0 .. ceil(gamma/delta) inclusive."""
        return math.ceil(self.gamma_cap / self.delta_step) + 1

    def tau_grid(self) -> list[float]:
        """Thresholds ``i * delta_step``; the last may slightly exceed the cap."""
        return [i * self.delta_step for i in range(self.grid_index_count())]

    def scenario_count(self) -> int:
        if self.epsilon is None or self.delta_conf is None:
            raise ParameterError("epsilon and delta_conf required to size scenarios")
        return required_samples(self.gamma_cap, self.epsilon, self.delta_conf)


def _tail_count(n: int, alpha: float) -> int:
    # round() kills float noise in alpha*n (e.g. 0.3*10) without disturbing
    # genuinely fractional products.
    return max(1, math.ceil(round(alpha * n, 9)))


@dataclass(frozen=True)
class CvarEstimate:
    """Empirical lower-tail summary: VaR, CVaR and the tail size used."""

    var: float
    cvar: float
    tail_count: int


def estimate_var(values: Sequence[float], alpha: float) -> float:
    """Left endpoint of the empirical alpha-quantile (k-th smallest, k = ceil(alpha n))."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ParameterError("cannot estimate VaR of an empty sample")
    if not 0 < alpha <= 1:
        raise ParameterError(f"alpha must be in (0, 1], got {alpha}")
    k = _tail_count(arr.size, alpha)
    return float(np.partition(arr, k - 1)[k - 1])


def estimate_cvar(values: Sequence[float], alpha: float) -> CvarEstimate:
    """Mean of the ``ceil(alpha n)`` smallest outcomes, with its VaR.

    Exactly ``ceil(alpha n)`` order statistics enter the tail, also under
    ties; the discrepancy against the measure-theoretic conditional tail
    vanishes as the sample grows.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ParameterError("cannot estimate CVaR of an empty sample")
    if not 0 < alpha <= 1:
        raise ParameterError(f"alpha must be in (0, 1], got {alpha}")
    k = _tail_count(arr.size, alpha)
    tail = np.partition(arr, k - 1)[:k]
    return CvarEstimate(var=float(tail.max()), cvar=float(tail.mean()), tail_count=k)


class ScenarioTable:
    """Fixed outcome model mapping a set to utility outcomes with weights.

    ``outcomes(members)`` returns ``(values, weights)`` where ``weights`` sum
    to one.  Sampled tables weight ``n_scenarios`` draws uniformly; exact
    tables enumerate the support of the utility distribution.  Evaluations
    must be pure: the same set always yields the same arrays.
    """

    n_scenarios: int
    seed: Optional[int]

    def outcomes(self, members: Members) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def outcomes_with_each(
        self, members: Members, candidates: Sequence[int]
    ) -> tuple[np.ndarray, np.ndarray]:
        """Outcome values of ``members + (c,)`` for every candidate ``c``.

        Returns ``(values, weights)`` where ``values`` has one row per
        candidate and ``weights`` broadcasts against it.  The generic
        implementation loops; structured tables override it with one
        vectorized pass.
        """
        rows = []
        weights = None
        for c in candidates:
            v, w = self.outcomes(members + (c,))
            rows.append(v)
            weights = w
        assert weights is not None
        return np.stack(rows), weights


class SampledScenarioTable(ScenarioTable):
    """Equal-weight panel of ``n_scenarios`` draws; subclasses provide values."""

    def __init__(self, n_scenarios: int, seed: Optional[int]):
        if n_scenarios < 1:
            raise ParameterError(f"need at least one scenario, got {n_scenarios}")
        self.n_scenarios = int(n_scenarios)
        self.seed = seed
        self._weights = np.full(self.n_scenarios, 1.0 / self.n_scenarios)

    def values(self, members: Members) -> np.ndarray:
        """Per-scenario utilities, ascending scenario index."""
        raise NotImplementedError

    def outcomes(self, members: Members) -> tuple[np.ndarray, np.ndarray]:
        return self.values(members), self._weights


def h_from_outcomes(
    values: np.ndarray, weights: np.ndarray, tau: float, alpha: float
) -> float:
    """Auxiliary objective from explicit outcomes: tau - E[(tau - f)_+] / alpha."""
    hinge = np.maximum(tau - values, 0.0)
    return float(tau - np.sum(weights * hinge, axis=-1) / alpha)


def auxiliary_h(members: Members, tau: float, table: ScenarioTable, alpha: float) -> float:
    """Sampled auxiliary objective at ``(members, tau)``.

    For a fixed table this is monotone and submodular in the set and
    piecewise-linear concave in ``tau`` with slopes in ``[1 - 1/alpha, 1]``;
    its maximum over ``tau`` recovers the empirical CVaR of the set.
    """
    if tau < 0:
        raise ParameterError(f"tau must be >= 0, got {tau}")
    if not 0 < alpha <= 1:
        raise ParameterError(f"alpha must be in (0, 1], got {alpha}")
    values, weights = table.outcomes(members)
    return h_from_outcomes(values, weights, tau, alpha)


def h_at_empty(tau: float, alpha: float) -> float:
    """Closed form of the auxiliary objective at the empty set: tau (1 - 1/alpha)."""
    return tau * (1.0 - 1.0 / alpha)
