"""scikit-learn style front end to the placement solver."""
from __future__ import annotations

import numbers

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted, check_scalar

from .market import MarketState, TenantRequest
from .moea import ParetoArchive, SolverParams, as_generator, solve
from .placement import ObjectiveVector, Placement
from .selection import SelectionStrategy, select


class ParetoPlacementOptimizer(BaseEstimator):
    """Evolve a Pareto archive of VM placements and pick one to deploy.

    Parameters
    ----------
    population_size : int, default=50
    generations : int, default=200
    mutation_rate : float or None, default=None
        Per-cell mutation probability; ``None`` means ``1 / n``.
    strategy : str, default="preferred"
        Selection rule used by :meth:`select` (``random``, ``distance``,
        ``preferred``, ``max-ticpu``, ``max-timem``, ``min-tip``).
    raw_distance : bool, default=False
        Use un-normalized axes for the ``distance`` strategy.
    random_state : int, Generator or None

    Attributes
    ----------
    archive_ : ParetoArchive
    front_ : ndarray of shape (n_solutions, 3)
        ``(TICPU, TIMEM, TIP)`` of every archived placement.
    n_solutions_ : int
    """

    def __init__(
        self,
        population_size=50,
        generations=200,
        mutation_rate=None,
        strategy="preferred",
        raw_distance=False,
        random_state=None,
    ):
        self.population_size = population_size
        self.generations = generations
        self.mutation_rate = mutation_rate
        self.strategy = strategy
        self.raw_distance = raw_distance
        self.random_state = random_state

    def _solver_params(self) -> SolverParams:
        check_scalar(self.population_size, "population_size", numbers.Integral, min_val=2)
        check_scalar(self.generations, "generations", numbers.Integral, min_val=1)
        if self.mutation_rate is not None:
            check_scalar(self.mutation_rate, "mutation_rate", numbers.Real, min_val=0, max_val=1)
        return SolverParams(
            population_size=int(self.population_size),
            generations=int(self.generations),
            mutation_rate_override=self.mutation_rate,
        )

    def fit(self, market: MarketState, request: TenantRequest, prev: Placement | None = None):
        params = self._solver_params()
        self._strategy = SelectionStrategy.parse(self.strategy)
        self._rng = as_generator(self.random_state)
        self.archive_: ParetoArchive = solve(prev, market, request, params, self._rng)
        self.front_ = self.archive_.front.copy()
        self.n_solutions_ = len(self.archive_)
        return self

    def select(self, strategy: str | None = None) -> tuple[Placement, ObjectiveVector]:
        check_is_fitted(self, "archive_")
        chosen = self._strategy if strategy is None else SelectionStrategy.parse(strategy)
        return select(self.archive_, chosen, self._rng, raw_distance=self.raw_distance)

    def fit_select(self, market: MarketState, request: TenantRequest, prev: Placement | None = None):
        return self.fit(market, request, prev).select()
