"""Evolutionary solver for the broker placement problem.

The engine works on 0-based ``(P, n)`` integer arrays (one row per
chromosome, separate arrays for the instance-type row and the provider row).
The public per-placement operators below wrap the same array kernels, so the
unit tests exercise exactly the code that :func:`solve` runs.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .market import MarketArrays, MarketState, TenantRequest, check_market, required_per_provider, validate_request
from .placement import (
    ObjectiveBounds,
    ObjectiveVector,
    Placement,
    PlacementError,
    bounds_mask,
    dominance_matrix,
    evaluate_batch,
    mutual_dominance,
    gains,
)


class InfeasibleError(ValueError):
    """The load-balancing floor cannot be met for the requested VM count."""


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an integer seed, a SeedSequence or None."""
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class SolverParams:
    population_size: int = 50
    generations: int = 200
    seed: int = 0
    mutation_rate_override: float | None = None

    def __post_init__(self) -> None:
        if self.population_size < 2:
            raise ValueError("population_size must be >= 2")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        rate = self.mutation_rate_override
        if rate is not None and not 0 <= rate <= 1:
            raise ValueError("mutation_rate_override must lie in [0, 1]")

    def mutation_rate(self, n: int) -> float:
        return 1.0 / n if self.mutation_rate_override is None else self.mutation_rate_override


# -- array kernels --------------------------------------------------------------


def _random_population(size: int, n: int, arr: MarketArrays, rng: np.random.Generator):
    pairs = arr.available_pairs
    pick = pairs[rng.integers(len(pairs), size=(size, n))]
    return pick[..., 0], pick[..., 1]


def _draw_types(providers: np.ndarray, arr: MarketArrays, rng: np.random.Generator) -> np.ndarray:
    """Uniform available instance type at each given provider."""
    counts = arr.n_types_by_provider[providers]
    pos = (rng.random(counts.shape) * counts).astype(np.int64)
    return arr.types_by_provider[providers, pos]


def _mutate(types, providers, arr: MarketArrays, rate: float, rng: np.random.Generator):
    m = arr.available.shape[1]
    flip_p = rng.random(providers.shape) < rate
    new_p = np.where(flip_p, rng.integers(m, size=providers.shape), providers)
    flip_t = rng.random(types.shape) < rate
    # a provider flip may strand the old type on a provider that does not offer it
    redraw = flip_t | ~arr.available[types, new_p]
    new_t = np.where(redraw, _draw_types(new_p, arr, rng), types)
    return new_t, new_p


def _crossover(at, ap, bt, bp, rng: np.random.Generator):
    n = at.shape[1]
    cuts = rng.integers(1, n, size=at.shape[0])
    tail = np.arange(n)[None, :] >= cuts[:, None]
    return (
        np.where(tail, bt, at),
        np.where(tail, bp, ap),
        np.where(tail, at, bt),
        np.where(tail, ap, bp),
    )


def _repair(types, providers, arr: MarketArrays, loc_min: float, rng: np.random.Generator) -> np.ndarray:
    """Enforce the per-provider floor in place; returns the move count per row."""
    size, n = providers.shape
    m = arr.available.shape[1]
    need = required_per_provider(n, loc_min)
    if need * m > n:
        raise InfeasibleError(f"cannot place {need} of {n} VMs on each of {m} providers")
    moves = np.zeros(size, dtype=np.int64)
    if need == 0:
        return moves
    offsets = (providers + m * np.arange(size)[:, None]).ravel()
    counts = np.bincount(offsets, minlength=size * m).reshape(size, m)
    bad = np.flatnonzero(counts.min(axis=1) < need)
    if bad.size == 0:
        return moves
    # random keys rank the members of each provider; the lowest keys leave first
    keys = rng.random((bad.size, n))
    rows, vms, dests = [], [], []
    for r, key in zip(bad.tolist(), keys):
        c = counts[r].tolist()
        plan: dict[int, list[int]] = {}
        while min(c) < need:
            # ties go to the lowest provider index
            hi, lo = c.index(max(c)), c.index(min(c))
            plan.setdefault(hi, []).append(lo)
            c[hi] -= 1
            c[lo] += 1
        # a receiving provider never becomes the most loaded one, so the VMs
        # leaving a provider are a uniform sample without replacement of its
        # original members
        row_p = providers[r]
        for hi, targets in plan.items():
            members = np.flatnonzero(row_p == hi)
            leaving = members[np.argsort(key[members], kind="stable")[: len(targets)]]
            vms.extend(leaving.tolist())
            dests.extend(targets)
            rows.extend([r] * len(targets))
            moves[r] += len(targets)
    rows = np.asarray(rows, dtype=np.int64)
    vms = np.asarray(vms, dtype=np.int64)
    dests = np.asarray(dests, dtype=np.int64)
    providers[rows, vms] = dests
    types[rows, vms] = _draw_types(dests, arr, rng)
    return moves


def rank_and_crowding(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fast non-dominated sorting plus crowding distance on gain rows.

    Returns 1-based front ranks and per-front crowding distances (boundary
    points of every front get ``inf``).
    """
    N = g.shape[0]
    rank = np.zeros(N, dtype=np.int64)
    crowd = np.zeros(N)
    if N == 0:
        return rank, crowd
    D = dominance_matrix(g)
    dominated_by = D.sum(axis=0)
    front = np.flatnonzero(dominated_by == 0)
    r = 1
    while front.size:
        rank[front] = r
        dominated_by[front] = -1
        dominated_by -= D[front].sum(axis=0)
        front = np.flatnonzero(dominated_by == 0)
        r += 1
    for r in range(1, rank.max() + 1):
        idx = np.flatnonzero(rank == r)
        crowd[idx] = _crowding(g[idx])
    return rank, crowd


def _crowding(g: np.ndarray) -> np.ndarray:
    size = g.shape[0]
    cd = np.zeros(size)
    if size <= 2:
        cd[:] = np.inf
        return cd
    for obj in range(g.shape[1]):
        order = np.argsort(g[:, obj], kind="stable")
        vals = g[order, obj]
        cd[order[0]] = cd[order[-1]] = np.inf
        span = vals[-1] - vals[0]
        if span > 0:
            cd[order[1:-1]] += (vals[2:] - vals[:-2]) / span
    return cd


def _tournament(rank, crowd, size: int, rng: np.random.Generator) -> np.ndarray:
    N = rank.size
    a = rng.integers(N, size=size)
    b = rng.integers(N, size=size)
    coin = rng.random(size) < 0.5
    a_wins = (rank[a] < rank[b]) | (
        (rank[a] == rank[b]) & ((crowd[a] > crowd[b]) | ((crowd[a] == crowd[b]) & coin))
    )
    return np.where(a_wins, a, b)


class _ArchiveBuffer:
    """Mutable array-backed non-dominated archive used inside a solve."""

    def __init__(self, n: int, m: int, types=None, providers=None, objectives=None, bounds_met=False):
        self.m = m
        self.types = np.empty((0, n), dtype=np.int64) if types is None else np.array(types, dtype=np.int64)
        self.providers = (
            np.empty((0, n), dtype=np.int64) if providers is None else np.array(providers, dtype=np.int64)
        )
        self.objectives = np.empty((0, 7)) if objectives is None else np.array(objectives, dtype=float)
        self.bounds_met = bounds_met
        self.key_set = {row.tobytes() for row in self._codes(self.types, self.providers)}

    def __len__(self) -> int:
        return self.types.shape[0]

    def _codes(self, types, providers) -> np.ndarray:
        return (types * self.m + providers).astype(np.int32)

    def _keep(self, mask: np.ndarray) -> None:
        drop = ~mask
        self.key_set.difference_update(
            row.tobytes() for row in self._codes(self.types[drop], self.providers[drop])
        )
        self.types = self.types[mask]
        self.providers = self.providers[mask]
        self.objectives = self.objectives[mask]

    def update(self, types, providers, objectives, bounds: ObjectiveBounds) -> None:
        inside = bounds_mask(objectives, bounds)
        if not self.bounds_met and inside.any():
            # dominators of in-bounds points are in bounds too, so filtering the
            # unfiltered front loses nothing
            self._keep(bounds_mask(self.objectives, bounds))
            self.bounds_met = True
        cand = np.flatnonzero(inside) if self.bounds_met else np.arange(types.shape[0])
        fresh, keys, seen = [], [], set()
        codes = self._codes(types[cand], providers[cand])
        for i, code in zip(cand, codes):
            key = code.tobytes()
            if key in self.key_set or key in seen:
                continue
            seen.add(key)
            fresh.append(i)
            keys.append(key)
        if not fresh:
            return
        fresh = np.asarray(fresh)
        gc = gains(objectives[fresh])
        beaten = dominance_matrix(gc).any(axis=0)
        if len(self):
            arch_wins, cand_wins = mutual_dominance(gains(self.objectives), gc)
            beaten |= arch_wins.any(axis=0)
            lost = cand_wins.any(axis=1)
            if lost.any():
                self._keep(~lost)
        if beaten.all():
            return
        win = fresh[~beaten]
        self.types = np.concatenate([self.types, types[win]])
        self.providers = np.concatenate([self.providers, providers[win]])
        self.objectives = np.concatenate([self.objectives, objectives[win]])
        self.key_set.update(k for k, b in zip(keys, beaten) if not b)

    def freeze(self) -> ParetoArchive:
        return ParetoArchive(self.types, self.providers, self.objectives, self.bounds_met)


# -- public types -----------------------------------------------------------------


class ParetoArchive:
    """Mutually non-dominated, duplicate-free set of (placement, objectives).

    Stored column-wise as 0-based arrays; :attr:`entries` materializes
    :class:`Placement` objects on demand.
    """

    def __init__(self, types, providers, objectives, bounds_met: bool):
        self.types = np.array(types, dtype=np.int64, copy=True)
        self.providers = np.array(providers, dtype=np.int64, copy=True)
        self.objectives = np.array(objectives, dtype=float, copy=True).reshape(-1, 7)
        self.bounds_met = bool(bounds_met)
        for a in (self.types, self.providers, self.objectives):
            a.setflags(write=False)

    @classmethod
    def empty(cls, n: int = 0) -> ParetoArchive:
        return cls(np.empty((0, n)), np.empty((0, n)), np.empty((0, 7)), False)

    @classmethod
    def from_entries(cls, entries: Sequence[tuple[Placement, ObjectiveVector]], bounds_met: bool) -> ParetoArchive:
        if not entries:
            return cls.empty()
        arrays = [p.arrays() for p, _ in entries]
        return cls(
            np.stack([a[0] for a in arrays]),
            np.stack([a[1] for a in arrays]),
            np.array([[getattr(v, f) for f in _VECTOR_FIELDS] for _, v in entries]),
            bounds_met,
        )

    def __len__(self) -> int:
        return self.objectives.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParetoArchive):
            return NotImplemented
        return (
            self.bounds_met == other.bounds_met
            and np.array_equal(self.types, other.types)
            and np.array_equal(self.providers, other.providers)
            and np.array_equal(self.objectives, other.objectives)
        )

    __hash__ = None

    def placement(self, i: int) -> Placement:
        return Placement.from_arrays(self.types[i], self.providers[i])

    def vector(self, i: int) -> ObjectiveVector:
        return ObjectiveVector.from_row(self.objectives[i])

    @cached_property
    def entries(self) -> list[tuple[Placement, ObjectiveVector]]:
        return [(self.placement(i), self.vector(i)) for i in range(len(self))]

    @property
    def front(self) -> np.ndarray:
        """``(N, 3)`` array of (f1, f2, f3)."""
        return self.objectives[:, :3]


_VECTOR_FIELDS = ("f1_ticpu", "f2_timem", "f3_tip", "raw_ticpu", "raw_timem", "ro_cpu", "ro_mem")


@dataclass(frozen=True)
class RankedPopulation:
    individuals: list[tuple[Placement, ObjectiveVector, int, float]]

    @property
    def ranks(self) -> np.ndarray:
        return np.array([ind[2] for ind in self.individuals], dtype=np.int64)

    @property
    def crowding(self) -> np.ndarray:
        return np.array([ind[3] for ind in self.individuals], dtype=float)

    def front(self, rank: int = 1) -> list[tuple[Placement, ObjectiveVector, int, float]]:
        return [ind for ind in self.individuals if ind[2] == rank]


# -- public operators -------------------------------------------------------------


def random_placement(n: int, state: MarketState, rng) -> Placement:
    """Assign every VM a uniformly drawn available (type, provider) offer."""
    t, p = _random_population(1, n, state.arrays, as_generator(rng))
    return Placement.from_arrays(t[0], p[0])


def repair(p: Placement, state: MarketState, loc_min: float, rng, *, return_moves: bool = False):
    """Move random VMs from the most- to the least-loaded provider until every
    provider meets ``loc_min``.  Moved VMs get a fresh type available at the
    destination.  Feasible placements are returned unchanged."""
    t, k = p.arrays()
    t, k = t[None, :].copy(), k[None, :].copy()
    moves = int(_repair(t, k, state.arrays, loc_min, as_generator(rng))[0])
    out = p if moves == 0 else Placement.from_arrays(t[0], k[0])
    return (out, moves) if return_moves else out


def crossover(a: Placement, b: Placement, rng) -> tuple[Placement, Placement]:
    """Single-point cut; both chromosome rows are cut at the same column."""
    if len(a) != len(b):
        raise PlacementError(f"parents differ in length ({len(a)} vs {len(b)})")
    if len(a) < 2:
        raise PlacementError("crossover needs at least two VMs")
    at, ap = (x[None, :] for x in a.arrays())
    bt, bp = (x[None, :] for x in b.arrays())
    c1t, c1p, c2t, c2p = _crossover(at, ap, bt, bp, as_generator(rng))
    return Placement.from_arrays(c1t[0], c1p[0]), Placement.from_arrays(c2t[0], c2p[0])


def mutate(p: Placement, state: MarketState, rate: float, rng) -> Placement:
    """Re-draw each of the 2n chromosome cells with probability ``rate``."""
    if not 0 <= rate <= 1:
        raise ValueError("rate must lie in [0, 1]")
    t, k = p.arrays()
    nt, nk = _mutate(t[None, :], k[None, :], state.arrays, rate, as_generator(rng))
    return Placement.from_arrays(nt[0], nk[0])


def non_dominated_sort(pop: Sequence[tuple[Placement, ObjectiveVector]]) -> RankedPopulation:
    if not pop:
        return RankedPopulation([])
    g = gains(np.array([v.as_tuple() for _, v in pop]))
    rank, crowd = rank_and_crowding(g)
    return RankedPopulation(
        [(p, v, int(r), float(c)) for (p, v), r, c in zip(pop, rank, crowd)]
    )


def binary_tournament(ranked: RankedPopulation, rng) -> Placement:
    if not ranked.individuals:
        raise ValueError("empty population")
    i = _tournament(ranked.ranks, ranked.crowding, 1, as_generator(rng))[0]
    return ranked.individuals[i][0]


def update_archive(
    archive: ParetoArchive,
    candidates: Sequence[tuple[Placement, ObjectiveVector]],
    bounds: ObjectiveBounds,
) -> ParetoArchive:
    if not candidates:
        return archive
    cand = ParetoArchive.from_entries(candidates, False)
    n = cand.types.shape[1]
    if len(archive) and archive.types.shape[1] != n:
        raise PlacementError("candidates and archive differ in VM count")
    m = int(max(cand.providers.max(initial=0), archive.providers.max(initial=0))) + 1
    if len(archive):
        buf = _ArchiveBuffer(n, m, archive.types, archive.providers, archive.objectives, archive.bounds_met)
    else:
        buf = _ArchiveBuffer(n, m, bounds_met=archive.bounds_met)
    buf.update(cand.types, cand.providers, cand.objectives, bounds)
    return buf.freeze()


def solve(
    prev: Placement | None,
    state: MarketState,
    request: TenantRequest,
    params: SolverParams = SolverParams(),
    rng=None,
) -> ParetoArchive:
    """Evolve a Pareto archive of feasible placements for ``request`` on ``state``.

    ``prev`` is the placement currently deployed; it only enters through the
    reconfiguration overhead terms.  ``rng`` defaults to ``params.seed``.
    """
    check_market(state)
    problems = validate_request(request, state.m)
    if problems:
        raise InfeasibleError("; ".join(str(v) for v in problems))
    rng = as_generator(params.seed if rng is None else rng)
    arr = state.arrays
    n, P = request.vm_count, params.population_size
    l, m = arr.available.shape
    prev_arrays = None
    if prev is not None:
        pt, pp = prev.arrays()
        if pt.size and not ((0 <= pt).all() and (pt < l).all() and (0 <= pp).all() and (pp < m).all()):
            raise PlacementError("previous placement cannot be decoded against this market")
        prev_arrays = (pt, pp)
    bounds = ObjectiveBounds.from_request(request)
    rate = params.mutation_rate(n)

    def evaluate(t, p):
        return evaluate_batch(t, p, state, request.horizon_hours, prev_arrays)

    pop_t, pop_p = _random_population(P, n, arr, rng)
    _repair(pop_t, pop_p, arr, request.loc_min, rng)
    pop_f = evaluate(pop_t, pop_p)
    archive = _ArchiveBuffer(n, m)
    archive.update(pop_t, pop_p, pop_f, bounds)
    rank, crowd = rank_and_crowding(gains(pop_f))

    pairs = (P + 1) // 2
    for _ in range(params.generations):
        A = len(archive)
        pool = _tournament(
            np.concatenate([rank, np.ones(A, dtype=np.int64)]),
            np.concatenate([crowd, np.full(A, np.inf)]),
            2 * pairs,
            rng,
        )
        in_pop = pool < P
        par_t = np.empty((2 * pairs, n), dtype=np.int64)
        par_p = np.empty_like(par_t)
        par_t[in_pop], par_p[in_pop] = pop_t[pool[in_pop]], pop_p[pool[in_pop]]
        from_arch = pool[~in_pop] - P
        par_t[~in_pop], par_p[~in_pop] = archive.types[from_arch], archive.providers[from_arch]

        if n >= 2:
            c1t, c1p, c2t, c2p = _crossover(par_t[0::2], par_p[0::2], par_t[1::2], par_p[1::2], rng)
            off_t = np.empty_like(par_t)
            off_p = np.empty_like(par_p)
            off_t[0::2], off_t[1::2] = c1t, c2t
            off_p[0::2], off_p[1::2] = c1p, c2p
        else:
            off_t, off_p = par_t, par_p
        off_t, off_p = off_t[:P], off_p[:P]
        off_t, off_p = _mutate(off_t, off_p, arr, rate, rng)
        _repair(off_t, off_p, arr, request.loc_min, rng)
        off_f = evaluate(off_t, off_p)
        archive.update(off_t, off_p, off_f, bounds)

        all_t = np.concatenate([pop_t, off_t])
        all_p = np.concatenate([pop_p, off_p])
        all_f = np.concatenate([pop_f, off_f])
        r_all, c_all = rank_and_crowding(gains(all_f))
        keep = np.lexsort((-c_all, r_all))[:P]
        pop_t, pop_p, pop_f = all_t[keep], all_p[keep], all_f[keep]
        rank, crowd = r_all[keep], c_all[keep]

    return archive.freeze()
