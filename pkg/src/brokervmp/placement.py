"""Placement encoding, constraint checks, objective evaluation and Pareto relations.

Objective conventions: ``f1`` (CPU core-hours) and ``f2`` (memory GB-hours)
are maximized, ``f3`` (price over the horizon) is minimized.  Internally the
vectorized helpers work on "gain" triples ``(f1, f2, -f3)`` so that every axis
is maximized.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .market import PRICE_SCALE, MarketState, TenantRequest


class PlacementError(ValueError):
    pass


@dataclass(frozen=True)
class Placement:
    """Per-VM ``(instance type, provider)`` assignment, 1-based ids.

    ``types[i]`` and ``providers[i]`` are the two chromosome rows for VM ``i+1``.
    """

    types: tuple[int, ...]
    providers: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.types) != len(self.providers):
            raise PlacementError("type and provider rows differ in length")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> Placement:
        pairs = list(pairs)
        return cls(tuple(int(j) for j, _ in pairs), tuple(int(k) for _, k in pairs))

    @classmethod
    def from_arrays(cls, types0: np.ndarray, providers0: np.ndarray) -> Placement:
        """Build from 0-based index arrays."""
        return cls(tuple((np.asarray(types0) + 1).tolist()), tuple((np.asarray(providers0) + 1).tolist()))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """0-based ``(types, providers)`` int arrays."""
        return (
            np.asarray(self.types, dtype=np.int64) - 1,
            np.asarray(self.providers, dtype=np.int64) - 1,
        )

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.types, self.providers))

    def __len__(self) -> int:
        return len(self.types)

    def to_json(self, state: MarketState) -> list[list[str]]:
        return [
            [state.instance_types[j - 1].name, state.providers[k - 1]]
            for j, k in zip(self.types, self.providers)
        ]

    @classmethod
    def from_json(cls, pairs: Sequence[Sequence[str]], state: MarketState) -> Placement:
        return cls.from_pairs((state.type_index(t), state.provider_index(p)) for t, p in pairs)


@dataclass(frozen=True)
class ObjectiveVector:
    f1_ticpu: float
    f2_timem: float
    f3_tip: float
    raw_ticpu: float
    raw_timem: float
    ro_cpu: float = 0.0
    ro_mem: float = 0.0

    @classmethod
    def from_row(cls, row: Sequence[float]) -> ObjectiveVector:
        return cls(*(float(x) for x in row))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.f1_ticpu, self.f2_timem, self.f3_tip)


@dataclass(frozen=True)
class ObjectiveBounds:
    l1: float | None = None
    l2: float | None = None
    u3: float | None = None
    margin: float = 0.0

    @classmethod
    def from_request(cls, request: TenantRequest) -> ObjectiveBounds:
        return cls(
            request.expected_ticpu,
            request.expected_timem,
            request.expected_tip,
            request.tolerance_margin,
        )

    @property
    def effective(self) -> tuple[float, float, float]:
        """Relaxed ``(f1 floor, f2 floor, f3 ceiling)``; missing bounds are infinite."""
        lo1 = -np.inf if self.l1 is None else self.l1 * (1 - self.margin)
        lo2 = -np.inf if self.l2 is None else self.l2 * (1 - self.margin)
        hi3 = np.inf if self.u3 is None else self.u3 * (1 + self.margin)
        return lo1, lo2, hi3


# columns of the (N, 7) objective matrices produced by evaluate_batch
F1, F2, F3, RAW_CPU, RAW_MEM, RO_CPU, RO_MEM = range(7)


def evaluate_batch(
    types: np.ndarray,
    providers: np.ndarray,
    state: MarketState,
    horizon_hours: float,
    prev: tuple[np.ndarray, np.ndarray] | None = None,
) -> np.ndarray:
    """Objective rows for a population of 0-based ``(P, n)`` chromosomes.

    Reconfiguration overhead is charged per VM whose ``(type, provider)`` pair
    differs from ``prev``: release of the old offer plus allocation of the new
    one.  VMs beyond the previous length pay allocation only, and VMs of
    ``prev`` beyond the new length pay release only.
    """
    arr = state.arrays
    types = np.atleast_2d(types)
    providers = np.atleast_2d(providers)
    P, n = types.shape
    cpu = arr.cpu[types, providers]
    mem = arr.memory[types, providers]
    out = np.zeros((P, 7))
    out[:, RAW_CPU] = horizon_hours * cpu.sum(axis=1)
    out[:, RAW_MEM] = horizon_hours * mem.sum(axis=1)
    micros = arr.price_micros[types, providers].sum(axis=1)
    out[:, F3] = horizon_hours * micros / PRICE_SCALE
    if prev is not None:
        pt, pp = prev
        c = min(n, pt.size)
        alloc = arr.allocation[types, providers]
        rel = arr.release[pt, pp]
        rel_cpu = arr.cpu[pt, pp] * rel
        rel_mem = arr.memory[pt, pp] * rel
        changed = (types[:, :c] != pt[:c]) | (providers[:, :c] != pp[:c])
        ro_cpu = np.where(changed, rel_cpu[:c] + cpu[:, :c] * alloc[:, :c], 0.0).sum(axis=1)
        ro_mem = np.where(changed, rel_mem[:c] + mem[:, :c] * alloc[:, :c], 0.0).sum(axis=1)
        ro_cpu += (cpu[:, c:] * alloc[:, c:]).sum(axis=1) + rel_cpu[c:].sum()
        ro_mem += (mem[:, c:] * alloc[:, c:]).sum(axis=1) + rel_mem[c:].sum()
        out[:, RO_CPU] = ro_cpu
        out[:, RO_MEM] = ro_mem
    out[:, F1] = out[:, RAW_CPU] - out[:, RO_CPU]
    out[:, F2] = out[:, RAW_MEM] - out[:, RO_MEM]
    return out


def check_placement(
    placement: Placement,
    state: MarketState,
    prev: Placement | None = None,
    vm_count: int | None = None,
) -> None:
    """Raise :class:`PlacementError` unless ``placement`` is legal on ``state``.

    An unavailable offer is tolerated only for a VM that keeps its previous
    assignment during the instant in which that offer was withdrawn.
    """
    if vm_count is not None and len(placement) != vm_count:
        raise PlacementError(f"placement has {len(placement)} VMs, request needs {vm_count}")
    for i, (j, k) in enumerate(placement.pairs):
        if not (1 <= j <= state.l and 1 <= k <= state.m):
            raise PlacementError(f"VM {i + 1}: ({j}, {k}) outside the {state.l}x{state.m} market")
        offer = state.offer(j, k)
        if offer.available:
            continue
        kept = prev is not None and i < len(prev) and prev.pairs[i] == (j, k)
        if not (kept and offer.removed_at == state.instant):
            raise PlacementError(f"VM {i + 1}: offer ({j}, {k}) is not available at t={state.instant}")
    if prev is not None:
        for i, (j, k) in enumerate(prev.pairs):
            if not (1 <= j <= state.l and 1 <= k <= state.m):
                raise PlacementError(f"previous VM {i + 1}: ({j}, {k}) cannot be decoded")


def evaluate_objectives(
    prev: Placement | None,
    next: Placement,
    state: MarketState,
    request: TenantRequest,
) -> ObjectiveVector:
    """Objectives of deploying ``next`` for ``request.horizon_hours`` after ``prev``."""
    check_placement(next, state, prev)
    t, p = next.arrays()
    row = evaluate_batch(t[None, :], p[None, :], state, request.horizon_hours,
                         None if prev is None else prev.arrays())
    return ObjectiveVector.from_row(row[0])


def reconfigured_count(prev: Placement | None, next: Placement) -> int:
    """VMs that pay overhead: changed pairs plus added and removed slots."""
    if prev is None:
        return 0
    c = min(len(prev), len(next))
    changed = sum(a != b for a, b in zip(prev.pairs[:c], next.pairs[:c]))
    return changed + abs(len(next) - len(prev))


def provider_counts(placement: Placement, m: int) -> list[int]:
    counts = Counter(placement.providers)
    return [counts.get(k, 0) for k in range(1, m + 1)]


def check_load_balancing(placement: Placement, m: int, loc_min: float) -> bool:
    """True iff every provider hosts at least ``loc_min`` of the VMs."""
    n = len(placement)
    if n == 0:
        raise PlacementError("empty placement")
    return all(c / n >= loc_min for c in provider_counts(placement, m))


# -- relations ----------------------------------------------------------------


def _triple(v) -> tuple[float, float, float]:
    if isinstance(v, ObjectiveVector):
        return v.as_tuple()
    f1, f2, f3 = v
    return f1, f2, f3


def dominates(a, b) -> bool:
    """Pareto dominance with f1, f2 maximized and f3 minimized."""
    a1, a2, a3 = _triple(a)
    b1, b2, b3 = _triple(b)
    if a1 >= b1 and a2 >= b2 and a3 <= b3:
        return a1 > b1 or a2 > b2 or a3 < b3
    return False


class Preference(enum.Enum):
    A = "a-preferred"
    B = "b-preferred"
    TIE = "tie"


def objective_wins(a, b) -> tuple[int, int]:
    """Number of objectives in which ``a`` beats ``b`` and vice versa."""
    a1, a2, a3 = _triple(a)
    b1, b2, b3 = _triple(b)
    # int() first: numpy bools add as logical or
    wa = int(a1 > b1) + int(a2 > b2) + int(a3 < b3)
    wb = int(b1 > a1) + int(b2 > a2) + int(b3 < a3)
    return wa, wb


def preference(a, b) -> Preference:
    wa, wb = objective_wins(a, b)
    if wa > wb:
        return Preference.A
    if wb > wa:
        return Preference.B
    return Preference.TIE


def within_bounds(v, bounds: ObjectiveBounds) -> bool:
    f1, f2, f3 = _triple(v)
    lo1, lo2, hi3 = bounds.effective
    return bool(f1 >= lo1 and f2 >= lo2 and f3 <= hi3)


def gains(objectives: np.ndarray) -> np.ndarray:
    """``(N, 3)`` maximize-all view of objective rows (f1, f2, -f3)."""
    objectives = np.asarray(objectives, dtype=float)
    g = objectives[:, :3].copy()
    g[:, 2] = -g[:, 2]
    return g


def dominance_matrix(g: np.ndarray, h: np.ndarray | None = None) -> np.ndarray:
    """``D[i, j]`` is True iff gain row ``g[i]`` dominates ``h[j]`` (``h`` defaults to ``g``)."""
    return mutual_dominance(g, g if h is None else h)[0]


def mutual_dominance(g: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(g_dominates_h, h_dominates_g)`` as ``(len(g), len(h))`` boolean matrices."""
    ge = le = eq = None
    for obj in range(g.shape[1]):
        a = g[:, obj, None]
        b = h[None, :, obj]
        ge_o, le_o = a >= b, a <= b
        if ge is None:
            ge, le, eq = ge_o, le_o, ge_o & le_o
        else:
            ge &= ge_o
            le &= le_o
            eq &= ge_o & le_o
    return ge & ~eq, le & ~eq


def bounds_mask(objectives: np.ndarray, bounds: ObjectiveBounds) -> np.ndarray:
    lo1, lo2, hi3 = bounds.effective
    o = np.asarray(objectives)
    return (o[:, F1] >= lo1) & (o[:, F2] >= lo2) & (o[:, F3] <= hi3)
