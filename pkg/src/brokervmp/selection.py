"""Rules for deploying exactly one solution out of a Pareto archive."""
from __future__ import annotations

import enum

import numpy as np

from .moea import ParetoArchive, as_generator
from .placement import ObjectiveVector, Placement


class SelectionStrategy(enum.Enum):
    S1_Random = "random"
    S2_MinDistance = "distance"
    S3_Preferred = "preferred"
    S4_MaxTICPU = "max-ticpu"
    S5_MaxTIMEM = "max-timem"
    S6_MinTIP = "min-tip"

    @property
    def number(self) -> int:
        """1-based position in the canonical S1..S6 order."""
        return list(SelectionStrategy).index(self) + 1

    @property
    def label(self) -> str:
        return f"S{self.number}"

    @property
    def title(self) -> str:
        return _TITLES[self]

    @classmethod
    def parse(cls, name: str) -> SelectionStrategy:
        """Accept CLI names (``preferred``), labels (``S3``) or member names."""
        key = name.strip()
        for s in cls:
            if key in (s.value, s.name) or key.upper() == s.label:
                return s
        raise ValueError(
            f"unknown strategy {name!r}; choose from {', '.join(s.value for s in cls)}"
        )

    @classmethod
    def parse_list(cls, spec: str) -> list[SelectionStrategy]:
        if spec.strip() == "all":
            return list(cls)
        out = [cls.parse(part) for part in spec.split(",") if part.strip()]
        if not out:
            raise ValueError("no strategy given")
        return out


_TITLES = {
    SelectionStrategy.S1_Random: "Random",
    SelectionStrategy.S2_MinDistance: "Distance",
    SelectionStrategy.S3_Preferred: "Preferred",
    SelectionStrategy.S4_MaxTICPU: "Maximum TICPU",
    SelectionStrategy.S5_MaxTIMEM: "Maximum TIMEM",
    SelectionStrategy.S6_MinTIP: "Minimum TIP",
}


def _pick(candidates: np.ndarray, rng: np.random.Generator) -> int:
    if candidates.size == 1:
        return int(candidates[0])
    return int(candidates[rng.integers(candidates.size)])


def distances_to_origin(front: np.ndarray, *, normalize: bool = True) -> np.ndarray:
    """Euclidean distance to the ideal corner with every axis minimized.

    f1 and f2 become shortfalls from the archive maximum; f3 is kept.  With
    ``normalize`` each axis is min-max scaled over the archive first.
    """
    z = np.asarray(front, dtype=float)[:, :3].copy()
    z[:, 0] = z[:, 0].max() - z[:, 0]
    z[:, 1] = z[:, 1].max() - z[:, 1]
    if normalize:
        lo = z.min(axis=0)
        span = z.max(axis=0) - lo
        z = np.divide(z - lo, span, out=np.zeros_like(z), where=span > 0)
    return np.sqrt((z * z).sum(axis=1))


def preference_wins(front: np.ndarray) -> np.ndarray:
    """For each entry, the number of other entries it is preferred over."""
    f = np.asarray(front, dtype=float)[:, :3]
    wins = np.zeros(f.shape[0], dtype=np.int64)
    # row blocks keep the pairwise matrices small for large archives
    step = 512
    for start in range(0, f.shape[0], step):
        a = f[start : start + step]
        a_better = (
            (a[:, None, 0] > f[None, :, 0]).astype(np.int8)
            + (a[:, None, 1] > f[None, :, 1])
            + (a[:, None, 2] < f[None, :, 2])
        )
        b_better = (
            (a[:, None, 0] < f[None, :, 0]).astype(np.int8)
            + (a[:, None, 1] < f[None, :, 1])
            + (a[:, None, 2] > f[None, :, 2])
        )
        wins[start : start + step] = (a_better > b_better).sum(axis=1)
    return wins


def select_index(front: np.ndarray, strategy: SelectionStrategy, rng=None, *, raw_distance: bool = False) -> int:
    """Index of the entry of an ``(N, 3)`` objective array chosen by ``strategy``."""
    f = np.asarray(front, dtype=float)
    if f.ndim != 2 or f.shape[0] == 0:
        raise ValueError("cannot select from an empty archive")
    rng = as_generator(rng)
    if strategy is SelectionStrategy.S1_Random:
        return int(rng.integers(f.shape[0]))
    if strategy is SelectionStrategy.S2_MinDistance:
        d = distances_to_origin(f, normalize=not raw_distance)
        return _pick(np.flatnonzero(d == d.min()), rng)
    if strategy is SelectionStrategy.S3_Preferred:
        wins = preference_wins(f)
        best = np.flatnonzero(wins == wins.max())
        # higher f1, then higher f2, then lower f3, then lowest index
        order = np.lexsort((best, f[best, 2], -f[best, 1], -f[best, 0]))
        return int(best[order[0]])
    if strategy is SelectionStrategy.S4_MaxTICPU:
        return _pick(np.flatnonzero(f[:, 0] == f[:, 0].max()), rng)
    if strategy is SelectionStrategy.S5_MaxTIMEM:
        return _pick(np.flatnonzero(f[:, 1] == f[:, 1].max()), rng)
    if strategy is SelectionStrategy.S6_MinTIP:
        return _pick(np.flatnonzero(f[:, 2] == f[:, 2].min()), rng)
    raise ValueError(f"unknown strategy {strategy!r}")


def select(
    archive: ParetoArchive,
    strategy: SelectionStrategy,
    rng=None,
    *,
    raw_distance: bool = False,
) -> tuple[Placement, ObjectiveVector]:
    if len(archive) == 0:
        raise ValueError("cannot select from an empty archive")
    i = select_index(archive.front, strategy, rng, raw_distance=raw_distance)
    return archive.placement(i), archive.vector(i)
