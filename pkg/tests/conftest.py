from __future__ import annotations

from decimal import Decimal
from pathlib import Path

import numpy as np
import pytest

from brokervmp.market import (
    InstanceTypeSpec,
    MarketState,
    ProviderOffer,
    TenantRequest,
    read_market,
)

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="session")
def market() -> MarketState:
    """Five-type, three-provider catalog shipped in scenarios/market.json."""
    return read_market(SCENARIOS / "market.json")


@pytest.fixture(scope="session")
def exp1_path() -> Path:
    return SCENARIOS / "experiment1.json"


@pytest.fixture(scope="session")
def exp2_path() -> Path:
    return SCENARIOS / "experiment2.json"


def make_market(
    rng: np.random.Generator,
    l: int,
    m: int,
    *,
    max_cpu: int = 8,
    max_mem: int = 32,
    unavailable: float = 0.0,
) -> MarketState:
    """Random valid market; every provider keeps at least one available offer."""
    types = tuple(
        InstanceTypeSpec(j, f"t{j}", int(rng.integers(1, max_cpu + 1)), int(rng.integers(1, max_mem + 1)))
        for j in range(1, l + 1)
    )
    avail = rng.random((l, m)) >= unavailable
    for k in range(m):
        if not avail[:, k].any():
            avail[rng.integers(l), k] = True
    offers = tuple(
        tuple(
            ProviderOffer(
                k,
                j,
                Decimal(int(rng.integers(1, 1000))) / 1000,
                float(rng.integers(0, 120)) / 3600,
                float(rng.integers(0, 60)) / 3600,
                available=bool(avail[j - 1, k - 1]),
                removed_at=None if avail[j - 1, k - 1] else 1,
            )
            for k in range(1, m + 1)
        )
        for j in range(1, l + 1)
    )
    return MarketState(1, tuple(f"P{k}" for k in range(1, m + 1)), types, offers)


def request(n: int, loc_min: float = 0.0, horizon: float = 24.0, **bounds) -> TenantRequest:
    return TenantRequest(vm_count=n, horizon_hours=horizon, loc_min=loc_min, **bounds)
