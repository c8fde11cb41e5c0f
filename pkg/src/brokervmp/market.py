"""Multi-cloud market model: instance types, provider offers, tenant demand.

A :class:`MarketState` is an immutable snapshot of the catalog at one
instant.  Offers live on a dense ``(instance type, provider)`` grid; removing
an instance type only flips the ``available`` flag so that placements that
still reference it can be costed while they are being torn down.
"""
from __future__ import annotations

import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from functools import cached_property
from pathlib import Path
from typing import Any, BinaryIO, Iterable, Mapping

import numpy as np

#: Prices are kept as integer micro-units on the evaluation path.
PRICE_SCALE = 1_000_000
_PRICE_QUANTUM = Decimal(1) / PRICE_SCALE

TIME_UNITS = {"seconds": 3600.0, "hours": 1.0}

EVENT_KINDS = (
    "AddInstanceType",
    "RemoveInstanceType",
    "PriceSet",
    "PriceMultiply",
    "DemandSet",
    "BoundsSet",
    "HorizonSet",
)
MARKET_EVENT_KINDS = frozenset(EVENT_KINDS[:4])
REQUEST_EVENT_KINDS = frozenset(EVENT_KINDS[4:])


@dataclass(frozen=True)
class Violation:
    """One broken invariant, with the grid coordinates it concerns (1-based)."""

    invariant: str
    message: str
    location: tuple[int, ...] | None = None

    def __str__(self) -> str:
        where = f" at {self.location}" if self.location is not None else ""
        return f"{self.invariant}{where}: {self.message}"


class MarketError(ValueError):
    """Raised when market or scenario input cannot be turned into a valid state."""

    def __init__(self, message: str, violations: Iterable[Violation] = ()):
        self.violations = list(violations)
        if self.violations:
            message = message + "\n" + "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(message)


def to_price(value: Any) -> Decimal:
    """Convert a JSON number/string to a quantized decimal price."""
    try:
        price = value if isinstance(value, Decimal) else Decimal(str(value))
    except InvalidOperation as exc:
        raise MarketError(f"invalid price {value!r}") from exc
    if not price.is_finite():
        raise MarketError(f"invalid price {value!r}")
    return price.quantize(_PRICE_QUANTUM, rounding=ROUND_HALF_EVEN)


@dataclass(frozen=True)
class InstanceTypeSpec:
    id: int
    name: str
    cpu_cores: int
    memory_gb: int


@dataclass(frozen=True)
class ProviderOffer:
    provider_id: int
    instance_type_id: int
    price_per_hour: Decimal
    allocation_time_hours: float
    release_time_hours: float
    available: bool = True
    # instant at which the offer was withdrawn; None while available
    removed_at: int | None = None

    @property
    def price_micros(self) -> int:
        return int(self.price_per_hour * PRICE_SCALE)


@dataclass(frozen=True)
class MarketArrays:
    """Dense 0-based ``(l, m)`` views of a market used on the hot path."""

    cpu: np.ndarray
    memory: np.ndarray
    price_micros: np.ndarray
    allocation: np.ndarray
    release: np.ndarray
    available: np.ndarray
    # per provider: available type indices, padded with -1
    types_by_provider: np.ndarray
    n_types_by_provider: np.ndarray
    # all available (type, provider) pairs, row-major
    available_pairs: np.ndarray


@dataclass(frozen=True)
class MarketState:
    instant: int
    providers: tuple[str, ...]
    instance_types: tuple[InstanceTypeSpec, ...]
    # offers[j - 1][k - 1] is the offer of instance type j at provider k
    offers: tuple[tuple[ProviderOffer, ...], ...]

    @property
    def m(self) -> int:
        return len(self.providers)

    @property
    def l(self) -> int:  # noqa: E743
        return len(self.instance_types)

    def offer(self, j: int, k: int) -> ProviderOffer:
        return self.offers[j - 1][k - 1]

    def provider_index(self, name: str) -> int:
        try:
            return self.providers.index(name) + 1
        except ValueError:
            raise MarketError(f"unknown provider {name!r}") from None

    def type_index(self, name: str) -> int:
        for spec in self.instance_types:
            if spec.name == name:
                return spec.id
        raise MarketError(f"unknown instance type {name!r}")

    @cached_property
    def arrays(self) -> MarketArrays:
        l, m = self.l, self.m
        cpu = np.empty((l, m))
        memory = np.empty((l, m))
        price = np.empty((l, m), dtype=np.int64)
        alloc = np.empty((l, m))
        release = np.empty((l, m))
        avail = np.empty((l, m), dtype=bool)
        for j, row in enumerate(self.offers):
            spec = self.instance_types[j]
            for k, offer in enumerate(row):
                cpu[j, k] = spec.cpu_cores
                memory[j, k] = spec.memory_gb
                price[j, k] = offer.price_micros
                alloc[j, k] = offer.allocation_time_hours
                release[j, k] = offer.release_time_hours
                avail[j, k] = offer.available
        n_types = avail.sum(axis=0)
        table = np.full((m, max(int(n_types.max()), 1)), -1, dtype=np.int64)
        for k in range(m):
            idx = np.flatnonzero(avail[:, k])
            table[k, : idx.size] = idx
        arrays = MarketArrays(
            cpu=cpu,
            memory=memory,
            price_micros=price,
            allocation=alloc,
            release=release,
            available=avail,
            types_by_provider=table,
            n_types_by_provider=n_types,
            available_pairs=np.argwhere(avail),
        )
        for a in dataclasses.astuple(arrays):
            a.setflags(write=False)
        return arrays


@dataclass(frozen=True)
class TenantRequest:
    vm_count: int
    horizon_hours: float
    loc_min: float = 0.0
    expected_ticpu: float | None = None
    expected_timem: float | None = None
    expected_tip: float | None = None
    tolerance_margin: float = 0.0

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], default_horizon: float | None = None) -> TenantRequest:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise MarketError(f"unknown tenant request fields: {sorted(unknown)}")
        kwargs = dict(data)
        if "horizon_hours" not in kwargs and default_horizon is not None:
            kwargs["horizon_hours"] = default_horizon
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise MarketError(f"bad tenant request: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def required_per_provider(n: int, loc_min: float) -> int:
    """Smallest VM count ``c`` with ``c / n >= loc_min``."""
    if loc_min <= 0:
        return 0
    c = max(math.ceil(loc_min * n) - 1, 0)
    while c / n < loc_min:
        c += 1
    return c


def validate_request(request: TenantRequest, m: int | None = None) -> list[Violation]:
    out: list[Violation] = []
    if not isinstance(request.vm_count, int) or request.vm_count < 1:
        out.append(Violation("vm_count", f"must be an integer >= 1, got {request.vm_count!r}"))
    if not request.horizon_hours > 0:
        out.append(Violation("horizon_hours", f"must be > 0, got {request.horizon_hours!r}"))
    if not 0 <= request.tolerance_margin < 1:
        out.append(Violation("tolerance_margin", f"must lie in [0, 1), got {request.tolerance_margin!r}"))
    if not request.loc_min >= 0:
        out.append(Violation("loc_min", f"must be >= 0, got {request.loc_min!r}"))
    elif m is not None and request.loc_min * m > 1:
        out.append(Violation("loc_min", f"loc_min * m = {request.loc_min * m:g} exceeds 1"))
    elif m is not None and not out:
        need = required_per_provider(request.vm_count, request.loc_min)
        if need * m > request.vm_count:
            out.append(
                Violation(
                    "loc_min",
                    f"{request.vm_count} VMs cannot give each of {m} providers {need} VMs",
                )
            )
    return out


def validate_market(state: MarketState) -> list[Violation]:
    """Check every MarketState invariant; an empty list means the state is valid."""
    out: list[Violation] = []
    if state.m < 1:
        out.append(Violation("providers", "market has no providers"))
    if state.l < 1:
        out.append(Violation("instance_types", "market has no instance types"))
    if len(set(state.providers)) != state.m:
        out.append(Violation("providers", "provider names are not unique"))
    if len({t.name for t in state.instance_types}) != state.l:
        out.append(Violation("instance_types", "instance type names are not unique"))
    for pos, spec in enumerate(state.instance_types, start=1):
        if spec.id != pos:
            out.append(Violation("instance_types", f"id {spec.id} found at position {pos}", (pos,)))
        if spec.cpu_cores < 1:
            out.append(Violation("cpu_cores", f"{spec.name}: must be >= 1", (pos,)))
        if spec.memory_gb < 1:
            out.append(Violation("memory_gb", f"{spec.name}: must be >= 1", (pos,)))
    if len(state.offers) != state.l or any(len(row) != state.m for row in state.offers):
        out.append(Violation("offers", "offer grid is not l x m"))
        return out
    for j, row in enumerate(state.offers, start=1):
        for k, offer in enumerate(row, start=1):
            loc = (j, k)
            if (offer.instance_type_id, offer.provider_id) != loc:
                out.append(Violation("offers", "offer indices do not match grid position", loc))
            if offer.price_per_hour < 0:
                out.append(Violation("price_per_hour", f"negative price {offer.price_per_hour}", loc))
            if not offer.allocation_time_hours >= 0:
                out.append(Violation("allocation_time", "must be >= 0", loc))
            if not offer.release_time_hours >= 0:
                out.append(Violation("release_time", "must be >= 0", loc))
    for k, name in enumerate(state.providers, start=1):
        if state.l and not any(state.offers[j][k - 1].available for j in range(state.l)):
            out.append(Violation("availability", f"provider {name!r} has no available offer", (k,)))
    return out


def check_market(state: MarketState) -> MarketState:
    violations = validate_market(state)
    if violations:
        raise MarketError("invalid market", violations)
    return state


# -- (de)serialization ------------------------------------------------------


def _offer_times(raw: Mapping[str, Any], divisor: float, where: str) -> tuple[float, float]:
    try:
        return float(raw["allocation_time"]) / divisor, float(raw["release_time"]) / divisor
    except (KeyError, TypeError, ValueError) as exc:
        raise MarketError(f"{where}: bad allocation/release time ({exc})") from exc


def _time_divisor(unit: Any) -> float:
    if unit not in TIME_UNITS:
        raise MarketError(f"time_unit must be one of {sorted(TIME_UNITS)}, got {unit!r}")
    return TIME_UNITS[unit]


def market_from_dict(data: Mapping[str, Any]) -> MarketState:
    """Build and validate a MarketState (instant 1) from the market JSON document."""
    if not isinstance(data, Mapping):
        raise MarketError("market document must be a JSON object")
    divisor = _time_divisor(data.get("time_unit", "hours"))
    providers = data.get("providers")
    if not providers:
        raise MarketError("market has no providers")
    providers = tuple(str(p) for p in providers)
    raw_types = data.get("instance_types") or []
    if not raw_types:
        raise MarketError("market has no instance types")
    try:
        types = tuple(
            InstanceTypeSpec(j, str(t["name"]), int(t["cpu_cores"]), int(t["memory_gb"]))
            for j, t in enumerate(raw_types, start=1)
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MarketError(f"bad instance type record ({exc})") from exc
    type_ids = {t.name: t.id for t in types}
    prov_ids = {p: k for k, p in enumerate(providers, start=1)}

    grid: dict[tuple[int, int], ProviderOffer] = {}
    problems: list[Violation] = []
    for pos, raw in enumerate(data.get("offers") or []):
        try:
            j = type_ids[raw["instance_type"]]
            k = prov_ids[raw["provider"]]
        except KeyError as exc:
            problems.append(Violation("offers", f"offer #{pos} references unknown {exc}"))
            continue
        if (j, k) in grid:
            problems.append(Violation("offers", "duplicate offer", (j, k)))
            continue
        alloc, release = _offer_times(raw, divisor, f"offer {(j, k)}")
        removed_at = raw.get("removed_at")
        grid[(j, k)] = ProviderOffer(
            provider_id=k,
            instance_type_id=j,
            price_per_hour=to_price(raw.get("price_per_hour")),
            allocation_time_hours=alloc,
            release_time_hours=release,
            available=bool(raw.get("available", True)),
            removed_at=None if removed_at is None else int(removed_at),
        )
    for j in range(1, len(types) + 1):
        for k in range(1, len(providers) + 1):
            if (j, k) not in grid:
                problems.append(Violation("offers", "missing offer", (j, k)))
    if problems:
        raise MarketError("invalid market", problems)
    offers = tuple(
        tuple(grid[(j, k)] for k in range(1, len(providers) + 1)) for j in range(1, len(types) + 1)
    )
    return check_market(MarketState(1, providers, types, offers))


def load_market(source: bytes | str | BinaryIO) -> MarketState:
    """Parse a market JSON document from bytes, text or a binary stream."""
    if hasattr(source, "read"):
        source = source.read()
    try:
        data = json.loads(source, parse_float=Decimal)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MarketError(f"cannot parse market JSON: {exc}") from exc
    return market_from_dict(data)


def read_market(path: str | Path) -> MarketState:
    with open(path, "rb") as fh:
        return load_market(fh)


def _json_number(x: Decimal) -> float | int:
    return int(x) if x == x.to_integral_value() else float(x)


def market_to_dict(state: MarketState) -> dict[str, Any]:
    offers = []
    for row in state.offers:
        for o in row:
            rec: dict[str, Any] = {
                "provider": state.providers[o.provider_id - 1],
                "instance_type": state.instance_types[o.instance_type_id - 1].name,
                "price_per_hour": _json_number(o.price_per_hour),
                "allocation_time": o.allocation_time_hours,
                "release_time": o.release_time_hours,
            }
            if not o.available:
                rec["available"] = False
            if o.removed_at is not None:
                rec["removed_at"] = o.removed_at
            offers.append(rec)
    return {
        "time_unit": "hours",
        "providers": list(state.providers),
        "instance_types": [
            {"name": t.name, "cpu_cores": t.cpu_cores, "memory_gb": t.memory_gb}
            for t in state.instance_types
        ],
        "offers": offers,
    }


def dump_market(state: MarketState) -> bytes:
    buf = io.StringIO()
    json.dump(market_to_dict(state), buf, indent=2)
    return buf.getvalue().encode()


# -- events -----------------------------------------------------------------


@dataclass(frozen=True)
class MarketEvent:
    at_instant: int
    kind: str
    payload: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise MarketError(f"unknown event kind {self.kind!r}; expected one of {EVENT_KINDS}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MarketEvent:
        data = dict(data)
        try:
            at = int(data.pop("at_instant", None) if "at_instant" in data else data.pop("at"))
            kind = data.pop("kind")
        except (KeyError, TypeError, ValueError) as exc:
            raise MarketError(f"event record needs 'at' and 'kind' ({exc})") from exc
        return cls(at, kind, data)

    def to_dict(self) -> dict[str, Any]:
        return {"at": self.at_instant, "kind": self.kind, **self.payload}

    @property
    def touches_market(self) -> bool:
        return self.kind in MARKET_EVENT_KINDS


def advance(state: MarketState, instant: int) -> MarketState:
    if instant < state.instant:
        raise MarketError(f"cannot move market from t={state.instant} back to t={instant}")
    return state if instant == state.instant else dataclasses.replace(state, instant=instant)


def _replace_offer(offers, j: int, k: int, **changes) -> tuple:
    rows = [list(r) for r in offers]
    rows[j - 1][k - 1] = dataclasses.replace(rows[j - 1][k - 1], **changes)
    return tuple(tuple(r) for r in rows)


def apply_event(state: MarketState, event: MarketEvent) -> MarketState:
    """Return the market after ``event``; the input state is left untouched.

    Demand-side events (DemandSet, BoundsSet, HorizonSet) do not alter the
    catalog and only move the instant forward; see :func:`apply_request_event`.
    """
    if event.at_instant not in (state.instant, state.instant + 1):
        raise MarketError(
            f"{event.kind} at t={event.at_instant} cannot be applied to market at t={state.instant}"
        )
    state = advance(state, event.at_instant)
    p = event.payload
    if event.kind == "AddInstanceType":
        new = _add_instance_type(state, p)
    elif event.kind == "RemoveInstanceType":
        j = _resolve_type(state, p.get("instance_type"))
        offers = state.offers
        for k in range(1, state.m + 1):
            if offers[j - 1][k - 1].available:
                offers = _replace_offer(offers, j, k, available=False, removed_at=state.instant)
        new = dataclasses.replace(state, offers=offers)
    elif event.kind == "PriceSet":
        j = _resolve_type(state, p.get("instance_type"))
        k = _resolve_provider(state, p.get("provider"))
        new = dataclasses.replace(
            state, offers=_replace_offer(state.offers, j, k, price_per_hour=to_price(p.get("price_per_hour")))
        )
    elif event.kind == "PriceMultiply":
        factor = to_price(p.get("factor"))
        if factor < 0:
            raise MarketError(f"PriceMultiply factor must be >= 0, got {factor}")
        provider = p.get("provider")
        targets = range(1, state.m + 1) if provider is None else [_resolve_provider(state, provider)]
        offers = state.offers
        for k in targets:
            for j in range(1, state.l + 1):
                old = offers[j - 1][k - 1].price_per_hour
                offers = _replace_offer(offers, j, k, price_per_hour=to_price(old * factor))
        new = dataclasses.replace(state, offers=offers)
    else:
        return state
    violations = validate_market(new)
    if violations:
        raise MarketError(f"{event.kind} at t={event.at_instant} leaves an invalid market", violations)
    return new


def _resolve_type(state: MarketState, ref: Any) -> int:
    if isinstance(ref, int) and not isinstance(ref, bool):
        if not 1 <= ref <= state.l:
            raise MarketError(f"unknown instance type id {ref}")
        return ref
    return state.type_index(str(ref))


def _resolve_provider(state: MarketState, ref: Any) -> int:
    if isinstance(ref, int) and not isinstance(ref, bool):
        if not 1 <= ref <= state.m:
            raise MarketError(f"unknown provider id {ref}")
        return ref
    return state.provider_index(str(ref))


def _add_instance_type(state: MarketState, p: Mapping[str, Any]) -> MarketState:
    raw = p.get("instance_type") or {}
    try:
        name = str(raw["name"])
        spec = InstanceTypeSpec(state.l + 1, name, int(raw["cpu_cores"]), int(raw["memory_gb"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise MarketError(f"AddInstanceType needs name/cpu_cores/memory_gb ({exc})") from exc
    if any(t.name == name for t in state.instance_types):
        raise MarketError(f"instance type {name!r} already exists")
    divisor = _time_divisor(p.get("time_unit", "hours"))
    by_provider: dict[int, ProviderOffer] = {}
    for raw_offer in p.get("offers") or []:
        k = _resolve_provider(state, raw_offer.get("provider"))
        alloc, release = _offer_times(raw_offer, divisor, f"new offer {(spec.id, k)}")
        by_provider[k] = ProviderOffer(
            k, spec.id, to_price(raw_offer.get("price_per_hour")), alloc, release
        )
    row = tuple(
        by_provider.get(k, ProviderOffer(k, spec.id, Decimal(0), 0.0, 0.0, available=False))
        for k in range(1, state.m + 1)
    )
    return dataclasses.replace(
        state, instance_types=state.instance_types + (spec,), offers=state.offers + (row,)
    )


def apply_request_event(request: TenantRequest, event: MarketEvent) -> TenantRequest:
    """Apply a demand-side event to the tenant request; market events pass through."""
    p = dict(event.payload)
    if event.kind == "DemandSet":
        return dataclasses.replace(request, vm_count=int(p["vm_count"]))
    if event.kind == "HorizonSet":
        return dataclasses.replace(request, horizon_hours=float(p["horizon_hours"]))
    if event.kind == "BoundsSet":
        allowed = {"expected_ticpu", "expected_timem", "expected_tip", "tolerance_margin", "loc_min"}
        unknown = set(p) - allowed
        if unknown:
            raise MarketError(f"BoundsSet has unknown fields {sorted(unknown)}")
        return dataclasses.replace(request, **p)
    return request
