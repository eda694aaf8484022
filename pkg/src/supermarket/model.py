"""Problem description for the supermarket model with neighbourhood routing.

Stations and neighbourhoods are 0-based here; instance files and reports
use 1-based indices.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence


class InstanceFormatError(ValueError):
    """Raised when an instance file or mapping is malformed."""


class InvalidInstanceError(ValueError):
    """Raised when an operation receives an instance violating its invariants."""


def parse_rational(value) -> Fraction:
    """Convert ``"3/10"``, ``"0.3"``, ints or Fractions to an exact Fraction.

    Floats go through their shortest repr, so ``0.3`` becomes ``3/10``.
    """
    if isinstance(value, bool):
        raise ValueError(f"not a rational: {value!r}")
    if isinstance(value, float):
        value = repr(value)
    try:
        return Fraction(value.strip() if isinstance(value, str) else value)
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"not a rational: {value!r}") from exc


def format_rational(value: Fraction) -> str:
    return str(Fraction(value))


@dataclass(frozen=True)
class Instance:
    n_stations: int
    neighbourhoods: tuple[frozenset[int], ...]
    arrival_rates: tuple[Fraction, ...]
    service_rates: tuple[Fraction, ...]
    weights: tuple[Fraction, ...]

    @classmethod
    def build(
        cls,
        n_stations: int,
        neighbourhoods: Iterable[Iterable[int]],
        arrival_rates: Iterable,
        service_rates: Iterable,
        weights: Iterable | None = None,
    ) -> "Instance":
        """Convenience constructor taking 0-based station sets and rational-likes."""
        mus = tuple(parse_rational(m) for m in service_rates)
        ws = (
            tuple(Fraction(1) for _ in range(n_stations))
            if weights is None
            else tuple(parse_rational(w) for w in weights)
        )
        return cls(
            n_stations=int(n_stations),
            neighbourhoods=tuple(frozenset(int(j) for j in s) for s in neighbourhoods),
            arrival_rates=tuple(parse_rational(r) for r in arrival_rates),
            service_rates=mus,
            weights=ws,
        )

    @property
    def stations(self) -> range:
        return range(self.n_stations)

    @property
    def active(self) -> tuple[int, ...]:
        """Indices of neighbourhoods with a positive arrival rate."""
        return tuple(i for i, lam in enumerate(self.arrival_rates) if lam > 0)

    @property
    def total_arrival_rate(self) -> Fraction:
        return sum((self.arrival_rates[i] for i in self.active), Fraction(0))

    @property
    def total_event_rate(self) -> Fraction:
        """Uniformization constant: all arrival plus all service rates."""
        return self.total_arrival_rate + sum(self.service_rates, Fraction(0))

    def with_weights(self, weights: Iterable) -> "Instance":
        return Instance(
            self.n_stations,
            self.neighbourhoods,
            self.arrival_rates,
            self.service_rates,
            tuple(parse_rational(w) for w in weights),
        )

    def scaled(self, factor) -> "Instance":
        c = parse_rational(factor)
        return Instance(
            self.n_stations,
            self.neighbourhoods,
            tuple(c * lam for lam in self.arrival_rates),
            tuple(c * mu for mu in self.service_rates),
            self.weights,
        )

    def canonical(self) -> "Instance":
        """Merge duplicate neighbourhood sets and drop zero-rate streams.

        Merged neighbourhoods keep the order of first appearance.
        """
        merged: dict[frozenset[int], Fraction] = {}
        for s, lam in zip(self.neighbourhoods, self.arrival_rates):
            if lam > 0:
                merged[s] = merged.get(s, Fraction(0)) + lam
        return Instance(
            self.n_stations,
            tuple(merged),
            tuple(merged.values()),
            self.service_rates,
            self.weights,
        )

    def to_dict(self) -> dict:
        return {
            "stations": self.n_stations,
            "neighbourhoods": [
                {"members": sorted(j + 1 for j in s), "rate": format_rational(lam)}
                for s, lam in zip(self.neighbourhoods, self.arrival_rates)
            ],
            "service_rates": [format_rational(m) for m in self.service_rates],
            "weights": [format_rational(w) for w in self.weights],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Instance":
        if not isinstance(data, dict):
            raise InstanceFormatError("instance must be a JSON object")
        try:
            n = data["stations"]
        except KeyError:
            raise InstanceFormatError("missing field 'stations'") from None
        if not isinstance(n, int) or isinstance(n, bool):
            raise InstanceFormatError("field 'stations' must be an integer")

        raw_nbrs = data.get("neighbourhoods")
        if not isinstance(raw_nbrs, list):
            raise InstanceFormatError("field 'neighbourhoods' must be an array")
        sets, rates = [], []
        for pos, entry in enumerate(raw_nbrs):
            where = f"neighbourhoods[{pos}]"
            if not isinstance(entry, dict) or "members" not in entry or "rate" not in entry:
                raise InstanceFormatError(f"{where} needs 'members' and 'rate'")
            members = entry["members"]
            if not isinstance(members, list) or not all(
                isinstance(j, int) and not isinstance(j, bool) for j in members
            ):
                raise InstanceFormatError(f"{where}.members must be an array of integers")
            sets.append(frozenset(j - 1 for j in members))
            rates.append(_field_rational(entry["rate"], f"{where}.rate"))

        mus = _rational_list(data, "service_rates")
        if "weights" in data:
            ws = _rational_list(data, "weights")
        else:
            ws = [Fraction(1)] * n
        return cls(n, tuple(sets), tuple(rates), tuple(mus), tuple(ws))


def _field_rational(value, where: str) -> Fraction:
    try:
        return parse_rational(value)
    except ValueError:
        raise InstanceFormatError(f"{where}: not a rational: {value!r}") from None


def _rational_list(data: dict, name: str) -> list[Fraction]:
    raw = data.get(name)
    if not isinstance(raw, list):
        raise InstanceFormatError(f"field '{name}' must be an array")
    return [_field_rational(v, f"{name}[{k}]") for k, v in enumerate(raw)]


def load_instance(path: str | Path) -> Instance:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"invalid JSON: {exc}") from None
    return Instance.from_dict(data)


def save_instance(instance: Instance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance.to_dict(), indent=2) + "\n")


def structural_violations(instance: Instance) -> list[str]:
    """Violations that make the model itself ill-defined (everything but connectivity)."""
    out: list[str] = []
    n = instance.n_stations
    if n < 1:
        return [f"stations must be positive, got {n}"]
    if len(instance.arrival_rates) != len(instance.neighbourhoods):
        out.append("arrival rate count differs from neighbourhood count")
    if len(instance.service_rates) != n:
        out.append(f"expected {n} service rates, got {len(instance.service_rates)}")
    if len(instance.weights) != n:
        out.append(f"expected {n} weights, got {len(instance.weights)}")
    for i, s in enumerate(instance.neighbourhoods):
        if not s:
            out.append(f"neighbourhood {i + 1} is empty")
        bad = sorted(j + 1 for j in s if not 0 <= j < n)
        if bad:
            out.append(f"neighbourhood {i + 1} has stations out of range: {bad}")
    for i, lam in enumerate(instance.arrival_rates):
        if lam < 0:
            out.append(f"arrival rate of neighbourhood {i + 1} is negative")
    for j, mu in enumerate(instance.service_rates):
        if mu <= 0:
            out.append(f"service rate of station {j + 1} is not positive")
    for j, w in enumerate(instance.weights):
        if w <= 0:
            out.append(f"weight of station {j + 1} is not positive")
    if not any(lam > 0 for lam in instance.arrival_rates):
        out.append("no positive arrival stream")
    return out


def _is_connected(instance: Instance) -> bool:
    # bipartite graph on active neighbourhoods and all stations
    n = instance.n_stations
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    active = instance.active
    for i in active:
        members = sorted(instance.neighbourhoods[i])
        for j in members[1:]:
            parent[find(j)] = find(members[0])
    if not active:
        return False
    return len({find(j) for j in range(n)}) == 1


def validate(instance: Instance) -> list[str]:
    """All violated invariants; an empty list means the instance is legal."""
    out = structural_violations(instance)
    if out and any("out of range" in v or "empty" in v or "stations must" in v for v in out):
        return out
    if not _is_connected(instance):
        out.append("graph not connected")
    return out


def require_valid(instance: Instance, *, connected: bool = False) -> None:
    problems = validate(instance) if connected else structural_violations(instance)
    if problems:
        raise InvalidInstanceError("; ".join(problems))


@dataclass(frozen=True)
class StaticPolicy:
    """Routing probabilities ``routing[i][j]``, one row per neighbourhood."""

    routing: tuple[tuple[Fraction, ...], ...]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence]) -> "StaticPolicy":
        return cls(tuple(tuple(parse_rational(p) for p in row) for row in rows))

    def row(self, i: int) -> tuple[Fraction, ...]:
        return self.routing[i]

    def to_lists(self) -> list[list[str]]:
        return [[format_rational(p) for p in row] for row in self.routing]


def policy_violations(instance: Instance, policy: StaticPolicy) -> list[str]:
    """Simplex violations for rows of active neighbourhoods."""
    n = instance.n_stations
    out: list[str] = []
    if len(policy.routing) != len(instance.neighbourhoods):
        return [f"policy has {len(policy.routing)} rows, expected {len(instance.neighbourhoods)}"]
    for i in instance.active:
        row = policy.routing[i]
        if len(row) != n:
            out.append(f"row {i + 1} has {len(row)} entries, expected {n}")
            continue
        if any(p < 0 for p in row):
            out.append(f"row {i + 1} has a negative entry")
        if any(row[j] != 0 for j in range(n) if j not in instance.neighbourhoods[i]):
            out.append(f"row {i + 1} routes outside its neighbourhood")
        if sum(row, Fraction(0)) != 1:
            out.append(f"row {i + 1} does not sum to 1")
    return out


def check_policy(instance: Instance, policy: StaticPolicy) -> None:
    problems = policy_violations(instance, policy)
    if problems:
        raise ValueError("invalid policy: " + "; ".join(problems))


def inflow(instance: Instance, policy: StaticPolicy, station: int) -> Fraction:
    return sum(
        (instance.arrival_rates[i] * policy.routing[i][station] for i in instance.active),
        Fraction(0),
    )


def static_drift(instance: Instance, policy: StaticPolicy, station: int) -> Fraction:
    """Unweighted drift rate: routed arrival rate minus service rate at ``station``."""
    if not 0 <= station < instance.n_stations:
        raise IndexError(f"station {station} out of range")
    return inflow(instance, policy, station) - instance.service_rates[station]


def weighted_drifts(instance: Instance, policy: StaticPolicy) -> list[Fraction]:
    return [instance.weights[j] * static_drift(instance, policy, j) for j in instance.stations]


def policy_graph(instance: Instance, policy: StaticPolicy) -> set[tuple[int, int]]:
    """Edges ``(i, j)`` with a positive stream at ``i`` and positive routing to ``j``."""
    check_policy(instance, policy)
    return {
        (i, j)
        for i in instance.active
        for j in instance.neighbourhoods[i]
        if policy.routing[i][j] > 0
    }
