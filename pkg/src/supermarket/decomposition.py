"""Hierarchical minimax decomposition of the station set.

The authoritative path is an iterated LP: find the smallest achievable
maximum weighted drift over the remaining stations, pin the stations
that every optimal policy holds at that value, fix them by equality
constraints and repeat. ``brute_force_decompose`` recomputes the same
hierarchy by subset enumeration and serves as its oracle.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .lp import LinearProgram, LPError
from .model import (
    Instance,
    StaticPolicy,
    format_rational,
    parse_rational,
    require_valid,
    weighted_drifts,
)

Cluster = frozenset  # of 0-based station indices

MAX_BRUTE_FORCE_STATIONS = 20


class InstanceTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class ReducedSystem:
    """Instance reduced onto the stations ``retained``.

    ``merged`` maps each non-empty intersection ``S_i & retained`` to the
    summed rate of the streams sharing it; ``sources`` lists those streams.
    """

    base: Instance
    retained: Cluster
    merged: dict
    sources: dict

    def supported(self, cluster: Iterable[int]) -> list[frozenset]:
        """Merged neighbourhoods lying entirely inside ``cluster``."""
        c = frozenset(cluster)
        return [s for s in self.merged if s <= c]


def reduce(instance: Instance, retained: Iterable[int]) -> ReducedSystem:
    d = frozenset(retained)
    if not d:
        raise ValueError("cannot reduce onto an empty cluster")
    merged: dict[frozenset, Fraction] = {}
    sources: dict[frozenset, list[int]] = {}
    for i in instance.active:
        s = instance.neighbourhoods[i] & d
        if s:
            merged[s] = merged.get(s, Fraction(0)) + instance.arrival_rates[i]
            sources.setdefault(s, []).append(i)
    return ReducedSystem(instance, d, merged, {s: tuple(v) for s, v in sources.items()})


def restricted_drift(reduced: ReducedSystem, cluster: Iterable[int]) -> Fraction:
    """Per-station average of the smallest total weighted drift on ``cluster``.

    Only streams supported by the cluster may feed it, and the minimum puts
    each of them on a least-weight station of its neighbourhood.
    """
    c = frozenset(cluster)
    if not c:
        raise ValueError("cluster must be non-empty")
    w, mu = reduced.base.weights, reduced.base.service_rates
    inflow = sum(
        (reduced.merged[s] * min(w[j] for j in s) for s in reduced.supported(c)),
        Fraction(0),
    )
    return (inflow - sum((w[j] * mu[j] for j in c), Fraction(0))) / len(c)


def harmonic_drift(reduced: ReducedSystem, cluster: Iterable[int]) -> Fraction:
    """Common weighted drift of ``cluster`` when all supported inflow stays in it."""
    c = frozenset(cluster)
    if not c:
        raise ValueError("cluster must be non-empty")
    base = reduced.base
    inflow = sum((reduced.merged[s] for s in reduced.supported(c)), Fraction(0))
    service = sum((base.service_rates[j] for j in c), Fraction(0))
    return (inflow - service) / sum((1 / base.weights[j] for j in c), Fraction(0))


# -- LP formulation ---------------------------------------------------------


class _PolicyLP:
    """Variable bookkeeping for routing LPs over a reduced system.

    One variable per (merged neighbourhood, member station) edge, optionally
    followed by a free level variable ``t``.
    """

    def __init__(self, reduced: ReducedSystem, edges: Sequence[tuple[frozenset, int]] | None = None):
        self.reduced = reduced
        if edges is None:
            edges = [(s, j) for s in reduced.merged for j in sorted(s)]
        self.edges = list(edges)
        self.index = {e: k for k, e in enumerate(self.edges)}
        self.into: dict[int, list[tuple[int, Fraction]]] = {j: [] for j in reduced.retained}
        for k, (s, j) in enumerate(self.edges):
            self.into[j].append((k, reduced.merged[s]))

    def program(self, with_level: bool) -> tuple[LinearProgram, int | None]:
        n = len(self.edges) + (1 if with_level else 0)
        level = len(self.edges) if with_level else None
        lp = LinearProgram(n, free={level} if with_level else set())
        rows: dict[frozenset, dict[int, Fraction]] = {}
        for k, (s, _) in enumerate(self.edges):
            rows.setdefault(s, {})[k] = Fraction(1)
        for s in self.reduced.merged:
            if s not in rows:
                raise LPError(f"neighbourhood {sorted(s)} has no eligible station")
            lp.add_eq(rows[s], 1)
        return lp, level

    def drift_row(self, j: int) -> tuple[dict[int, Fraction], Fraction]:
        """Coefficients and constant of ``w_j * (inflow_j - mu_j)``."""
        w = self.reduced.base.weights[j]
        return {k: w * lam for k, lam in self.into[j]}, w * self.reduced.base.service_rates[j]

    def add_equalities(self, lp: LinearProgram, constraints) -> None:
        for cluster, value in constraints:
            for j in cluster:
                coeffs, const = self.drift_row(j)
                lp.add_eq(coeffs, value + const)

    def add_ceiling(self, lp: LinearProgram, stations: Iterable[int], bound, level=None) -> None:
        """``w_j V_j <= bound`` (or ``<= t`` when ``level`` is given)."""
        for j in stations:
            coeffs, const = self.drift_row(j)
            if level is not None:
                coeffs = {**coeffs, level: Fraction(-1)}
                lp.add_le(coeffs, const)
            else:
                lp.add_le(coeffs, bound + const)

    def weighted_drift_at(self, x: Sequence[Fraction], j: int) -> Fraction:
        coeffs, const = self.drift_row(j)
        return sum((c * x[k] for k, c in coeffs.items()), Fraction(0)) - const


def _free_stations(reduced: ReducedSystem, constraints) -> list[int]:
    fixed = set().union(*(set(c) for c, _ in constraints)) if constraints else set()
    return sorted(reduced.retained - fixed)


def _solve(lp: LinearProgram, what: str):
    res = lp.solve()
    if not res.ok:
        raise LPError(f"{what}: LP {res.status}")
    return res


def minimax_value(reduced: ReducedSystem, constraints: Sequence[tuple[Iterable[int], Fraction]] = ()) -> Fraction:
    """Smallest achievable maximum weighted drift over the unconstrained stations.

    ``constraints`` pins every station of each listed cluster to the paired
    weighted drift value.
    """
    free = _free_stations(reduced, constraints)
    if not free:
        raise ValueError("every retained station is constrained")
    model = _PolicyLP(reduced)
    lp, level = model.program(with_level=True)
    model.add_equalities(lp, constraints)
    model.add_ceiling(lp, free, None, level=level)
    lp.objective = {level: Fraction(1)}
    return _solve(lp, "minimax").value


def pin_cluster(
    reduced: ReducedSystem,
    constraints: Sequence[tuple[Iterable[int], Fraction]],
    level_value: Fraction,
) -> Cluster:
    """Stations held at ``level_value`` by every policy attaining it."""
    free = _free_stations(reduced, constraints)
    model = _PolicyLP(reduced)

    def region() -> LinearProgram:
        lp, _ = model.program(with_level=False)
        model.add_equalities(lp, constraints)
        model.add_ceiling(lp, free, level_value)
        return lp

    candidates = set(free)

    def prune(x) -> None:
        for j in list(candidates):
            if model.weighted_drift_at(x, j) < level_value:
                candidates.discard(j)

    # One aggregate LP first: any station with slack there is not pinned.
    lp = region()
    for j in free:
        coeffs, _ = model.drift_row(j)
        for k, c in coeffs.items():
            lp.objective[k] = lp.objective.get(k, Fraction(0)) + c
    prune(_solve(lp, "pin (aggregate)").x)

    pinned = set()
    for j in sorted(free):
        if j not in candidates:
            continue
        lp = region()
        lp.objective = dict(model.drift_row(j)[0])
        res = _solve(lp, f"pin station {j}")
        prune(res.x)
        if j in candidates:
            pinned.add(j)
            candidates.discard(j)
    if not pinned:
        raise LPError("no station pinned at the minimax value")
    return frozenset(pinned)


# -- decomposition ------------------------------------------------------------


@dataclass(frozen=True)
class Decomposition:
    """Clusters in decreasing drift order, their weighted drifts and a witness.

    ``instance`` is the canonical form (duplicate neighbourhoods merged,
    zero-rate streams dropped); witness rows follow its neighbourhood order.
    """

    instance: Instance
    clusters: tuple[Cluster, ...]
    values: tuple[Fraction, ...]
    witness: StaticPolicy | None = None

    @property
    def K(self) -> int:
        return len(self.clusters)

    def tier_of(self) -> dict[int, int]:
        return {j: k for k, c in enumerate(self.clusters) for j in c}

    def same_hierarchy(self, other: "Decomposition") -> bool:
        return self.clusters == other.clusters and self.values == other.values

    def to_dict(self) -> dict:
        out = {
            "clusters": [sorted(j + 1 for j in c) for c in self.clusters],
            "values": [format_rational(v) for v in self.values],
            "neighbourhoods": [sorted(j + 1 for j in s) for s in self.instance.neighbourhoods],
        }
        if self.witness is not None:
            out["witness"] = self.witness.to_lists()
        return out

    @classmethod
    def from_dict(cls, data: dict, instance: Instance) -> "Decomposition":
        inst = instance.canonical()
        witness = data.get("witness")
        return cls(
            inst,
            tuple(frozenset(j - 1 for j in c) for c in data["clusters"]),
            tuple(parse_rational(v) for v in data["values"]),
            StaticPolicy.from_rows(witness) if witness is not None else None,
        )


def decompose(instance: Instance) -> Decomposition:
    require_valid(instance)
    inst = instance.canonical()
    reduced = reduce(inst, inst.stations)
    remaining = set(inst.stations)
    constraints: list[tuple[Cluster, Fraction]] = []
    while remaining:
        value = minimax_value(reduced, constraints)
        cluster = pin_cluster(reduced, constraints, value)
        constraints.append((cluster, value))
        remaining -= cluster
    clusters = tuple(c for c, _ in constraints)
    values = tuple(v for _, v in constraints)
    return Decomposition(inst, clusters, values, synthesize_witness(inst, clusters, values))


def brute_force_decompose(instance: Instance) -> Decomposition:
    """Stage-wise subset enumeration maximizing ``harmonic_drift``.

    The stage cluster is the union of all maximizers; that this union is
    itself a maximizer is asserted on every stage.
    """
    require_valid(instance)
    if instance.n_stations > MAX_BRUTE_FORCE_STATIONS:
        raise InstanceTooLargeError(
            f"brute force needs at most {MAX_BRUTE_FORCE_STATIONS} stations, got {instance.n_stations}"
        )
    inst = instance.canonical()
    remaining = sorted(inst.stations)
    clusters, values = [], []
    while remaining:
        reduced = reduce(inst, remaining)
        best = None
        union: set[int] = set()
        for size in range(1, len(remaining) + 1):
            for subset in itertools.combinations(remaining, size):
                v = harmonic_drift(reduced, subset)
                if best is None or v > best:
                    best, union = v, set(subset)
                elif v == best:
                    union.update(subset)
        cluster = frozenset(union)
        if harmonic_drift(reduced, cluster) != best:
            raise AssertionError(f"union of maximizers {sorted(cluster)} does not attain {best}")
        clusters.append(cluster)
        values.append(best)
        remaining = [j for j in remaining if j not in cluster]
    return Decomposition(
        inst, tuple(clusters), tuple(values), synthesize_witness(inst, clusters, values)
    )


def _tiers(instance: Instance, clusters: Sequence[Cluster]) -> tuple[dict[int, int], dict[int, int]]:
    station_tier = {j: k for k, c in enumerate(clusters) for j in c}
    stream_tier = {i: max(station_tier[j] for j in instance.neighbourhoods[i]) for i in instance.active}
    return station_tier, stream_tier


def _witness_model(instance: Instance, clusters, values) -> tuple[_PolicyLP, LinearProgram, dict]:
    """Feasibility LP for the policies achieving every cluster value.

    Streams may only feed the latest tier their neighbourhood touches.
    """
    inst = instance.canonical()
    if inst != instance:
        raise ValueError("witness synthesis expects a canonical instance")
    station_tier, stream_tier = _tiers(inst, clusters)
    reduced = reduce(inst, inst.stations)
    edges = [
        (s, j)
        for s in reduced.merged
        for j in sorted(s)
        if station_tier[j] == stream_tier[reduced.sources[s][0]]
    ]
    model = _PolicyLP(reduced, edges)
    lp, _ = model.program(with_level=False)
    model.add_equalities(lp, list(zip(clusters, values)))
    return model, lp, {s: reduced.sources[s][0] for s in reduced.merged}


def _policy_from(instance: Instance, model: _PolicyLP, x, stream_of) -> StaticPolicy:
    rows = [[Fraction(0)] * instance.n_stations for _ in instance.neighbourhoods]
    for k, (s, j) in enumerate(model.edges):
        rows[stream_of[s]][j] = x[k]
    return StaticPolicy(tuple(tuple(r) for r in rows))


def synthesize_witness(instance: Instance, clusters: Sequence[Cluster], values: Sequence[Fraction]) -> StaticPolicy:
    """A vertex of the polytope of static policies realizing every cluster value."""
    model, lp, stream_of = _witness_model(instance, clusters, values)
    res = lp.solve()
    if not res.ok:
        raise LPError(f"no static policy realizes the decomposition ({res.status})")
    return _policy_from(instance, model, res.x, stream_of)


def bonded_components(instance: Instance, decomposition: Decomposition) -> list[list[Cluster]]:
    """Maximal bonded sub-clusters of each cluster, in cluster order.

    An edge joins the bonding graph when some policy realizing the
    decomposition routes a positive fraction along it.
    """
    inst = decomposition.instance
    model, base_lp, stream_of = _witness_model(inst, decomposition.clusters, decomposition.values)
    positive: set[int] = set()
    checked: set[int] = set()
    for k in range(len(model.edges)):
        if k in checked:
            continue
        lp = LinearProgram(
            base_lp.n_vars, {k: Fraction(-1)}, list(base_lp.eq_rows), list(base_lp.le_rows)
        )
        res = _solve(lp, "edge maximization")
        for k2, v in enumerate(res.x):
            if v > 0:
                positive.add(k2)
                checked.add(k2)
        checked.add(k)

    parent = {j: j for j in inst.stations}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    by_stream: dict[frozenset, list[int]] = {}
    for k in positive:
        s, j = model.edges[k]
        by_stream.setdefault(s, []).append(j)
    for members in by_stream.values():
        for j in members[1:]:
            parent[find(j)] = find(members[0])

    out = []
    for cluster in decomposition.clusters:
        groups: dict[int, set[int]] = {}
        for j in sorted(cluster):
            groups.setdefault(find(j), set()).add(j)
        out.append(sorted((frozenset(g) for g in groups.values()), key=min))
    return out


def decomposition_problems(decomposition: Decomposition) -> list[str]:
    """Invariant violations of a decomposition (empty when it is consistent)."""
    inst = decomposition.instance
    out = []
    seen: set[int] = set()
    for c in decomposition.clusters:
        if not c:
            out.append("empty cluster")
        if seen & c:
            out.append("clusters overlap")
        seen |= c
    if seen != set(inst.stations):
        out.append("clusters do not cover all stations")
    vals = decomposition.values
    if any(a <= b for a, b in zip(vals, vals[1:])):
        out.append("values not strictly decreasing")
    if decomposition.witness is not None:
        drifts = weighted_drifts(inst, decomposition.witness)
        for c, v in zip(decomposition.clusters, vals):
            for j in c:
                if drifts[j] != v:
                    out.append(f"station {j + 1}: weighted drift {drifts[j]} != {v}")
    return out


def conservation_gap(decomposition: Decomposition, k: int) -> Fraction:
    """``V_k * sum(1/w) - (supported inflow - service)`` on cluster ``k``; zero when mass balances."""
    inst = decomposition.instance
    cluster = decomposition.clusters[k]
    remaining = set().union(*decomposition.clusters[k:])
    reduced = reduce(inst, remaining)
    inflow = sum((reduced.merged[s] for s in reduced.supported(cluster)), Fraction(0))
    service = sum((inst.service_rates[j] for j in cluster), Fraction(0))
    lhs = decomposition.values[k] * sum((1 / inst.weights[j] for j in cluster), Fraction(0))
    return lhs - (inflow - service)


def save_report(decomposition: Decomposition, path: str | Path, bonded=None) -> None:
    data = decomposition.to_dict()
    if bonded is not None:
        data["bonded"] = [[sorted(j + 1 for j in g) for g in groups] for groups in bonded]
    Path(path).write_text(json.dumps(data, indent=2) + "\n")
