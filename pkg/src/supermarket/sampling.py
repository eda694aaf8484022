"""Random instances, weights and policies with exact rational entries."""
from __future__ import annotations

import random
from fractions import Fraction
from typing import Iterable, Sequence

from .model import Instance, StaticPolicy, validate

RATE_GRID = tuple(Fraction(k, 10) for k in range(1, 31))
WEIGHT_GRID = (Fraction(1), Fraction(1, 2), Fraction(2), Fraction(3))


def random_instance(
    rng: random.Random,
    max_stations: int = 8,
    rates: Sequence[Fraction] = RATE_GRID,
    weights: Sequence[Fraction] = WEIGHT_GRID,
    min_stations: int = 1,
) -> Instance:
    """A connected instance with rates and weights drawn from the given grids."""
    n = rng.randint(min_stations, max_stations)
    nbrs: list[frozenset[int]] = []
    for _ in range(rng.randint(1, n + 2)):
        size = rng.randint(1, min(n, 3))
        nbrs.append(frozenset(rng.sample(range(n), size)))
    # bridge components until the bipartite graph is connected
    while True:
        comp = _components(n, nbrs)
        if len(comp) == 1:
            break
        a, b = rng.sample(range(len(comp)), 2)
        nbrs.append(frozenset({rng.choice(sorted(comp[a])), rng.choice(sorted(comp[b]))}))
    inst = Instance(
        n,
        tuple(nbrs),
        tuple(rng.choice(rates) for _ in nbrs),
        tuple(rng.choice(rates) for _ in range(n)),
        tuple(rng.choice(weights) for _ in range(n)),
    )
    assert not validate(inst), validate(inst)
    return inst


def _components(n: int, nbrs: Iterable[frozenset[int]]) -> list[set[int]]:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for s in nbrs:
        m = sorted(s)
        for j in m[1:]:
            parent[find(j)] = find(m[0])
    groups: dict[int, set[int]] = {}
    for j in range(n):
        groups.setdefault(find(j), set()).add(j)
    return list(groups.values())


def random_weights(rng: random.Random, n: int, grid: Sequence[Fraction] = WEIGHT_GRID) -> tuple[Fraction, ...]:
    return tuple(rng.choice(grid) for _ in range(n))


def random_simplex_point(rng: random.Random, support: Sequence[int], n: int, resolution: int = 12) -> tuple[Fraction, ...]:
    """Random rational distribution on ``support``; zeros occur with positive probability."""
    if not support:
        raise ValueError("empty support")
    raw = [rng.randint(0, resolution) for _ in support]
    if sum(raw) == 0:
        raw[rng.randrange(len(raw))] = 1
    total = sum(raw)
    row = [Fraction(0)] * n
    for j, r in zip(support, raw):
        row[j] = Fraction(r, total)
    return tuple(row)


def random_policy(rng: random.Random, instance: Instance, retained: Iterable[int] | None = None) -> StaticPolicy:
    """Random static policy; with ``retained`` it never routes to stations outside it
    when the neighbourhood meets ``retained``."""
    keep = None if retained is None else set(retained)
    rows = []
    for s in instance.neighbourhoods:
        support = sorted(s)
        if keep is not None and keep & s:
            support = sorted(keep & s)
        rows.append(random_simplex_point(rng, support, instance.n_stations))
    return StaticPolicy(tuple(rows))
