"""Uniformized jump-chain simulation of the queue process and the random walk.

Every step draws one event at the constant total rate (all arrival streams
plus all servers); departures from empty queues become self-loops. Random
numbers come from numpy's counter-based Philox generator and are fed to
numba kernels, so a run is a pure function of its configuration.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence, Union

import numba
import numpy as np

from .model import Instance, StaticPolicy, check_policy

QUEUE = "queue"
WALK = "walk"
JLW = "jlw"
GENERATOR = "numpy.random.Philox"

_CHUNK = 1 << 18
_MAX_SAMPLES = 10_000

Policy = Union[str, StaticPolicy]


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def default_cadence(horizon: int) -> int:
    return max(1, math.ceil(horizon / _MAX_SAMPLES))


@dataclass(frozen=True)
class SimConfig:
    instance: Instance
    kind: str = WALK
    policy: Policy = JLW
    initial_state: tuple[int, ...] | None = None
    horizon: int = 10_000
    seed: int = 0
    cadence: int | None = None

    def __post_init__(self):
        if self.kind not in (QUEUE, WALK):
            raise ValueError(f"unknown process kind {self.kind!r}")
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        x0 = self.start
        if len(x0) != self.instance.n_stations:
            raise ValueError("initial state has wrong dimension")
        if self.kind == QUEUE and min(x0) < 0:
            raise ValueError("queue lengths cannot be negative")
        if isinstance(self.policy, StaticPolicy):
            check_policy(self.instance, self.policy)
        elif self.policy != JLW:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.cadence is not None and self.cadence < 1:
            raise ValueError("cadence must be positive")

    @property
    def start(self) -> tuple[int, ...]:
        if self.initial_state is None:
            return (0,) * self.instance.n_stations
        return tuple(int(v) for v in self.initial_state)

    @property
    def every(self) -> int:
        return self.cadence if self.cadence is not None else default_cadence(self.horizon)

    def to_dict(self) -> dict:
        return {
            "instance": self.instance.to_dict(),
            "kind": self.kind,
            "policy": self.policy if isinstance(self.policy, str) else self.policy.to_lists(),
            "initial_state": list(self.start),
            "horizon": self.horizon,
            "seed": self.seed,
            "cadence": self.every,
            "generator": GENERATOR,
        }

    @classmethod
    def from_dict(cls, data: dict, instance: Instance | None = None) -> "SimConfig":
        inst = instance if instance is not None else Instance.from_dict(data["instance"])
        pol = data.get("policy", JLW)
        policy = pol if isinstance(pol, str) else StaticPolicy.from_rows(pol)
        return cls(
            inst,
            data.get("kind", WALK),
            policy,
            tuple(data["initial_state"]) if data.get("initial_state") is not None else None,
            int(data.get("horizon", 10_000)),
            int(data.get("seed", 0)),
            data.get("cadence"),
        )


@dataclass
class Trajectory:
    steps: np.ndarray  # sampled step indices
    states: np.ndarray  # (samples, N) int64
    event_rate: float
    arrivals: np.ndarray  # routed arrivals per station
    departures: np.ndarray  # realized departures per station
    events: np.ndarray  # drawn events: active streams first, then servers
    self_loops: int
    zero_returns: int
    config: SimConfig | None = field(default=None, repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.steps / self.event_rate

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def horizon(self) -> int:
        return int(self.steps[-1])

    def counters(self) -> dict:
        out = {
            "arrivals": self.arrivals.tolist(),
            "departures": self.departures.tolist(),
            "events": self.events.tolist(),
            "self_loops": self.self_loops,
            "zero_returns": self.zero_returns,
            "event_rate": self.event_rate,
        }
        if self.config is not None:
            out["config"] = self.config.to_dict()
        return out

    def to_csv(self, path: str | Path) -> None:
        """Samples as CSV, counters in a ``.json`` sidecar next to it."""
        path = Path(path)
        n = self.states.shape[1]
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "time"] + [f"station_{j + 1}" for j in range(n)])
            for s, t, row in zip(self.steps, self.times, self.states):
                writer.writerow([int(s), repr(float(t))] + [int(v) for v in row])
        path.with_suffix(".json").write_text(json.dumps(self.counters(), indent=2) + "\n")


# -- single-step reference semantics ------------------------------------------


def jlw_route(state: Sequence[int], weights: Sequence, neighbourhood, draw: float) -> int:
    """Station of ``neighbourhood`` chosen by JLW, ties split by ``draw`` in [0, 1).

    Tied stations are ordered by index; ``draw`` picks uniformly among them.
    """
    members = sorted(neighbourhood)
    if not members:
        raise ValueError("empty neighbourhood")
    values = [Fraction(weights[j]) * state[j] for j in members]
    low = min(values)
    best = [j for j, v in zip(members, values) if v == low]
    return best[min(int(draw * len(best)), len(best) - 1)]


def event_table(instance: Instance) -> tuple[list[tuple[str, int]], list[Fraction]]:
    """Events in kernel order with their exact probabilities."""
    alpha = instance.total_event_rate
    events = [("arrival", i) for i in instance.active] + [("departure", j) for j in instance.stations]
    probs = [instance.arrival_rates[i] / alpha for i in instance.active]
    probs += [mu / alpha for mu in instance.service_rates]
    return events, probs


def step(instance: Instance, state: Sequence[int], kind: str, policy: Policy, u_event: float, u_route: float):
    """One uniformized jump: ``(next_state, (label, index))``.

    Labels are ``arrival`` (index = station joined), ``departure`` or
    ``self-loop`` (index = server drawn).
    """
    events, probs = event_table(instance)
    acc = 0.0
    choice = len(events) - 1
    for k, p in enumerate(probs):
        acc += float(p)
        if u_event < acc:
            choice = k
            break
    label, idx = events[choice]
    x = list(state)
    if label == "arrival":
        s = instance.neighbourhoods[idx]
        if policy == JLW:
            j = jlw_route(x, instance.weights, s, u_route)
        else:
            members = sorted(s)
            acc = 0.0
            j = members[-1]
            for m in members:
                acc += float(policy.routing[idx][m])
                if u_route < acc:
                    j = m
                    break
        x[j] += 1
        return tuple(x), ("arrival", j)
    if kind == WALK or x[idx] > 0:
        x[idx] -= 1
        return tuple(x), ("departure", idx)
    return tuple(x), ("self-loop", idx)


# -- kernels ---------------------------------------------------------------------


@numba.njit(cache=True)
def _pick(x, wint, members, size, u):
    low = wint[members[0]] * x[members[0]]
    ties = 1
    for k in range(1, size):
        j = members[k]
        v = wint[j] * x[j]
        if v < low:
            low = v
            ties = 1
        elif v == low:
            ties += 1
    target = int(u * ties)
    if target >= ties:
        target = ties - 1
    for k in range(size):
        j = members[k]
        if wint[j] * x[j] == low:
            if target == 0:
                return j
            target -= 1
    return members[0]


@numba.njit(cache=True)
def _is_min(x, wint, members, size, j):
    v = wint[j] * x[j]
    for k in range(size):
        m = members[k]
        if wint[m] * x[m] < v:
            return False
    return True


@numba.njit(cache=True)
def _static_pick(route_cum, members, size, u):
    for k in range(size):
        if u < route_cum[k]:
            return members[k]
    return members[size - 1]


@numba.njit(cache=True)
def _run_chunk(
    x, walk, jlw, ev_cum, n_arr, members, sizes, route_cum, wint,
    u_ev, u_rt, start, cadence, out_steps, out_states, n_out,
    arrivals, departures, events, counts,
):
    # counts: [self_loops, zero_returns, total]
    n = u_ev.shape[0]
    for t in range(n):
        e = np.searchsorted(ev_cum, u_ev[t], side="right")
        if e >= ev_cum.shape[0]:
            e = ev_cum.shape[0] - 1
        events[e] += 1
        if e < n_arr:
            if jlw:
                j = _pick(x, wint, members[e], sizes[e], u_rt[t])
            else:
                j = _static_pick(route_cum[e], members[e], sizes[e], u_rt[t])
            x[j] += 1
            arrivals[j] += 1
            counts[2] += 1
        else:
            j = e - n_arr
            if walk or x[j] > 0:
                x[j] -= 1
                departures[j] += 1
                counts[2] -= 1
                if not walk and counts[2] == 0:
                    counts[1] += 1
            else:
                counts[0] += 1
        step_no = start + t + 1
        if step_no % cadence == 0:
            out_steps[n_out] = step_no
            out_states[n_out, :] = x
            n_out += 1
    return n_out


@numba.njit(cache=True)
def _coupled_chunk(
    y, x, z, ev_cum, n_arr, members, sizes, wint, p_extra, p_drop,
    u, start, cadence, out_steps, out_y, out_x, out_z, out_extra, out_drop, n_out, counts,
):
    # counts: [violations, first_violation_step (or -1), extra, dropped]
    n = u.shape[0]
    for t in range(n):
        e = np.searchsorted(ev_cum, u[t, 0], side="right")
        if e >= ev_cum.shape[0]:
            e = ev_cum.shape[0] - 1
        if e < n_arr:
            mem = members[e]
            size = sizes[e]
            j = _pick(x, wint, mem, size, u[t, 1])
            # dominating walk follows the middle walk when their j-th entries agree
            if z[j] == x[j]:
                jz = j
            else:
                jz = _pick(z, wint, mem, size, u[t, 2])
            # dominated walk follows the middle walk when admissible
            dropped = u[t, 4] < p_drop[e]
            if not dropped:
                if y[j] == x[j] and _is_min(y, wint, mem, size, j):
                    jy = j
                else:
                    jy = _pick(y, wint, mem, size, u[t, 3])
                y[jy] += 1
            else:
                counts[3] += 1
            x[j] += 1
            z[jz] += 1
            if u[t, 5] < p_extra[e]:
                z[_pick(z, wint, mem, size, u[t, 6])] += 1
                counts[2] += 1
        else:
            j = e - n_arr
            y[j] -= 1
            x[j] -= 1
            z[j] -= 1
        step_no = start + t + 1
        for k in range(x.shape[0]):
            if y[k] > x[k] or x[k] > z[k]:
                counts[0] += 1
                if counts[1] < 0:
                    counts[1] = step_no
                break
        if step_no % cadence == 0:
            out_steps[n_out] = step_no
            out_y[n_out, :] = y
            out_x[n_out, :] = x
            out_z[n_out, :] = z
            out_extra[n_out] = counts[2]
            out_drop[n_out] = counts[3]
            n_out += 1
    return n_out


# -- drivers -------------------------------------------------------------------------


def _integer_weights(weights: Sequence[Fraction]) -> np.ndarray:
    lcm = 1
    for w in weights:
        lcm = lcm * Fraction(w).denominator // math.gcd(lcm, Fraction(w).denominator)
    return np.array([int(Fraction(w) * lcm) for w in weights], dtype=np.int64)


def _tables(instance: Instance, policy: Policy):
    _, probs = event_table(instance)
    cum = np.cumsum(np.array([float(p) for p in probs]))
    cum[-1] = 1.0
    active = instance.active
    width = max(len(instance.neighbourhoods[i]) for i in active)
    members = np.zeros((len(active), width), dtype=np.int64)
    sizes = np.zeros(len(active), dtype=np.int64)
    route = np.ones((len(active), width))
    for r, i in enumerate(active):
        m = sorted(instance.neighbourhoods[i])
        members[r, : len(m)] = m
        sizes[r] = len(m)
        if isinstance(policy, StaticPolicy):
            c = np.cumsum([float(policy.routing[i][j]) for j in m])
            c[-1] = 1.0
            route[r, : len(m)] = c
    return cum, members, sizes, route


def _sample_capacity(horizon: int, cadence: int) -> int:
    return horizon // cadence + 2


def run(config: SimConfig) -> Trajectory:
    inst = config.instance
    cum, members, sizes, route = _tables(inst, config.policy)
    wint = _integer_weights(inst.weights)
    n, n_arr = inst.n_stations, len(inst.active)
    cadence = config.every
    cap = _sample_capacity(config.horizon, cadence)
    out_steps = np.zeros(cap, dtype=np.int64)
    out_states = np.zeros((cap, n), dtype=np.int64)
    x = np.array(config.start, dtype=np.int64)
    out_states[0] = x
    n_out = 1
    arrivals = np.zeros(n, dtype=np.int64)
    departures = np.zeros(n, dtype=np.int64)
    events = np.zeros(len(cum), dtype=np.int64)
    counts = np.array([0, 0, int(x.sum())], dtype=np.int64)
    rng = make_rng(config.seed)
    done = 0
    while done < config.horizon:
        m = min(_CHUNK, config.horizon - done)
        u = rng.random((2, m))
        n_out = _run_chunk(
            x, config.kind == WALK, config.policy == JLW, cum, n_arr, members, sizes, route, wint,
            u[0], u[1], done, cadence, out_steps, out_states, n_out,
            arrivals, departures, events, counts,
        )
        done += m
    if out_steps[n_out - 1] != config.horizon:
        out_steps[n_out] = config.horizon
        out_states[n_out] = x
        n_out += 1
    return Trajectory(
        out_steps[:n_out].copy(),
        out_states[:n_out].copy(),
        float(inst.total_event_rate),
        arrivals,
        departures,
        events,
        int(counts[0]),
        int(counts[1]),
        config,
    )


@dataclass
class CouplingTriple:
    """Three walks on one event stream: ``lower <= middle <= upper`` componentwise."""

    steps: np.ndarray
    lower: np.ndarray
    middle: np.ndarray
    upper: np.ndarray
    extra: np.ndarray  # cumulative extra arrivals of the upper walk at each sample
    dropped: np.ndarray  # cumulative arrivals withheld from the lower walk
    violations: int
    first_violation: int | None


def _probabilities(instance: Instance, probs: Mapping[int, float] | None, what: str) -> np.ndarray:
    active = instance.active
    out = np.zeros(len(active))
    for i, p in (probs or {}).items():
        if i not in active:
            raise ValueError(f"{what} arrivals name unknown neighbourhood {i + 1}")
        if not 0 <= p <= 1:
            raise ValueError(f"{what} probability {p} outside [0, 1]")
        out[active.index(i)] = p
    return out


def coupled_run(
    config: SimConfig,
    extra: Mapping[int, float] | None = None,
    dropped: Mapping[int, float] | None = None,
) -> CouplingTriple:
    """Run the coupled triple for a JLW walk.

    ``extra`` gives, per neighbourhood, the probability that an arrival there
    brings one more arrival for the upper walk only; ``dropped`` the
    probability that the lower walk misses it.
    """
    if config.kind != WALK or config.policy != JLW:
        raise ValueError("coupling needs a JLW random walk")
    inst = config.instance
    p_extra = _probabilities(inst, extra, "extra")
    p_drop = _probabilities(inst, dropped, "dropped")
    cum, members, sizes, _ = _tables(inst, JLW)
    wint = _integer_weights(inst.weights)
    n, n_arr = inst.n_stations, len(inst.active)
    cadence = config.every
    cap = _sample_capacity(config.horizon, cadence)
    out_steps = np.zeros(cap, dtype=np.int64)
    outs = [np.zeros((cap, n), dtype=np.int64) for _ in range(3)]
    out_extra = np.zeros(cap, dtype=np.int64)
    out_drop = np.zeros(cap, dtype=np.int64)
    walks = [np.array(config.start, dtype=np.int64) for _ in range(3)]
    for o, w in zip(outs, walks):
        o[0] = w
    n_out = 1
    counts = np.array([0, -1, 0, 0], dtype=np.int64)
    rng = make_rng(config.seed)
    done = 0
    while done < config.horizon:
        m = min(_CHUNK, config.horizon - done)
        u = rng.random((m, 7))
        n_out = _coupled_chunk(
            walks[0], walks[1], walks[2], cum, n_arr, members, sizes, wint, p_extra, p_drop,
            u, done, cadence, out_steps, outs[0], outs[1], outs[2], out_extra, out_drop, n_out, counts,
        )
        done += m
    if out_steps[n_out - 1] != config.horizon:
        out_steps[n_out] = config.horizon
        for o, w in zip(outs, walks):
            o[n_out] = w
        out_extra[n_out] = counts[2]
        out_drop[n_out] = counts[3]
        n_out += 1
    return CouplingTriple(
        out_steps[:n_out].copy(),
        *(o[:n_out].copy() for o in outs),
        out_extra[:n_out].copy(),
        out_drop[:n_out].copy(),
        int(counts[0]),
        None if counts[1] < 0 else int(counts[1]),
    )


# -- state statistics ------------------------------------------------------------------


def shape_statistic(state: Sequence, cluster, weights: Sequence) -> Fraction:
    """Quarter of the sum over ordered pairs of squared weighted gaps over ``w_l w_r``."""
    members = sorted(cluster)
    if not members:
        raise ValueError("cluster must be non-empty")
    total = Fraction(0)
    for l in members:
        for r in members:
            wl, wr = Fraction(weights[l]), Fraction(weights[r])
            gap = wl * state[l] - wr * state[r]
            total += gap * gap / (wl * wr)
    return total / 4


def shape_statistic_path(states: np.ndarray, cluster, weights: Sequence) -> np.ndarray:
    """Vectorized float version of ``shape_statistic`` along a path."""
    members = sorted(cluster)
    w = np.array([float(weights[j]) for j in members])
    wx = states[:, members] * w
    gaps = wx[:, :, None] - wx[:, None, :]
    return (gaps**2 / (w[:, None] * w[None, :])).sum(axis=(1, 2)) / 4


def properly_clustered(state: Sequence, clusters: Sequence, weights: Sequence) -> bool:
    """Weighted states strictly decrease from each cluster to every later one."""
    wx = [Fraction(weights[j]) * state[j] for j in range(len(state))]
    for k in range(len(clusters) - 1):
        lowest = min(wx[j] for j in clusters[k])
        later = [wx[m] for c in clusters[k + 1 :] for m in c]
        if later and not lowest > max(later):
            return False
    return True


def properly_clustered_path(states: np.ndarray, clusters: Sequence, weights: Sequence) -> np.ndarray:
    wint = _integer_weights(weights)
    wx = states * wint
    ok = np.ones(states.shape[0], dtype=bool)
    for k in range(len(clusters) - 1):
        lowest = wx[:, sorted(clusters[k])].min(axis=1)
        rest = sorted(m for c in clusters[k + 1 :] for m in c)
        ok &= lowest > wx[:, rest].max(axis=1)
    return ok
