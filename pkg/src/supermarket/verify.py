"""Simulation experiments confronting the decomposition with the dynamics.

Each check returns a :class:`Verdict` carrying the raw statistics it was
decided on, so thresholds can be revisited without re-simulating. The
4-sigma, 25% and 50% thresholds are engineering choices.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .decomposition import Decomposition, bonded_components, brute_force_decompose, decompose
from .model import Instance, StaticPolicy, inflow, parse_rational
from .simulator import (
    GENERATOR,
    JLW,
    QUEUE,
    WALK,
    SimConfig,
    _integer_weights,
    coupled_run,
    properly_clustered_path,
    run,
    shape_statistic_path,
)


class InapplicableError(ValueError):
    """The experiment does not apply to this instance."""


class CriticalCaseError(ValueError):
    """The top cluster has zero drift; neither stability verdict applies."""


class DecompositionMismatch(RuntimeError):
    pass


@dataclass
class Verdict:
    experiment: str
    claim: str
    statistic: float
    threshold: float
    passed: bool
    seed: int
    replicas: int
    details: dict = field(default_factory=dict)
    generator: str = GENERATOR

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.experiment}: statistic={self.statistic:.6g} threshold={self.threshold:.6g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def write_verdicts(verdicts: Sequence[Verdict], path: str | Path) -> None:
    Path(path).write_text(json.dumps([v.to_dict() for v in verdicts], indent=2) + "\n")


def replica_seeds(seed: int, replicas: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(replicas)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


def agreed_decomposition(instance: Instance) -> Decomposition:
    """LP decomposition, after checking it against the enumeration oracle."""
    lp = decompose(instance)
    if instance.n_stations <= 20:
        oracle = brute_force_decompose(instance)
        if not lp.same_hierarchy(oracle):
            raise DecompositionMismatch(
                f"LP clusters {lp.to_dict()['clusters']} values {lp.to_dict()['values']} "
                f"differ from oracle {oracle.to_dict()['clusters']} {oracle.to_dict()['values']}"
            )
    return lp


def _weights(instance: Instance) -> np.ndarray:
    return np.array([float(w) for w in instance.weights])


def _alpha(instance: Instance) -> float:
    return float(instance.total_event_rate)


def properly_clustered_start(decomposition: Decomposition, spacing: int) -> tuple[int, ...]:
    """Integer state with weighted levels ``spacing`` apart between consecutive clusters."""
    inst = decomposition.instance
    x = [0] * inst.n_stations
    K = decomposition.K
    for k, cluster in enumerate(decomposition.clusters):
        for j in cluster:
            x[j] = math.ceil(Fraction((K - 1 - k) * spacing) / inst.weights[j])
    return tuple(x)


# -- speeds -------------------------------------------------------------------------


def check_speeds(
    instance: Instance,
    decomposition: Decomposition,
    horizon: int,
    epsilon: float = 0.2,
    replicas: int = 8,
    seed: int = 0,
    required_fraction: float = 1.0,
    tail_samples: int = 10,
) -> Verdict:
    """Weighted walk speeds against cluster values, tolerance ``n**-epsilon`` at step ``n``.

    Speeds are measured per unit of real time (steps over the event rate).
    A station passes in a replica when the final sample and the last
    ``tail_samples`` samples are all within tolerance.
    """
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    if horizon < 100:
        raise ValueError("degenerate horizon")
    vals = [float(v) for v in decomposition.values]
    gaps = [a - b for a, b in zip(vals, vals[1:])]
    if gaps and horizon ** (-epsilon) >= min(gaps) / 2:
        raise ValueError(
            f"horizon too short: tolerance {horizon ** -epsilon:.3g} not below half the smallest value gap"
        )
    alpha, w = _alpha(instance), _weights(instance)
    tier = decomposition.tier_of()
    target = np.array([vals[tier[j]] for j in instance.stations])
    seeds = replica_seeds(seed, replicas)
    passes = np.zeros((replicas, instance.n_stations), dtype=bool)
    final_dev = np.zeros((replicas, instance.n_stations))
    for r, s in enumerate(seeds):
        tr = run(SimConfig(instance, WALK, JLW, None, horizon, s))
        idx = np.arange(max(1, len(tr.steps) - tail_samples), len(tr.steps))
        n = tr.steps[idx].astype(float)
        speed = tr.states[idx] * w * alpha / n[:, None]
        dev = np.abs(speed - target)
        tol = n ** (-epsilon)
        passes[r] = (dev < tol[:, None]).all(axis=0)
        final_dev[r] = dev[-1]
    per_station = passes.mean(axis=0)
    return Verdict(
        "speeds",
        "weighted walk speed equals the cluster value on every cluster",
        float(per_station.min()),
        required_fraction,
        bool((per_station >= required_fraction).all()),
        seed,
        replicas,
        {
            "horizon": horizon,
            "epsilon": epsilon,
            "tolerance_at_horizon": horizon ** (-epsilon),
            "pass_fraction_per_station": per_station,
            "final_abs_deviation": final_dev,
            "targets": target,
        },
    )


# -- separation -------------------------------------------------------------------------


def check_separation(
    instance: Instance,
    decomposition: Decomposition,
    horizon: int,
    replicas: int = 8,
    seed: int = 0,
    initial_state: Sequence[int] | None = None,
    tail: float = 0.2,
) -> Verdict:
    """Proper clustering must hold at every sample of the final ``tail`` of each run."""
    if decomposition.K < 2:
        raise InapplicableError("separation needs at least two clusters")
    clusters = [sorted(c) for c in decomposition.clusters]
    fractions = []
    for s in replica_seeds(seed, replicas):
        tr = run(SimConfig(instance, WALK, JLW, initial_state, horizon, s))
        ok = properly_clustered_path(tr.states, clusters, instance.weights)
        late = tr.steps >= (1 - tail) * horizon
        fractions.append(float(ok[late].mean()))
    return Verdict(
        "separation",
        "clusters eventually separate in decreasing value order",
        min(fractions),
        1.0,
        min(fractions) == 1.0,
        seed,
        replicas,
        {"horizon": horizon, "initial_state": list(initial_state or []), "tail_fraction_clustered": fractions},
    )


# -- shape recurrence ------------------------------------------------------------------------


def _spread(states: np.ndarray, members: Sequence[int], weights: Sequence[Fraction]) -> np.ndarray:
    """Largest weighted gap within ``members`` along a path (in weight units)."""
    wint = _integer_weights(weights)
    scale = float(Fraction(weights[members[0]]) / int(wint[members[0]]))
    wx = states[:, members] * wint[members]
    return (wx.max(axis=1) - wx.min(axis=1)) * scale


def excursion_lengths(spread: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Start steps and lengths of completed excursions above ``radius``.

    The length is the return time: steps from the last sample inside
    ``[0, radius]`` to the next one. An excursion under way at the start
    or end of the path is not counted.
    """
    above = spread > radius
    edges = np.diff(above.astype(np.int8))
    starts = np.flatnonzero(edges == 1) + 1
    ends = np.flatnonzero(edges == -1) + 1
    if len(starts):
        ends = ends[ends > starts[0]]
    m = min(len(starts), len(ends))
    return starts[:m], ends[:m] - starts[:m] + 1


def check_shape_recurrence(
    instance: Instance,
    decomposition: Decomposition,
    bonded: Sequence[Sequence[frozenset]] | None,
    horizon: int,
    radius: float = 10,
    replicas: int = 4,
    seed: int = 0,
    radii: Sequence[float] = (5, 10, 20),
    stability: float = 0.5,
) -> Verdict:
    """Tightness of the weighted spread on each bonded sub-cluster of size two or more.

    Per replica and component: excursions above ``radius`` must have
    last-half mean length within ``stability`` of the first-half mean, and
    the fraction of time above each of ``radii`` must not increase with the
    radius.
    """
    if bonded is None:
        bonded = bonded_components(instance, decomposition)
    components = [sorted(g) for groups in bonded for g in groups if len(g) >= 2]
    if not components:
        raise InapplicableError("no bonded component with two or more stations")
    radii = sorted(set(radii) | {radius})
    worst = 0.0
    passed = True
    rows = []
    for s in replica_seeds(seed, replicas):
        tr = run(SimConfig(instance, WALK, JLW, None, horizon, s, cadence=1))
        for comp in components:
            spread = _spread(tr.states, comp, instance.weights)
            fracs = [float((spread > m).mean()) for m in radii]
            monotone = all(a >= b for a, b in zip(fracs, fracs[1:]))
            starts, lengths = excursion_lengths(spread, radius)
            half = horizon / 2
            first, last = lengths[starts < half], lengths[starts >= half]
            if len(first) == 0 and len(last) == 0:
                rel = 0.0
            elif len(first) == 0 or len(last) == 0:
                rel = math.inf
            else:
                rel = abs(last.mean() - first.mean()) / first.mean()
            ok = monotone and rel <= stability
            passed &= ok
            worst = max(worst, rel)
            rows.append(
                {
                    "seed": s,
                    "component": [j + 1 for j in comp],
                    "fraction_above": dict(zip(map(str, radii), fracs)),
                    "excursions": [int(len(first)), int(len(last))],
                    "mean_return_time": [
                        float(first.mean()) if len(first) else None,
                        float(last.mean()) if len(last) else None,
                    ],
                    "relative_change": rel,
                    "monotone_in_radius": monotone,
                    "passed": ok,
                }
            )
    return Verdict(
        "shape_recurrence",
        "weighted walk is recurrent in shape on bonded sub-clusters (finite-sample proxy)",
        worst,
        stability,
        bool(passed),
        seed,
        replicas,
        {"horizon": horizon, "radius": radius, "radii": radii, "runs": rows},
    )


def check_unbonded_diffusion(
    instance: Instance,
    stations: Sequence[int],
    horizon: int,
    replicas: int = 32,
    seed: int = 0,
    exponent: float = 0.5,
    tolerance: float = 0.15,
    points: int = 25,
    first_step: int = 100,
) -> Verdict:
    """Growth exponent of the mean weighted spread over ``stations``.

    Fits ``log E|spread|`` against ``log n`` at log-spaced steps; a
    diffusive (non-tight) spread has exponent near one half.
    """
    members = sorted(stations)
    if len(members) < 2:
        raise ValueError("need at least two stations")
    if horizon < 10 * first_step:
        raise ValueError("degenerate horizon")
    cadence = max(1, first_step // 10)
    spreads = []
    steps = None
    for s in replica_seeds(seed, replicas):
        tr = run(SimConfig(instance, WALK, JLW, None, horizon, s, cadence=cadence))
        spreads.append(_spread(tr.states, members, instance.weights))
        steps = tr.steps
    mean = np.mean(spreads, axis=0)
    grid = np.unique(np.searchsorted(steps, np.logspace(math.log10(first_step), math.log10(horizon), points)))
    grid = grid[(grid < len(steps)) & (mean[np.minimum(grid, len(steps) - 1)] > 0)]
    slope = float(np.polyfit(np.log(steps[grid]), np.log(mean[grid]), 1)[0])
    return Verdict(
        "unbonded_diffusion",
        "unbonded stations with equal drift drift apart diffusively (expected non-tight)",
        slope,
        tolerance,
        abs(slope - exponent) <= tolerance,
        seed,
        replicas,
        {"horizon": horizon, "stations": [j + 1 for j in members], "target_exponent": exponent,
         "fit_steps": steps[grid], "mean_spread": mean[grid]},
    )


# -- stability ------------------------------------------------------------------------------


def check_stability(
    instance: Instance,
    decomposition: Decomposition,
    horizon: int,
    replicas: int = 4,
    seed: int = 0,
    min_returns: int = 100,
    drift_tolerance: float = 0.25,
) -> Verdict:
    """Stationarity proxy for negative top value, linear growth for positive.

    Positive recurrence cannot be certified by simulation; the stable
    branch reports a proxy (returns to the empty state plus stable
    quarter-to-half means of the total queue).
    """
    v1 = decomposition.values[0]
    if v1 == 0:
        raise CriticalCaseError("top cluster value is zero")
    alpha = _alpha(instance)
    w = _weights(instance)
    rows = []
    passed = True
    if v1 < 0:
        worst = 0.0
        for s in replica_seeds(seed, replicas):
            tr = run(SimConfig(instance, QUEUE, JLW, None, horizon, s))
            total = tr.states.sum(axis=1)
            q2 = total[(tr.steps >= horizon / 4) & (tr.steps < horizon / 2)].mean()
            last = total[tr.steps >= horizon / 2].mean()
            rel = abs(last - q2) / q2 if q2 > 0 else float(last > 0)
            ok = tr.zero_returns >= min_returns and rel <= drift_tolerance
            passed &= ok
            worst = max(worst, rel)
            rows.append({"seed": s, "zero_returns": tr.zero_returns, "mean_q2": q2, "mean_last_half": last,
                         "relative_change": rel, "passed": ok})
        return Verdict("stability", "queue process positive recurrent under JLW (proxy)", worst,
                       drift_tolerance, bool(passed), seed, replicas,
                       {"branch": "stable", "proxy": True, "horizon": horizon, "min_returns": min_returns, "runs": rows})

    top = sorted(decomposition.clusters[0])
    threshold = len(top) * float(v1) / (2 * float(max(instance.weights)) * alpha)
    expected = len(top) * float(v1) / alpha
    slopes = []
    for s in replica_seeds(seed, replicas):
        tr = run(SimConfig(instance, QUEUE, JLW, None, horizon, s))
        load = tr.states[:, top] @ w[top]
        slope = float(np.polyfit(tr.steps.astype(float), load, 1)[0])
        slopes.append(slope)
        rows.append({"seed": s, "slope": slope})
    return Verdict("stability", "queue process transient, top cluster load grows linearly", min(slopes),
                   threshold, min(slopes) >= threshold, seed, replicas,
                   {"branch": "unstable", "horizon": horizon, "expected_slope": expected, "runs": rows})


def check_weight_invariance(instance: Instance, weight_samples: Sequence[Sequence]) -> Verdict:
    """Sign of the top value must not depend on the weights (exact)."""
    if len(weight_samples) < 2:
        raise ValueError("need at least two weight vectors")
    tops = []
    for ws in weight_samples:
        ws = [parse_rational(w) for w in ws]
        if len(ws) != instance.n_stations or any(w <= 0 for w in ws):
            raise ValueError(f"weights must be {instance.n_stations} positive values: {ws}")
        tops.append(decompose(instance.with_weights(ws)).values[0])
    signs = {(v > 0) - (v < 0) for v in tops}
    return Verdict("weight_invariance", "stability verdict is the same for all JLW weights",
                   float(len(signs)), 1.0, len(signs) == 1, 0, len(tops),
                   {"top_values": tops, "weights": [[str(parse_rational(w)) for w in ws] for ws in weight_samples]})


# -- dispersion -----------------------------------------------------------------------------


def _jlw_rates(instance: Instance, states: np.ndarray) -> np.ndarray:
    """Per-state event rates at each station under JLW (walk: servers always active)."""
    wint = _integer_weights(instance.weights)
    wx = states * wint
    rates = np.tile(np.array([float(m) for m in instance.service_rates]), (states.shape[0], 1))
    for i in instance.active:
        members = sorted(instance.neighbourhoods[i])
        sub = wx[:, members]
        ties = sub == sub.min(axis=1, keepdims=True)
        share = float(instance.arrival_rates[i]) * ties / ties.sum(axis=1, keepdims=True)
        rates[:, members] += share
    return rates


def dispersion_constant(instance: Instance, cluster, rates) -> np.ndarray | float:
    """Half the rate-weighted sum of ``gamma w_j - 1`` over ``cluster``, per jump.

    ``rates`` is a vector of per-station event rates or a (states, N) array.
    """
    members = sorted(cluster)
    gamma = sum(1 / instance.weights[j] for j in members)
    coef = np.array([float(gamma * instance.weights[j] - 1) for j in members])
    rates = np.asarray(rates, dtype=float)
    return rates[..., members] @ coef / (2 * _alpha(instance))


def check_dispersion(
    instance: Instance,
    decomposition: Decomposition,
    witness: StaticPolicy | None = None,
    horizon: int = 10**6,
    seed: int = 0,
    initial_state: Sequence[int] | None = None,
    sigmas: float = 4.0,
    segment: int = 1000,
) -> Verdict:
    """Mean one-step change of the shape statistic at properly clustered states.

    Under the witness it must match the closed form within ``sigmas``
    standard errors on every cluster; under JLW it may not exceed the
    state-dependent bound by more than ``sigmas`` standard errors.

    The ``horizon`` steps are split into runs of ``segment`` steps, each
    restarted from ``initial_state``: on one long run the spread, and with
    it the variance of each increment, grows without bound. The witness
    rows refer to the decomposition's canonical instance, which is what
    gets simulated.
    """
    inst = decomposition.instance
    witness = witness if witness is not None else decomposition.witness
    clusters = [sorted(c) for c in decomposition.clusters]
    if initial_state is None:
        initial_state = properly_clustered_start(decomposition, 10 * math.isqrt(segment) + 10)
    rates_pi = [float(inst.service_rates[j] + inflow(inst, witness, j)) for j in inst.stations]
    n_runs = max(1, math.ceil(horizon / segment))
    seeds = replica_seeds(seed, n_runs)
    rows = []
    passed = True
    worst = 0.0
    for label, policy in (("witness", witness), ("jlw", JLW)):
        samples: list[list[np.ndarray]] = [[] for _ in clusters]
        deltas: list[list[np.ndarray]] = [[] for _ in clusters]
        for r, s in enumerate(seeds):
            length = min(segment, horizon - r * segment)
            tr = run(SimConfig(inst, WALK, policy, initial_state, length, s, cadence=1))
            before = tr.states[:-1]
            proper = properly_clustered_path(before, clusters, inst.weights)
            if label == "jlw":
                jlw_rates = _jlw_rates(inst, before[proper])
            for k, cluster in enumerate(clusters):
                delta = np.diff(shape_statistic_path(tr.states, cluster, inst.weights))[proper]
                if label == "witness":
                    target = dispersion_constant(inst, cluster, rates_pi)
                else:
                    target = dispersion_constant(inst, cluster, jlw_rates)
                deltas[k].append(delta)
                samples[k].append(delta - target)
        for k, cluster in enumerate(clusters):
            sample = np.concatenate(samples[k])
            delta = np.concatenate(deltas[k])
            count = len(sample)
            if count == 0:
                raise InapplicableError("no properly clustered steps")
            mean = float(sample.mean())
            se = float(sample.std(ddof=1) / math.sqrt(count)) if count > 1 else 0.0
            if se > 0:
                z = mean / se
            else:
                z = 0.0 if abs(mean) < 1e-12 else math.copysign(math.inf, mean)
            ok = abs(z) <= sigmas if label == "witness" else z <= sigmas
            passed &= ok
            worst = max(worst, abs(z) if label == "witness" else z)
            rows.append({"policy": label, "cluster": [j + 1 for j in cluster], "steps": count,
                         "mean_delta": float(delta.mean()), "target": float(delta.mean()) - mean,
                         "excess": mean, "standard_error": se, "z": z, "passed": bool(ok)})
    return Verdict("dispersion", "one-step drift of the cluster shape statistic", worst, sigmas,
                   bool(passed), seed, n_runs,
                   {"horizon": horizon, "segment": segment, "initial_state": list(initial_state), "clusters": rows})


def check_coupling(
    instance: Instance,
    horizon: int,
    extra: dict[int, float] | float = 0.3,
    dropped: dict[int, float] | float = 0.3,
    replicas: int = 20,
    seed: int = 0,
) -> Verdict:
    """Componentwise ordering of the coupled lower, middle and upper walks at every step.

    A scalar ``extra``/``dropped`` applies the same thinning probability to
    every active neighbourhood.
    """
    if not isinstance(extra, dict):
        extra = {i: float(extra) for i in instance.active}
    if not isinstance(dropped, dict):
        dropped = {i: float(dropped) for i in instance.active}
    rows = []
    total = 0
    for s in replica_seeds(seed, replicas):
        triple = coupled_run(SimConfig(instance, WALK, JLW, None, horizon, s), extra, dropped)
        total += triple.violations
        rows.append({"seed": s, "violations": triple.violations, "first_violation": triple.first_violation,
                     "extra_arrivals": int(triple.extra[-1]), "dropped_arrivals": int(triple.dropped[-1])})
    return Verdict("coupling", "monotone coupling keeps lower <= middle <= upper", float(total), 0.0,
                   total == 0, seed, replicas, {"horizon": horizon, "runs": rows})
