import json
import math
import random
from fractions import Fraction as F

import numpy as np
import pytest

from supermarket import verify as V
from supermarket.decomposition import decompose
from supermarket.model import Instance
from supermarket.sampling import random_instance
from supermarket.simulator import properly_clustered, shape_statistic

from .conftest import isolated_stations


def symmetric_pair():
    return Instance.build(2, [{0, 1}], [2], [1, 1])


def mm1(lam, mu=1):
    return Instance.build(1, [{0}], [lam], [mu])


# -- helpers -----------------------------------------------------------------------


def test_replica_seeds_deterministic_and_distinct():
    a = V.replica_seeds(7, 16)
    assert a == V.replica_seeds(7, 16)
    assert len(set(a)) == 16
    assert a[:4] == V.replica_seeds(7, 4)
    assert a != V.replica_seeds(8, 16)


def test_verdict_json_handles_exotic_values():
    v = V.Verdict("x", "claim", math.inf, 1.0, False, 3, 2,
                  {"f": F(1, 3), "a": np.arange(3), "b": np.bool_(True), "n": np.float64(math.inf)})
    data = json.loads(json.dumps(v.to_dict()))
    assert data["details"] == {"f": "1/3", "a": [0, 1, 2], "b": True, "n": "inf"}
    assert v.line().startswith("FAIL x:")


def test_write_verdicts(tmp_path):
    path = tmp_path / "v.json"
    V.write_verdicts([V.Verdict("x", "c", 0.0, 1.0, True, 0, 1)], path)
    assert json.loads(path.read_text())[0]["generator"] == "numpy.random.Philox"


@pytest.mark.parametrize(
    "spread, starts, lengths",
    [
        ([0, 11, 12, 0, 0, 15, 0], [1, 5], [3, 2]),
        ([11, 0, 12], [2], []),
        ([11, 12, 0, 3], [], []),
        ([0, 0, 0], [], []),
        ([0, 10, 10.5, 10], [2], [2]),
    ],
)
def test_excursion_lengths(spread, starts, lengths):
    s, n = V.excursion_lengths(np.array(spread, dtype=float), 10)
    assert n.tolist() == lengths
    assert s.tolist() == starts[: len(lengths)]


def test_properly_clustered_start(golden3):
    d = decompose(golden3)
    x = V.properly_clustered_start(d, 30)
    assert x == (30, 0, 0)
    assert properly_clustered(x, d.clusters, golden3.weights)


def test_agreed_decomposition_reports_mismatch(monkeypatch, golden3):
    wrong = decompose(isolated_stations(["0.5", "0.5", "0.5"], [1, 1, 1]))
    monkeypatch.setattr(V, "brute_force_decompose", lambda inst: wrong)
    with pytest.raises(V.DecompositionMismatch):
        V.agreed_decomposition(golden3)


# -- dispersion constant against exact enumeration ---------------------------------


def exact_shape_change(inst, x, cluster, split):
    """Exact expected one-jump change of the shape statistic; ``split(i, x)`` maps stations to routing shares."""
    alpha = inst.total_event_rate
    base = shape_statistic(x, cluster, inst.weights)
    total = F(0)
    for i in inst.active:
        for j, p in split(i, x).items():
            y = list(x)
            y[j] += 1
            total += inst.arrival_rates[i] / alpha * p * (shape_statistic(y, cluster, inst.weights) - base)
    for j in inst.stations:
        y = list(x)
        y[j] -= 1
        total += inst.service_rates[j] / alpha * (shape_statistic(y, cluster, inst.weights) - base)
    return total


def jlw_split(inst):
    def split(i, x):
        members = sorted(inst.neighbourhoods[i])
        low = min(inst.weights[j] * x[j] for j in members)
        best = [j for j in members if inst.weights[j] * x[j] == low]
        return {j: F(1, len(best)) for j in best}

    return split


def test_dispersion_constant_symmetric_pair():
    # gamma = 2, both coefficients 1, station rates 1 + 1, alpha = 4
    assert V.dispersion_constant(symmetric_pair(), {0, 1}, [2.0, 2.0]) == pytest.approx(0.5)


def test_dispersion_closed_form_matches_enumeration():
    rng = random.Random(1)
    checked_jlw = 0
    for _ in range(150):
        d = decompose(random_instance(rng, 5))
        inst = d.instance
        route = d.witness.routing
        rates = [float(inst.service_rates[j] + sum(inst.arrival_rates[i] * route[i][j] for i in inst.active))
                 for j in inst.stations]

        def witness_split(i, x):
            return {j: route[i][j] for j in inst.neighbourhoods[i] if route[i][j]}

        for _ in range(4):
            x = [rng.randint(-6, 6) for _ in inst.stations]
            proper = properly_clustered(x, d.clusters, inst.weights)
            for c in d.clusters:
                exact = exact_shape_change(inst, x, c, witness_split)
                assert float(exact) == pytest.approx(V.dispersion_constant(inst, c, rates), abs=1e-9)
                if proper:
                    checked_jlw += 1
                    exact = exact_shape_change(inst, x, c, jlw_split(inst))
                    bound = V.dispersion_constant(inst, c, V._jlw_rates(inst, np.array([x]))[0])
                    assert float(exact) <= bound + 1e-9
    assert checked_jlw > 50


def test_jlw_rates_split_ties():
    inst = Instance.build(3, [{0, 1, 2}, {2}], [3, 1], [1, 1, 1])
    rates = V._jlw_rates(inst, np.array([[0, 0, 0], [1, 0, 0], [0, 1, 1]]))
    assert rates.tolist() == [[2, 2, 3], [1, 2.5, 3.5], [4, 1, 2]]


# -- experiments at small scale -------------------------------------------------------


def test_speeds_two_station(two_station):
    v = V.check_speeds(two_station, decompose(two_station), 200_000, replicas=4, seed=1)
    assert v.passed, v.details


def test_speeds_isolated(isolated):
    v = V.check_speeds(isolated, decompose(isolated), 200_000, replicas=4, seed=2)
    assert v.passed, v.details
    assert v.details["targets"].tolist() == [-0.1, -0.5]


def test_speeds_argument_checks(two_station, golden3):
    d = decompose(two_station)
    for eps in (0, 0.5, -1):
        with pytest.raises(ValueError):
            V.check_speeds(two_station, d, 10_000, epsilon=eps)
    with pytest.raises(ValueError):
        V.check_speeds(two_station, d, 10)
    with pytest.raises(ValueError, match="too short"):
        V.check_speeds(golden3, decompose(golden3), 1000, epsilon=0.01)


def test_separation_golden(golden3):
    d = decompose(golden3)
    v = V.check_separation(golden3, d, 100_000, replicas=2, seed=4, initial_state=(-50, 50, 50))
    assert v.passed, v.details


def test_separation_isolated_started_equal(isolated):
    v = V.check_separation(isolated, decompose(isolated), 100_000, replicas=4, seed=6, initial_state=(0, 0))
    assert v.passed, v.details


def test_separation_needs_two_clusters(two_station):
    with pytest.raises(V.InapplicableError):
        V.check_separation(two_station, decompose(two_station), 1000)


def test_shape_inapplicable_without_bonded_pair():
    inst = isolated_stations([1, 1], ["1.1", "1.1"])
    with pytest.raises(V.InapplicableError):
        V.check_shape_recurrence(inst, decompose(inst), None, 1000)


def test_shape_bonded_pair():
    inst = Instance.build(2, [{0, 1}, {0}, {1}], ["0.2", 1, 1], ["1.1", "1.1"])
    d = decompose(inst)
    v = V.check_shape_recurrence(inst, d, None, 400_000, replicas=2, seed=2)
    assert v.passed, v.details


def test_shape_single_shared_neighbourhood():
    # this pair is so tight that M = 10 is almost never exceeded; use a radius it does cross
    inst = Instance.build(2, [{0, 1}], [2], ["1.1", "1.1"])
    v = V.check_shape_recurrence(inst, decompose(inst), None, 400_000, radius=3, replicas=2, seed=3)
    assert v.passed, v.details
    assert all(min(r["excursions"]) > 1000 for r in v.details["runs"])


def test_unbonded_diffusion_isolated_pair():
    inst = isolated_stations([1, 1], ["1.1", "1.1"])
    v = V.check_unbonded_diffusion(inst, [0, 1], 200_000, replicas=16, seed=5)
    assert v.passed, v.statistic


def test_unbonded_diffusion_arguments(two_station):
    with pytest.raises(ValueError):
        V.check_unbonded_diffusion(two_station, [0], 10_000)
    with pytest.raises(ValueError):
        V.check_unbonded_diffusion(two_station, [0, 1], 500)


def test_stability_branches():
    stable = V.check_stability(mm1("0.8"), decompose(mm1("0.8")), 200_000, replicas=2, seed=1)
    assert stable.passed and stable.details["branch"] == "stable"
    unstable = V.check_stability(mm1("1.25"), decompose(mm1("1.25")), 200_000, replicas=2, seed=1)
    assert unstable.passed and unstable.details["branch"] == "unstable"
    assert unstable.details["expected_slope"] == pytest.approx(0.25 / 2.25)


def test_stability_two_station_grows(two_station):
    d = decompose(two_station)
    v = V.check_stability(two_station, d, 200_000, replicas=2, seed=1)
    assert v.passed and v.details["branch"] == "unstable"
    # |C_1| V_1 / alpha = 2 * (2/3) / 5
    assert v.details["expected_slope"] == pytest.approx(4 / 15)


def test_stability_critical_case():
    with pytest.raises(V.CriticalCaseError):
        V.check_stability(mm1(1), decompose(mm1(1)), 1000)


def test_weight_invariance(golden3):
    v = V.check_weight_invariance(golden3, [[1, 1, 1], ["1/2", 2, 3], [3, "0.5", 1]])
    assert v.passed and v.statistic == 1
    with pytest.raises(ValueError):
        V.check_weight_invariance(golden3, [[1, 1, 1]])
    with pytest.raises(ValueError):
        V.check_weight_invariance(golden3, [[1, 1, 1], [1, 0, 1]])
    with pytest.raises(ValueError):
        V.check_weight_invariance(golden3, [[1, 1, 1], [1, 1]])


def test_weight_invariance_stable_pair():
    inst = Instance.build(2, [{0, 1}], ["1.5"], [1, 1])
    v = V.check_weight_invariance(inst, [[1, 1], [1, 2], [3, 1]])
    assert v.passed and all(x < 0 for x in v.details["top_values"])


def test_dispersion_singleton_clusters_are_flat(isolated):
    v = V.check_dispersion(isolated, decompose(isolated), horizon=20_000, seed=1)
    assert v.passed
    assert all(r["mean_delta"] == 0 and r["target"] == 0 for r in v.details["clusters"])


def test_dispersion_symmetric_pair():
    inst = symmetric_pair()
    v = V.check_dispersion(inst, decompose(inst), horizon=200_000, seed=3)
    assert v.passed, v.details
    rows = {r["policy"]: r for r in v.details["clusters"]}
    assert rows["witness"]["target"] == pytest.approx(0.5)


def test_coupling_small(golden3):
    v = V.check_coupling(golden3, 20_000, replicas=3, seed=1)
    assert v.passed and v.statistic == 0
