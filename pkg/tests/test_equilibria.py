import numpy as np
import pytest

from trailflow.dynamics import EngineConfig, FlowSchedule
from trailflow.equilibria import (
    EquilibriumError,
    EquilibriumSpec,
    equilibrium_state,
    perturb,
    stability_experiment,
    verify_equilibrium,
)
from trailflow.graph import build_two_path
from trailflow.rules import (
    fixed_points,
    linear_rule,
    power_rule,
    sine_rule,
    stable_fixed_points,
)

TP = build_two_path(2, 2, [0.0], [0.0])
SCHED = FlowSchedule.constant(1.0, 1.0)
CFG = EngineConfig(delta=0.5)


def test_equilibrium_spec_closed_form():
    spec = EquilibriumSpec(r=0.25, f_s=1.0, b_d=1.0, delta=0.5)
    assert spec.pheromone_top == pytest.approx(0.5)
    assert spec.pheromone_bottom == pytest.approx(1.5)
    assert spec.flows_top == (0.25, 0.25)
    assert spec.flows_bottom == (0.75, 0.75)
    assert spec.pheromone_top + spec.pheromone_bottom == pytest.approx(
        0.5 / 0.5 * (1.0 + 1.0)
    )


def test_equilibrium_state_values():
    rule = sine_rule(0.05)
    st = equilibrium_state(TP, rule, 0.25, 1.0, 1.0, 0.5)
    for eid in TP.path_eids("top"):
        assert st.p[eid] == pytest.approx(0.5)
        assert st.f_edge[eid] == pytest.approx(0.25)
        assert st.b_edge[eid] == pytest.approx(0.25)
    for eid in TP.path_eids("bottom"):
        assert st.p[eid] == pytest.approx(1.5)
        assert st.f_edge[eid] == pytest.approx(0.75)


def test_equilibrium_state_symmetric_and_boundary():
    st = equilibrium_state(TP, linear_rule(), 0.5, 1.0, 1.0, 0.5)
    for eid in range(TP.graph.n_edges):
        assert st.p[eid] == pytest.approx(1.0)  # (delta/(1-delta)) (f+b) / 2
    st0 = equilibrium_state(TP, power_rule(2), 0.0, 1.0, 1.0, 0.5)
    for eid in TP.path_eids("top"):
        assert st0.p[eid] == 0.0
        assert st0.f_edge[eid] == 0.0


def test_equilibrium_state_preconditions():
    leaky = build_two_path(2, 2, [0.1], [0.0])
    with pytest.raises(EquilibriumError):
        equilibrium_state(leaky, linear_rule(), 0.5, 1.0, 1.0, 0.5)
    with pytest.raises(EquilibriumError):
        equilibrium_state(TP, power_rule(2), 0.25, 1.0, 1.0, 0.5)  # not fixed


def test_equilibria_are_fixed_points_of_the_dynamics():
    for rule in (power_rule(2), power_rule(0.5), sine_rule(0.05)):
        for r in fixed_points(rule).points:
            st = equilibrium_state(TP, rule, r, 1.0, 1.0, 0.5)
            drift = verify_equilibrium(st, TP, rule, SCHED, CFG, 100)
            assert drift <= 1e-12, (rule.name, r, drift)


def test_perturbed_unstable_point_drifts():
    rule = sine_rule(0.05)
    st = equilibrium_state(TP, rule, 0.5, 1.0, 1.0, 0.5)  # 0.5 not in S_g
    st.p[TP.s_top_eid] += 0.1
    drift = verify_equilibrium(st, TP, rule, SCHED, CFG, 400)
    assert drift > 0.3  # walks away instead of returning


def test_perturb_properties():
    st = equilibrium_state(TP, sine_rule(0.05), 0.25, 1.0, 1.0, 0.5)
    a = perturb(st, 0.01, seed=7)
    b = perturb(st, 0.01, seed=7)
    assert np.array_equal(a.p, b.p)  # seeded determinism
    assert np.max(np.abs(a.p - st.p)) <= 0.01 + 1e-15
    assert np.all(a.p >= 0.0)
    big = perturb(equilibrium_state(TP, power_rule(2), 0.0, 1, 1, 0.5), 0.5, seed=1)
    assert any("clamped" in w for w in big.warnings)
    assert np.all(big.p >= 0.0)
    with pytest.raises(ValueError):
        perturb(st, 0.0, seed=1)


def test_stability_experiment_converges_and_holds():
    rule = sine_rule(0.05)
    rep = stable_fixed_points(rule)
    r_eps = rep.margins[0.25].r_eps
    out = stability_experiment(rule, 0.25, r_eps / 4, 1e-3, 2000, TP, seed=11)
    assert out.t_converged is not None
    assert out.held_until_Tmax


def test_stability_experiment_eps_zero_trivial():
    out = stability_experiment(sine_rule(0.05), 0.25, 0.0, 1e-3, 50, TP, seed=0)
    assert out.t_converged == 0
    assert out.held_until_Tmax


def test_stability_experiment_unstable_point_reported_not_raised():
    # r = 0.5 is fixed but not stable for the sine rule; the run drifts away
    out = stability_experiment(sine_rule(0.05), 0.5, 0.02, 1e-3, 2000, TP, seed=2)
    assert not out.held_until_Tmax


def test_stability_report_series(tmp_path):
    rule = power_rule(2)
    path = str(tmp_path / "series.csv")
    out = stability_experiment(rule, 0.0, 0.05, 1e-3, 200, TP, seed=4, series_path=path)
    assert out.max_drift_series_path == path
    lines = open(path).read().splitlines()
    assert lines[0] == "t,deviation"
    assert len(lines) == 202  # header + t=0..200
    doc = out.to_json_dict()
    assert doc["held_until_Tmax"] is True
