import math

import numpy as np
import pytest

from trailflow.dynamics import (
    ConfigError,
    DecisionRule,
    EngineAbort,
    EngineConfig,
    FlowSchedule,
    RESCALE_BY_SOURCE,
    UniformInit,
    flush_underflow,
    init_state,
    make_explicit_state,
    rescale,
    run,
    step,
)
from trailflow.graph import DirectedGraph, build_two_path, gen_gnp
from trailflow.analysis import normalized_levels
from trailflow.rules import RuleError, linear_rule, power_rule

from helpers import reference_step

LIN = DecisionRule.linear()


def two_path_23(leak_top=0.0, leak2=0.0, leak3=0.0):
    return build_two_path(2, 3, [leak_top], [leak2, leak3])


# -- schedules and config ------------------------------------------------------


def test_schedule_values_and_validation():
    c = FlowSchedule.constant(1.0, 2.0)
    assert (c.forward_at(5), c.backward_at(5)) == (1.0, 2.0)
    e = FlowSchedule.exponential(1.0, 1.0, 1.1)
    assert e.forward_at(3) == pytest.approx(1.1**3)
    l = FlowSchedule.linear(1.0, 1.0, 0.1)
    assert l.forward_at(10) == pytest.approx(2.0)
    with pytest.raises(ConfigError):
        FlowSchedule.constant(0.0, 1.0)
    with pytest.raises(ConfigError):
        FlowSchedule.exponential(1.0, 1.0, 1.0)
    with pytest.raises(ConfigError):
        FlowSchedule.linear(1.0, 1.0, 0.0)
    # unidirectional mode allows b0 = 0
    assert FlowSchedule.constant(1.0, 0.0).backward_at(4) == 0.0


def test_engine_config_validation():
    with pytest.raises(ConfigError):
        EngineConfig(delta=1.0)
    with pytest.raises(ConfigError):
        EngineConfig(delta=0.5, underflow_threshold=-1.0)
    with pytest.raises(ConfigError):
        EngineConfig(delta=0.5, rescale_mode="sometimes")


# -- init ----------------------------------------------------------------------


def test_init_symmetric_split():
    tp = two_path_23()
    st = init_state(tp.graph, 1.0, FlowSchedule.constant(1.0, 1.0))
    assert st.f_edge[tp.s_top_eid] == pytest.approx(0.5)
    assert st.f_edge[tp.s_bottom_eid] == pytest.approx(0.5)
    assert st.b_edge[tp.d_top_eid] == pytest.approx(0.5)
    assert st.b_edge[tp.d_bottom_eid] == pytest.approx(0.5)
    assert st.t == 0


def test_init_uniform_in_range():
    tp = two_path_23()
    st = init_state(tp.graph, UniformInit(0.0, 1.0, 42), FlowSchedule.constant(1, 1))
    assert np.all(st.p > 0.0) and np.all(st.p < 1.0)


def test_init_strict_warns_on_zero_target_pheromone():
    tp = two_path_23(leak_top=0.0, leak2=0.1)
    p = {e: 1.0 for e in tp.graph.edges}
    p[tp.graph.edges[tp.s_top_eid]] = 0.0  # zero on the min-leakage path
    st = init_state(tp.graph, p, FlowSchedule.constant(1, 1), strict=True)
    assert st.warnings and "zero initial pheromone" in st.warnings[0]
    with pytest.raises(ValueError):
        init_state(tp.graph, -1.0, FlowSchedule.constant(1, 1))


# -- single step ----------------------------------------------------------------


def test_step_one_step_hand_value():
    tp = two_path_23()
    sched = FlowSchedule.constant(1.0, 1.0)
    st = init_state(tp.graph, 1.0, sched)
    st1 = step(st, tp.graph, LIN, sched, EngineConfig(delta=0.5))
    # delta * (p + f + b) = 0.5 * (1 + 0.5 + 0)
    assert st1.p[tp.s_top_eid] == pytest.approx(0.75)
    assert st1.t == 1


def test_step_flow_free_edges_decay():
    tp = two_path_23()
    sched = FlowSchedule.constant(1.0, 1.0)
    st = init_state(tp.graph, 1.0, sched)
    st1 = step(st, tp.graph, LIN, sched, EngineConfig(delta=0.5))
    # interior edges carry no flow at t=0, so p(1) = delta * p(0) there
    interior = tp.path_eids("bottom")[1]
    assert st1.p[interior] == pytest.approx(0.5)


def test_step_absorbing_interior_blocks_flow():
    g = DirectedGraph(3, [(0, 1), (1, 2)], 0, 2, [0.0, 1.0, 0.0])
    sched = FlowSchedule.constant(1.0, 1.0)
    st = init_state(g, 1.0, sched)
    cfg = EngineConfig(delta=0.5)
    for _ in range(6):
        st = step(st, g, LIN, sched, cfg)
    assert st.f_edge[g.edge_id(1, 2)] == 0.0
    assert st.delivered_forward == 0.0


def test_step_matches_reference_implementation():
    """Engine vs an independent dict-based implementation of the equations."""
    for seed in range(12):
        rng = np.random.default_rng([seed, 5])
        n = int(rng.integers(4, 12))
        g = gen_gnp(n, 0.45, seed)
        lk = rng.uniform(0.0, 0.9, n)
        lk[g.source] = 0.0
        lk[g.destination] = 0.0
        g = g.with_leakage(lk)
        sched = FlowSchedule.constant(float(rng.uniform(0.5, 1.5)), float(rng.uniform(0.5, 1.5)))
        delta = float(rng.uniform(0.1, 0.9))
        cfg = EngineConfig(delta=delta, underflow_threshold=0.0)
        st = init_state(g, UniformInit(0.1, 1.0, seed), sched)
        p = {e: float(st.p[g.edge_id(*e)]) for e in g.edges}
        fe = {e: float(st.f_edge[g.edge_id(*e)]) for e in g.edges}
        be = {e: float(st.b_edge[g.edge_id(*e)]) for e in g.edges}
        for t in range(20):
            st = step(st, g, LIN, sched, cfg)
            p, fe, be, fv, bv, df, db = reference_step(g, p, fe, be, delta, sched, t)
            for e in g.edges:
                eid = g.edge_id(*e)
                for got, want in (
                    (st.p[eid], p[e]),
                    (st.f_edge[eid], fe[e]),
                    (st.b_edge[eid], be[e]),
                ):
                    assert got == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_step_conservation_and_recurrence_properties():
    """Flow conservation, split consistency, pheromone recurrence at 1e-12."""
    rng = np.random.default_rng(9)
    g = gen_gnp(15, 0.3, 3)
    lk = rng.uniform(0.0, 0.8, 15)
    lk[g.source] = lk[g.destination] = 0.0
    g = g.with_leakage(lk)
    sched = FlowSchedule.constant(1.0, 1.0)
    cfg = EngineConfig(delta=0.4)
    ga = g.arrays
    st = init_state(g, UniformInit(0.1, 1.0, 1), sched)
    for _ in range(30):
        prev = st
        st = step(st, g, LIN, sched, cfg)
        # recurrence
        want = cfg.delta * (prev.p + prev.f_edge + prev.b_edge)
        assert np.allclose(st.p, want, rtol=1e-12, atol=0)
        # conservation at interior vertices
        arr = np.bincount(ga.heads, weights=prev.f_edge, minlength=ga.n)
        expect = ga.surv * arr
        mask = np.ones(ga.n, bool)
        mask[[g.source, g.destination]] = False
        assert np.allclose(st.f_vertex[mask], expect[mask], rtol=1e-12, atol=1e-300)
        # split consistency
        out_sum = np.bincount(ga.tails, weights=st.f_edge, minlength=ga.n)
        has_out = ga.out_deg > 0
        assert np.allclose(out_sum[has_out], st.f_vertex[has_out], rtol=1e-12, atol=1e-300)
        assert np.all(st.p >= 0) and np.all(st.f_edge >= 0) and np.all(st.b_edge >= 0)


def test_delivered_flow_accounting():
    tp = two_path_23()
    sched = FlowSchedule.constant(1.0, 1.0)
    cfg = EngineConfig(delta=0.5)
    st = init_state(tp.graph, 1.0, sched)
    for _ in range(200):
        st = step(st, tp.graph, LIN, sched, cfg)
    # zero leakage: all injected flow eventually exits; in-flight is bounded
    assert st.delivered_forward == pytest.approx(st.delivered_backward, rel=1e-9)
    assert 195 <= st.delivered_forward <= 200


def test_zero_total_pheromone_splits_uniformly_and_flags():
    tp = two_path_23()
    sched = FlowSchedule.constant(1.0, 1.0)
    st = init_state(tp.graph, 0.0, sched)
    # degenerate config: all-zero pheromone at the branch points
    assert st.f_edge[tp.s_top_eid] == pytest.approx(0.5)
    assert st.f_edge[tp.s_bottom_eid] == pytest.approx(0.5)
    assert st.zero_split_events >= 2  # forward at s and backward at d


def test_step_abort_on_nan():
    tp = two_path_23()
    sched = FlowSchedule.constant(1.0, 1.0)
    st = init_state(tp.graph, 1.0, sched)
    st.p[0] = math.nan
    with pytest.raises(EngineAbort):
        step(st, tp.graph, LIN, sched, EngineConfig(delta=0.5))
    st2 = init_state(tp.graph, 1.0, sched)
    st2.p[0] = math.nan
    trace = run(st2, tp.graph, LIN, sched, EngineConfig(delta=0.5), 10)
    assert trace.stop_reason == "aborted"
    assert trace.failure_t == 1 and "pheromone" in trace.failure


def test_determinism():
    g = gen_gnp(20, 0.2, 4).with_leakage(np.linspace(0, 0.5, 20))
    sched = FlowSchedule.constant(1.0, 0.7)
    cfg = EngineConfig(delta=0.6)
    runs = []
    for _ in range(2):
        st = init_state(g, UniformInit(0.0, 1.0, 8), sched)
        for _ in range(50):
            st = step(st, g, LIN, sched, cfg)
        runs.append(st)
    assert np.array_equal(runs[0].p, runs[1].p)
    assert np.array_equal(runs[0].f_edge, runs[1].f_edge)


def test_linear_scale_invariance_of_normalized_trajectory():
    """Scaling initial pheromone and injections by a common c > 0 leaves the
    normalized-pheromone trajectory unchanged (the homogeneity the rescaling
    protocol relies on; pheromone-only scaling is not invariant because the
    update mixes pheromone with unscaled flows)."""
    tp = two_path_23(0.03, 0.02, 0.02)
    c = 3.7
    sched_a = FlowSchedule.constant(1.0, 1.0)
    sched_b = FlowSchedule.constant(c, c)
    cfg = EngineConfig(delta=0.5)
    a = init_state(tp.graph, 1.0, sched_a)
    b = init_state(tp.graph, c, sched_b)
    worst = 0.0
    for _ in range(300):
        a = step(a, tp.graph, LIN, sched_a, cfg)
        b = step(b, tp.graph, LIN, sched_b, cfg)
        na, nb = normalized_levels(a, tp.graph), normalized_levels(b, tp.graph)
        worst = max(worst, float(np.nanmax(np.abs(na.fwd - nb.fwd))))
    assert worst <= 1e-9


def test_general_rule_matches_linear_when_g_is_identity():
    tp = two_path_23(0.05, 0.1, 0.0)
    sched = FlowSchedule.constant(1.0, 1.0)
    cfg = EngineConfig(delta=0.5)
    a = init_state(tp.graph, UniformInit(0.2, 1.0, 3), sched, DecisionRule.linear())
    b = init_state(tp.graph, UniformInit(0.2, 1.0, 3), sched, DecisionRule.general(linear_rule()))
    for _ in range(50):
        a = step(a, tp.graph, DecisionRule.linear(), sched, cfg)
        b = step(b, tp.graph, DecisionRule.general(linear_rule()), sched, cfg)
    assert np.allclose(a.f_edge, b.f_edge, rtol=1e-12, atol=0)
    assert np.allclose(a.p, b.p, rtol=1e-12, atol=0)


def test_general_rule_requires_two_path():
    g = gen_gnp(8, 0.6, 1)
    sched = FlowSchedule.constant(1.0, 1.0)
    with pytest.raises(Exception):
        run(
            init_state(g, 1.0, sched),
            g,
            DecisionRule.general(power_rule(2)),
            sched,
            EngineConfig(delta=0.5),
            5,
        )


# -- rescale and underflow -------------------------------------------------------


def test_rescale_preserves_normalized_levels():
    tp = two_path_23()
    sched = FlowSchedule.constant(1.0, 1.0)
    st = init_state(tp.graph, UniformInit(0.5, 1.5, 2), sched)
    before = normalized_levels(st, tp.graph)
    out = rescale(st, 1.1, LIN)
    after = normalized_levels(out, tp.graph)
    assert np.nanmax(np.abs(before.fwd - after.fwd)) <= 1e-12
    assert np.allclose(out.p * 1.1, st.p)
    with pytest.raises(ValueError):
        rescale(st, 1.0, LIN)
    with pytest.raises(RuleError):
        rescale(st, 1.1, DecisionRule.general(power_rule(2)))


def test_rescaled_run_equals_plain_exponential_run():
    """Side-by-side trajectories agree in normalized pheromone to 1e-9."""
    tp = two_path_23()
    g = tp.graph
    sched = FlowSchedule.exponential(1.0, 1.0, 1.1)
    plain = init_state(g, 1.0, sched)
    scaled = init_state(g, 1.0, sched)
    cfg_plain = EngineConfig(delta=0.5)
    cfg_scaled = EngineConfig(delta=0.5, rescale_mode=RESCALE_BY_SOURCE)
    worst = 0.0
    for _ in range(200):
        plain = step(plain, g, LIN, sched, cfg_plain)
        scaled = step(scaled, g, LIN, sched, cfg_scaled)
        na, nb = normalized_levels(plain, g), normalized_levels(scaled, g)
        worst = max(worst, float(np.nanmax(np.abs(na.fwd - nb.fwd))))
    assert worst <= 1e-9
    # stored magnitudes stay bounded under rescaling
    assert plain.p.max() > 1e7
    assert scaled.p.max() < 1e2


def test_rescale_mode_validation():
    tp = two_path_23()
    sched_const = FlowSchedule.constant(1.0, 1.0)
    st = init_state(tp.graph, 1.0, sched_const)
    with pytest.raises(ConfigError):
        run(st, tp.graph, LIN, sched_const,
            EngineConfig(delta=0.5, rescale_mode=RESCALE_BY_SOURCE), 5)
    sched_exp = FlowSchedule.exponential(1.0, 1.0, 1.1)
    st2 = init_state(tp.graph, 1.0, sched_exp, DecisionRule.general(linear_rule()))
    with pytest.raises(ConfigError):
        run(st2, tp.graph, DecisionRule.general(linear_rule()), sched_exp,
            EngineConfig(delta=0.5, rescale_mode=RESCALE_BY_SOURCE), 5)


def test_flush_underflow():
    tp = two_path_23()
    sched = FlowSchedule.constant(1.0, 1.0)
    st = init_state(tp.graph, 1.0, sched)
    assert flush_underflow(st, 0.0).underflow_flushes == 0
    st.p[0] = 1e-310
    out = flush_underflow(st, 1e-300)
    assert out.p[0] == 0.0
    assert out.underflow_flushes == 1
    with pytest.raises(ValueError):
        flush_underflow(st, -1.0)


def test_long_exponential_run_flushes_losing_branch():
    tp = two_path_23()
    sched = FlowSchedule.exponential(1.0, 1.0, 1.5)
    cfg = EngineConfig(delta=0.5, rescale_mode=RESCALE_BY_SOURCE)
    st = init_state(tp.graph, 1.0, sched)
    for _ in range(11_000):
        st = step(st, tp.graph, LIN, sched, cfg)
    assert st.p[tp.s_bottom_eid] == 0.0  # flushed to exactly zero
    assert st.underflow_flushes > 0
    assert st.p[tp.s_top_eid] > 0.0


# -- run loop ---------------------------------------------------------------------


def test_run_validates_horizon():
    tp = two_path_23()
    sched = FlowSchedule.constant(1.0, 1.0)
    st = init_state(tp.graph, 1.0, sched)
    with pytest.raises(ValueError):
        run(st, tp.graph, LIN, sched, EngineConfig(delta=0.5), 0)


def test_run_observer_contract_and_stop():
    tp = two_path_23()
    sched = FlowSchedule.constant(1.0, 1.0)
    st = init_state(tp.graph, 1.0, sched)
    seen = []

    def obs(t, state, prev):
        seen.append((t, prev is None))
        return t >= 5

    trace = run(st, tp.graph, LIN, sched, EngineConfig(delta=0.5), 100, observers=[obs])
    assert seen[0] == (0, True)
    assert trace.stop_reason == "observer_stop"
    assert trace.final_state.t == 5


def test_explicit_state_construction():
    tp = two_path_23()
    g = tp.graph
    sched = FlowSchedule.constant(1.0, 1.0)
    fe = {g.edges[tp.s_top_eid]: 0.3}
    st = make_explicit_state(g, 1.0, fe, {}, sched)
    assert st.f_edge[tp.s_top_eid] == 0.3
    assert st.f_vertex[g.source] == 1.0
    with pytest.raises(ValueError):
        make_explicit_state(g, 1.0, {g.edges[0]: -0.1}, {}, sched)
