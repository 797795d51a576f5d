"""Normalized pheromone levels, convergence detection, the windowed ratio
potential, and the proof constants used as runtime diagnostics.

Ratio conventions: for a two-path graph the branch ratios are
``r_s(t) = p(s, top1) / p(s, bottom1)`` and
``r_d(t) = p(topLast, d) / p(bottomLast, d)``. A ratio with zero denominator
and positive numerator is recorded as +inf (it can never be the minimum
unless everything is infinite); 0/0 is recorded as NaN and excluded from the
window minimum; a true 0/positive ratio is 0 and dominates the minimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Optional, Tuple

import numpy as np

from .graph import DirectedGraph, Path, TwoPathGraph

if TYPE_CHECKING:  # pragma: no cover
    from .dynamics import FlowSchedule, SystemState


TIMESERIES_COLUMNS = ["t", "edge_id", "u", "v", "p", "f", "b", "norm_fwd", "norm_bwd"]
SUMMARY_COLUMNS = ["t", "r_min", "f_s", "b_d", "converged_path_id"]


# ---------------------------------------------------------------------------
# Normalized pheromone
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalizedLevels:
    """Per-edge normalized pheromone; NaN marks an undefined ratio (zero
    total at the normalizing vertex)."""

    fwd: np.ndarray  # normalized over the out-edges of the tail
    bwd: np.ndarray  # normalized over the in-edges of the head


def normalized_levels(state: "SystemState", graph: DirectedGraph) -> NormalizedLevels:
    ga = graph.arrays
    p = state.p
    out_tot = np.bincount(ga.tails, weights=p, minlength=ga.n)
    in_tot = np.bincount(ga.heads, weights=p, minlength=ga.n)
    with np.errstate(invalid="ignore", divide="ignore"):
        fwd = np.where(out_tot[ga.tails] > 0.0, p / out_tot[ga.tails], np.nan)
        bwd = np.where(in_tot[ga.heads] > 0.0, p / in_tot[ga.heads], np.nan)
    return NormalizedLevels(fwd=fwd, bwd=bwd)


def detect_convergence(
    state: "SystemState", graph: DirectedGraph, epsilon: float
) -> Optional[Path]:
    """The unique s->d path whose every edge has forward and backward
    normalized pheromone >= 1 - epsilon, found by greedily following the
    max-normalized out-edge from s; None when no such chain reaches d."""
    if not (0.0 < epsilon < 1.0):
        raise ValueError("epsilon must lie in (0, 1)")
    levels = normalized_levels(state, graph)
    bar = 1.0 - epsilon
    seq = [graph.source]
    seen = {graph.source}
    cur = graph.source
    for _ in range(graph.n_vertices):
        if cur == graph.destination:
            return Path(tuple(seq))
        out = graph.out_edges(cur)
        if not out:
            return None
        best_eid = None
        best = -1.0
        for eid in out:
            f = levels.fwd[eid]
            if not math.isnan(f) and f > best:
                best = f
                best_eid = eid
            elif not math.isnan(f) and f == best and best_eid is not None:
                if graph.edges[eid][1] < graph.edges[best_eid][1]:
                    best_eid = eid
        if best_eid is None:
            return None
        f = levels.fwd[best_eid]
        b = levels.bwd[best_eid]
        if math.isnan(f) or math.isnan(b) or f < bar or b < bar:
            return None
        nxt = graph.edges[best_eid][1]
        if nxt in seen:
            return None
        seq.append(nxt)
        seen.add(nxt)
        cur = nxt
    return None


# ---------------------------------------------------------------------------
# Ratio potential
# ---------------------------------------------------------------------------


def ratio(num: float, den: float) -> float:
    if den > 0.0:
        return num / den
    return math.inf if num > 0.0 else math.nan


@dataclass
class PotentialTrace:
    """Branch pheromone ratios and their windowed minimum.

    ``r_min[i]`` (for the state at time i, recording from t=0) is the
    minimum of the last ``window`` samples of both ratios; NaN while the
    window is not yet full.
    """

    window: int
    r_s: List[float] = field(default_factory=list)
    r_d: List[float] = field(default_factory=list)
    r_min: List[float] = field(default_factory=list)

    def r_min_at(self, t: int) -> float:
        return self.r_min[t]


def update_potential(
    trace: PotentialTrace, state: "SystemState", two_path: TwoPathGraph
) -> PotentialTrace:
    """Push the current branch ratios and recompute the window minimum."""
    p = state.p
    trace.r_s.append(ratio(float(p[two_path.s_top_eid]), float(p[two_path.s_bottom_eid])))
    trace.r_d.append(ratio(float(p[two_path.d_top_eid]), float(p[two_path.d_bottom_eid])))
    L = trace.window
    if len(trace.r_s) < L:
        trace.r_min.append(math.nan)
        return trace
    lo = math.inf
    for series in (trace.r_s, trace.r_d):
        for x in series[-L:]:
            if not math.isnan(x) and x < lo:
                lo = x
    trace.r_min.append(lo if lo is not math.inf else math.nan)
    return trace


class PotentialObserver:
    """Run observer recording the potential of a two-path run."""

    def __init__(self, two_path: TwoPathGraph) -> None:
        self.two_path = two_path
        self.trace = PotentialTrace(window=two_path.window)

    def __call__(self, t, state, prev) -> None:
        update_potential(self.trace, state, self.two_path)


# ---------------------------------------------------------------------------
# Theorem constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TheoremConstants:
    """Explicit constants from the fixed-flow convergence analysis.

    C is the pheromone-to-flow comparison constant 5(f_s+b_d)/(b_d(1-delta));
    gamma_sl/gamma_dl are the guaranteed per-window growth factors of the
    branch ratios at the source and destination side (the destination-side
    constant normalizes by f_s instead of b_d); gamma_l is their minimum.
    T1 is the warm-up time after which the pheromone bound holds.
    """

    C: float
    gamma_sl: float
    gamma_dl: float
    gamma_l: float
    T1: float
    alpha_surv: float
    beta_surv: float


def theorem_constants(
    f_s: float,
    b_d: float,
    delta: float,
    surv_top: float,
    surv_bottom: float,
    p_init_max: float,
) -> TheoremConstants:
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0, 1)")
    if f_s <= 0.0 or b_d <= 0.0:
        raise ValueError("flows must be positive")
    if surv_top < surv_bottom:
        raise ValueError("surv_top must be >= surv_bottom (top is the min-leakage path)")
    C_s = 5.0 * (f_s + b_d) / (b_d * (1.0 - delta))
    C_d = 5.0 * (f_s + b_d) / (f_s * (1.0 - delta))
    gamma_sl = 1.0 + (surv_top - surv_bottom) / (C_s + surv_bottom)
    gamma_dl = 1.0 + (surv_top - surv_bottom) / (C_d + surv_bottom)
    T1 = 0.0
    if p_init_max > 0.0:
        T1 = max(0.0, math.log(p_init_max / (f_s + b_d)) / math.log(1.0 / delta))
    return TheoremConstants(
        C=C_s,
        gamma_sl=gamma_sl,
        gamma_dl=gamma_dl,
        gamma_l=min(gamma_sl, gamma_dl),
        T1=T1,
        alpha_surv=surv_top,
        beta_surv=surv_bottom,
    )


# ---------------------------------------------------------------------------
# Diagnostic checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundCheck:
    applicable: bool
    ok: bool
    edge: Optional[int] = None
    value: float = 0.0
    bound: float = 0.0


def check_pheromone_bound(
    state: "SystemState",
    schedule: "FlowSchedule",
    delta: float,
    t: int,
    T1: float,
    slack: float = 1e-9,
) -> BoundCheck:
    """Assert p_uv(t) <= 2 (f_s(t) + b_d(t)) / (1 - delta) for t >= T1."""
    if t < T1:
        return BoundCheck(applicable=False, ok=True)
    bound = 2.0 * (schedule.forward_at(t) + schedule.backward_at(t)) / (1.0 - delta)
    worst = int(np.argmax(state.p))
    value = float(state.p[worst])
    if value <= bound + slack:
        return BoundCheck(True, True, None, value, bound)
    return BoundCheck(True, False, worst, value, bound)


class PheromoneBoundObserver:
    """Per-step bound monitor; uses the amounts actually injected at each
    step so it stays correct under rescaling."""

    def __init__(self, delta: float, T1: float, slack: float = 1e-9) -> None:
        self.delta = delta
        self.T1 = T1
        self.slack = slack
        self.violations: List[Tuple[int, int, float, float]] = []

    def __call__(self, t, state, prev) -> None:
        if t < self.T1:
            return
        bound = 2.0 * (state.injected_f + state.injected_b) / (1.0 - self.delta)
        worst = float(state.p.max())
        if worst > bound + self.slack:
            self.violations.append((t, int(np.argmax(state.p)), worst, bound))


@dataclass(frozen=True)
class GrowthViolation:
    t: int
    kind: str  # "monotonic" | "growth"
    value: float
    required: float


def check_potential_growth(
    trace: PotentialTrace,
    constants: TheoremConstants,
    t: int,
    slack: float = 1e-9,
) -> Optional[GrowthViolation]:
    """Single-time check: r_min(t+1) >= r_min(t) and, for t past the warm-up,
    r_min(t+L) >= gamma_l * r_min(t) (1 - slack)."""
    L = trace.window
    r = trace.r_min
    if t + 1 < len(r) and not math.isnan(r[t]) and not math.isnan(r[t + 1]):
        if r[t + 1] < r[t] * (1.0 - 1e-12):
            return GrowthViolation(t, "monotonic", r[t + 1], r[t])
    if t >= constants.T1 + L and t + L < len(r):
        need = constants.gamma_l * r[t] * (1.0 - slack)
        if not math.isnan(r[t]) and not math.isnan(r[t + L]) and r[t + L] < need:
            return GrowthViolation(t, "growth", r[t + L], need)
    return None


def sweep_potential_monotone(
    trace: PotentialTrace, t_min: Optional[int] = None, rel_tol: float = 1e-12
) -> List[GrowthViolation]:
    """All monotonicity violations r_min(t+1) < r_min(t)(1 - rel_tol) for
    t >= t_min (default: the window length)."""
    L = trace.window
    start = L if t_min is None else t_min
    out: List[GrowthViolation] = []
    r = trace.r_min
    for t in range(start, len(r) - 1):
        a, b = r[t], r[t + 1]
        if math.isnan(a) or math.isnan(b):
            continue
        if b < a * (1.0 - rel_tol):
            out.append(GrowthViolation(t, "monotonic", b, a))
    return out


def sweep_potential_growth(
    trace: PotentialTrace,
    constants: TheoremConstants,
    slack: float = 1e-9,
) -> List[GrowthViolation]:
    """All growth violations r_min(t+L) < gamma_l r_min(t)(1 - slack) for
    t >= T1 + L."""
    L = trace.window
    start = int(math.ceil(constants.T1)) + L
    out: List[GrowthViolation] = []
    r = trace.r_min
    for t in range(start, len(r) - L):
        a, b = r[t], r[t + L]
        if math.isnan(a) or math.isnan(b):
            continue
        if math.isinf(a) and math.isinf(b):
            continue
        if b < constants.gamma_l * a * (1.0 - slack):
            out.append(GrowthViolation(t, "growth", b, constants.gamma_l * a))
    return out


# ---------------------------------------------------------------------------
# Per-step model invariants (conservation, split, recurrence)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InvariantViolation:
    t: int
    kind: str
    index: int
    error: float


class InvariantObserver:
    """Per-step checks of the update equations at 1e-12 relative tolerance:

    * conservation: f_vertex(t+1)[v] = (1-l_v) sum incoming f_edge(t) for
      v not in {s, d}, and the backward mirror image;
    * split consistency: out-edge flows of v sum to f_vertex(t+1)[v];
    * pheromone recurrence: p(t+1) = delta (p(t) + f_edge(t) + b_edge(t)).

    Under rescaling the previous-step quantities are divided by the factor
    before comparison.
    """

    def __init__(
        self,
        graph: DirectedGraph,
        cfg,
        schedule: "FlowSchedule",
        rel_tol: float = 1e-12,
    ) -> None:
        self.graph = graph
        self.cfg = cfg
        self.rel_tol = rel_tol
        from .dynamics import RESCALE_BY_SOURCE

        self.scale = (
            1.0 / schedule.alpha if cfg.rescale_mode == RESCALE_BY_SOURCE else 1.0
        )
        # flush-to-zero makes sub-threshold discrepancies meaningless
        self.abs_floor = cfg.underflow_threshold * 1e6
        self.violations: List[InvariantViolation] = []

    def _record(self, t: int, kind: str, err: np.ndarray, scale: np.ndarray) -> None:
        tol = np.maximum(self.rel_tol * np.maximum(scale, 1e-30), self.abs_floor)
        bad = np.abs(err) > tol
        if bad.any():
            i = int(np.argmax(np.abs(err) / np.maximum(scale, 1e-30)))
            self.violations.append(InvariantViolation(t, kind, i, float(err[i])))

    def __call__(self, t, state, prev) -> None:
        if prev is None:
            # initial states may be explicitly constructed (proof
            # configurations, perturbations); invariants apply to stepped
            # states
            return
        ga = self.graph.arrays
        thr = self.cfg.underflow_threshold
        s = self.scale
        # pheromone recurrence (skip flushed entries)
        expected = self.cfg.delta * (prev.p + prev.f_edge + prev.b_edge) * s
        err = state.p - expected
        err[state.p == 0.0] = 0.0
        self._record(t, "recurrence", err, expected)
        # conservation at interior vertices
        arr_f = np.bincount(ga.heads, weights=prev.f_edge, minlength=ga.n)
        arr_b = np.bincount(ga.tails, weights=prev.b_edge, minlength=ga.n)
        exp_f = ga.surv * arr_f * s
        exp_b = ga.surv * arr_b * s
        mask = np.ones(ga.n, dtype=bool)
        mask[ga.source] = False
        mask[ga.destination] = False
        err_f = np.where(mask, state.f_vertex - exp_f, 0.0)
        err_b = np.where(mask, state.b_vertex - exp_b, 0.0)
        if thr > 0.0:
            err_f[state.f_vertex == 0.0] = 0.0
            err_b[state.b_vertex == 0.0] = 0.0
        self._record(t, "conservation_f", err_f, exp_f)
        self._record(t, "conservation_b", err_b, exp_b)
        # split consistency on the stepped state
        out_sum = np.bincount(ga.tails, weights=state.f_edge, minlength=ga.n)
        in_sum = np.bincount(ga.heads, weights=state.b_edge, minlength=ga.n)
        mask_out = ga.out_deg > 0
        mask_in = ga.in_deg > 0
        err_split_f = np.where(mask_out, out_sum - state.f_vertex, 0.0)
        err_split_b = np.where(mask_in, in_sum - state.b_vertex, 0.0)
        self._record(t, "split_f", err_split_f, state.f_vertex)
        self._record(t, "split_b", err_split_b, state.b_vertex)
