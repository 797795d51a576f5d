"""Independent test oracles: a dict-based reference implementation of the
update step (kept deliberately separate from the engine's vectorized path)
and a brute-force min-leakage path enumerator with sound pruning."""

from __future__ import annotations

import math

from trailflow.graph import Path


def reference_step(graph, p, fe, be, delta, schedule, t):
    """One synchronous update on plain dicts, straight from the equations.

    Returns (p', fe', be', fv', bv', delivered_f, delivered_b) where flows
    keyed by (u, v) and vertex amounts keyed by vertex id.
    """
    edges = graph.edges
    newp = {e: delta * (p[e] + fe[e] + be[e]) for e in edges}
    fv = {}
    bv = {}
    for v in range(graph.n_vertices):
        acc_f = sum(fe[(u, w)] for (u, w) in edges if w == v)
        acc_b = sum(be[(u, w)] for (u, w) in edges if u == v)
        fv[v] = (1.0 - graph.leakage[v]) * acc_f
        bv[v] = (1.0 - graph.leakage[v]) * acc_b
    delivered_f = fv[graph.destination]
    delivered_b = bv[graph.source]
    fv[graph.destination] = 0.0
    bv[graph.source] = 0.0
    fv[graph.source] += schedule.forward_at(t + 1)
    bv[graph.destination] += schedule.backward_at(t + 1)

    nfe = {e: 0.0 for e in edges}
    nbe = {e: 0.0 for e in edges}
    for v in range(graph.n_vertices):
        outs = [e for e in edges if e[0] == v]
        if outs:
            tot = sum(newp[e] for e in outs)
            for e in outs:
                frac = newp[e] / tot if tot > 0 else 1.0 / len(outs)
                nfe[e] = fv[v] * frac
        ins = [e for e in edges if e[1] == v]
        if ins:
            tot = sum(newp[e] for e in ins)
            for e in ins:
                frac = newp[e] / tot if tot > 0 else 1.0 / len(ins)
                nbe[e] = bv[v] * frac
    return newp, nfe, nbe, fv, bv, delivered_f, delivered_b


def brute_force_min_leakage(graph):
    """Exhaustive search over simple s->d paths for the maximum interior
    survival product, with branch-and-bound pruning (additive non-negative
    weights only grow along a path). Lexicographic tie-break."""
    w = []
    for v in range(graph.n_vertices):
        l = float(graph.leakage[v])
        w.append(math.inf if l >= 1.0 else -math.log1p(-l))
    best = None
    best_w = math.inf

    def dfs(v, visited, acc, seq):
        nonlocal best, best_w
        if acc > best_w:
            return
        if v == graph.destination:
            key = tuple(seq)
            if acc < best_w or (acc == best_w and (best is None or key < best.vertices)):
                best = Path(key)
                best_w = acc
            return
        for u in sorted(graph.out_neighbors(v)):
            if u in visited:
                continue
            cost = acc + (w[u] if u != graph.destination else 0.0)
            if not math.isfinite(cost):
                continue
            visited.add(u)
            seq.append(u)
            dfs(u, visited, cost, seq)
            visited.discard(u)
            seq.pop()

    dfs(graph.source, {graph.source}, 0.0, [graph.source])
    return best
