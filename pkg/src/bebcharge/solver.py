"""Desk-scale MILP solver: certified LP relaxations plus branch and bound.

The LP backend is scipy's HiGHS interface; every relaxation reported optimal
is re-checked here (primal feasibility, dual feasibility signs, stationarity,
and strong duality from the returned marginals) before its value is trusted as
a bound.  Branch and bound is written out in full: most-fractional branching
with lowest-index tie breaks, best-first node selection with depth-first
plunging (children are solved on creation and the better one is explored
immediately), incumbent warm starts, and a relative-gap stopping rule.  All
choices are deterministic so repeated solves of the same model produce
byte-identical results.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .milp import MilpModel, window_averages

__all__ = [
    "SolverError",
    "SolveLimits",
    "LpResult",
    "MilpSolution",
    "solve_lp",
    "branch_and_bound",
    "validate_solution",
    "build_warm_start",
]

_FEAS_TOL = 1e-7
_CERT_TOL = 1e-6


class SolverError(RuntimeError):
    """Raised for states that indicate a modelling bug, not a hard instance."""


@dataclass(frozen=True)
class SolveLimits:
    """Branch-and-bound stopping rules.

    ``max_nodes`` caps LP solves (the root counts as one); ``mip_gap`` is the
    relative incumbent/bound gap below which the search stops; ``time_limit_s``
    is wall-clock and off by default so solves stay deterministic.
    """

    max_nodes: int = 200_000
    mip_gap: float = 1e-4
    integrality_tol: float = 1e-6
    time_limit_s: Optional[float] = None


@dataclass(frozen=True)
class LpResult:
    status: str  # optimal / infeasible / unbounded / error
    objective: float
    x: Optional[np.ndarray]
    certified: bool
    certificate: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class MilpSolution:
    status: str  # optimal / feasible / infeasible / unknown / unbounded
    objective: float
    assignment: Optional[np.ndarray]
    bound: float
    nodes_explored: int
    gap: float

    @property
    def has_solution(self) -> bool:
        return self.assignment is not None


class _Matrices:
    """The model in linprog form; reused across branch-and-bound nodes with
    bounds-only updates."""

    def __init__(self, model: MilpModel):
        n = model.n_variables
        self.c = model.objective_vector()
        eq_r: List[int] = []
        eq_c: List[int] = []
        eq_v: List[float] = []
        eq_rhs: List[float] = []
        ub_r: List[int] = []
        ub_c: List[int] = []
        ub_v: List[float] = []
        ub_rhs: List[float] = []
        for con in model.constraints:
            if con.sense == "==":
                row = len(eq_rhs)
                eq_rhs.append(con.rhs)
                for i, coef in con.coeffs:
                    eq_r.append(row)
                    eq_c.append(i)
                    eq_v.append(coef)
            else:
                # >= rows are negated into <= form
                sign = 1.0 if con.sense == "<=" else -1.0
                row = len(ub_rhs)
                ub_rhs.append(sign * con.rhs)
                for i, coef in con.coeffs:
                    ub_r.append(row)
                    ub_c.append(i)
                    ub_v.append(sign * coef)
        self.A_eq = sp.csr_matrix((eq_v, (eq_r, eq_c)), shape=(len(eq_rhs), n))
        self.b_eq = np.array(eq_rhs)
        self.A_ub = sp.csr_matrix((ub_v, (ub_r, ub_c)), shape=(len(ub_rhs), n))
        self.b_ub = np.array(ub_rhs)

    def solve(self, lb: np.ndarray, ub: np.ndarray, cost: Optional[np.ndarray] = None):
        res = linprog(
            self.c if cost is None else cost,
            A_ub=self.A_ub,
            b_ub=self.b_ub,
            A_eq=self.A_eq,
            b_eq=self.b_eq,
            bounds=np.column_stack([lb, ub]),
            method="highs",
        )
        if res.status == 4:
            # numerical difficulties: retry on the dual simplex, which rebuilds
            # the basis from scratch and usually clears them (deterministic)
            res = linprog(
                self.c if cost is None else cost,
                A_ub=self.A_ub,
                b_ub=self.b_ub,
                A_eq=self.A_eq,
                b_eq=self.b_eq,
                bounds=np.column_stack([lb, ub]),
                method="highs-ds",
            )
        return res


def _certify(mats: _Matrices, res) -> Tuple[bool, Dict[str, float]]:
    """Re-check the optimality conditions HiGHS claims, from its own output."""
    x = res.x
    scale = 1.0 + float(np.abs(mats.c).max(initial=0.0))
    primal_eq = (
        float(np.abs(mats.A_eq @ x - mats.b_eq).max(initial=0.0))
        if mats.A_eq.shape[0]
        else 0.0
    )
    primal_ub = (
        float(np.maximum(mats.A_ub @ x - mats.b_ub, 0.0).max(initial=0.0))
        if mats.A_ub.shape[0]
        else 0.0
    )
    y_eq = np.asarray(res.eqlin.marginals) if mats.A_eq.shape[0] else np.zeros(0)
    y_ub = np.asarray(res.ineqlin.marginals) if mats.A_ub.shape[0] else np.zeros(0)
    lam_lo = np.asarray(res.lower.marginals)
    lam_hi = np.asarray(res.upper.marginals)
    # for a minimization, relaxing a <= row or an upper bound cannot raise the
    # optimum, and raising a lower bound cannot lower it
    dual_sign = max(
        float(np.maximum(y_ub, 0.0).max(initial=0.0)),
        float(np.maximum(lam_hi, 0.0).max(initial=0.0)),
        float(np.maximum(-lam_lo, 0.0).max(initial=0.0)),
    )
    stationarity = mats.c - mats.A_eq.T @ y_eq - mats.A_ub.T @ y_ub - lam_lo - lam_hi
    stat_res = float(np.abs(stationarity).max(initial=0.0))
    lb = x - res.lower.residual  # reconstruct the bound vectors
    ub = x + res.upper.residual
    # a multiplier on an infinite bound would make the dual objective useless
    stray = bool(
        np.any((lam_lo != 0.0) & ~np.isfinite(lb))
        or np.any((lam_hi != 0.0) & ~np.isfinite(ub))
    )
    lo_term = float(np.sum(np.where(np.isfinite(lb), lb, 0.0) * lam_lo))
    hi_term = float(np.sum(np.where(np.isfinite(ub), ub, 0.0) * lam_hi))
    dual_obj = float(mats.b_eq @ y_eq + mats.b_ub @ y_ub) + lo_term + hi_term
    duality_gap = (
        math.inf if stray else abs(dual_obj - res.fun) / (1.0 + abs(res.fun))
    )
    cert = {
        "primal_eq_residual": primal_eq,
        "primal_ub_residual": primal_ub,
        "dual_sign_violation": dual_sign,
        "stationarity_residual": stat_res,
        "duality_gap": duality_gap,
    }
    ok = (
        primal_eq <= _FEAS_TOL
        and primal_ub <= _FEAS_TOL
        and dual_sign <= _CERT_TOL
        and stat_res <= _CERT_TOL * scale
        and duality_gap <= _CERT_TOL
    )
    return ok, cert


def solve_lp(
    model: MilpModel,
    lb: Optional[np.ndarray] = None,
    ub: Optional[np.ndarray] = None,
) -> LpResult:
    """Solve the continuous relaxation, optionally under tightened bounds."""
    mats = _Matrices(model)
    lb0, ub0 = model.bound_arrays()
    lb = lb0 if lb is None else np.asarray(lb, dtype=float)
    ub = ub0 if ub is None else np.asarray(ub, dtype=float)
    res = mats.solve(lb, ub)
    if res.status == 2:
        return LpResult("infeasible", math.inf, None, False)
    if res.status == 3:
        return LpResult("unbounded", -math.inf, None, False)
    if res.status != 0:
        return LpResult("error", math.nan, None, False)
    ok, cert = _certify(mats, res)
    return LpResult("optimal", float(res.fun), np.asarray(res.x), ok, cert)


def validate_solution(model: MilpModel, x: np.ndarray, tol: float = 1e-6) -> Dict:
    """Residual report for an assignment: worst violation per constraint
    family plus bound and integrality violations.  ``ok`` summarizes."""
    x = np.asarray(x, dtype=float)
    lb, ub = model.bound_arrays()
    report: Dict = {"families": {}}
    worst = 0.0
    for con in model.constraints:
        lhs = sum(coef * x[i] for i, coef in con.coeffs)
        if con.sense == "==":
            viol = abs(lhs - con.rhs)
        elif con.sense == "<=":
            viol = max(0.0, lhs - con.rhs)
        else:
            viol = max(0.0, con.rhs - lhs)
        fam = report["families"]
        fam[con.family] = max(fam.get(con.family, 0.0), viol)
        worst = max(worst, viol)
    bound_viol = float(
        max(
            np.maximum(lb - x, 0.0).max(initial=0.0),
            np.maximum(x - ub, 0.0).max(initial=0.0),
        )
    )
    int_idx = model.integer_indices()
    int_viol = (
        float(np.abs(x[int_idx] - np.round(x[int_idx])).max(initial=0.0))
        if len(int_idx)
        else 0.0
    )
    report["max_constraint_violation"] = worst
    report["max_bound_violation"] = bound_viol
    report["max_integrality_violation"] = int_viol
    report["ok"] = worst <= tol and bound_viol <= tol and int_viol <= tol
    return report


def _is_integral(x: np.ndarray, int_idx: np.ndarray, tol: float) -> bool:
    if not len(int_idx):
        return True
    return bool(np.abs(x[int_idx] - np.round(x[int_idx])).max() <= tol)


def _branch_variable(x: np.ndarray, int_idx: np.ndarray, tol: float) -> Optional[int]:
    """Most fractional integer variable; ties go to the lowest index."""
    best: Optional[int] = None
    best_dist = math.inf
    for i in int_idx:
        frac = x[i] - math.floor(x[i])
        if min(frac, 1.0 - frac) <= tol:
            continue
        dist = abs(frac - 0.5)
        if dist < best_dist - 1e-12:
            best_dist = dist
            best = int(i)
    return best


def _relative_gap(objective: float, bound: float) -> float:
    if objective == math.inf:
        return math.inf
    return max(0.0, objective - bound) / max(1.0, abs(objective))


def _lp_guided_incumbent(
    mats: _Matrices,
    model: MilpModel,
    lb: np.ndarray,
    ub: np.ndarray,
    x_root: np.ndarray,
    int_idx: np.ndarray,
) -> Optional[np.ndarray]:
    """Flow-aware primal heuristic for an early incumbent.

    The root relaxation of these scheduling models is typically near-integral
    but massively degenerate (equal-cost placements of the same energy), so
    plain branching can wander thousands of nodes before its first leaf, and
    coordinate-wise rounding fights the flow equalities.  Instead, read the
    relaxation's *energy pattern*: per visit, keep the charger type carrying
    the most LP energy and the step range it uses (widened to the whole visit
    in a second attempt), trim whole intervals against unit counts, lift the
    survivors to an integral unit routing, then freeze the integer block and
    re-optimize the continuous block under the true objective.  Every
    tie-break is deterministic.
    """
    inst = model.instance
    gain_tol = 1e-7

    def lp_energy(bus_id, tid, k_start, k_end):
        steps = [
            k
            for k in range(k_start, k_end)
            if (bus_id, k, tid) in model.g_of
            and x_root[model.g_of[(bus_id, k, tid)]] > gain_tol
        ]
        total = sum(x_root[model.g_of[(bus_id, k, tid)]] for k in steps)
        return total, steps

    candidates = []  # (energy, bus, tid, k0, k1, visit span) per visit
    for group in model.graph.groups:
        v = group.visit
        best = None
        for tid in sorted(v.charger_type_ids):
            total, steps = lp_energy(v.bus_id, tid, v.k_start, v.k_end)
            if total > gain_tol and (best is None or total > best[0]):
                best = (total, tid, steps)
        if best is not None:
            total, tid, steps = best
            candidates.append(
                (total, v.bus_id, tid, min(steps), max(steps) + 1,
                 v.k_start, v.k_end)
            )

    counts = {sub.charger_type_id: sub.count for sub in model.graph.subgraphs}

    def trim_to_capacity(runs):
        kept = list(runs)
        while True:
            over = {}
            for idx, (en, bus, tid, k0, k1) in enumerate(kept):
                for k in range(k0, k1):
                    over.setdefault((tid, k), []).append(idx)
            bad = sorted(
                key for key, users in over.items()
                if len(users) > counts[key[0]]
            )
            if not bad:
                return kept
            users = over[bad[0]]
            victim = min(
                users, key=lambda i: (kept[i][0], kept[i][1], kept[i][3])
            )
            kept.pop(victim)

    for widen in (False, True):
        runs = [
            (en, bus, tid, vk0 if widen else k0, vk1 if widen else k1)
            for en, bus, tid, k0, k1, vk0, vk1 in candidates
        ]
        kept = trim_to_capacity(runs)
        routed = _route_interval_flows(
            model, [(bus, tid, k0, k1) for _, bus, tid, k0, k1 in kept]
        )
        if routed is None:
            continue
        flb, fub = lb.copy(), ub.copy()
        flb[int_idx] = fub[int_idx] = routed[int_idx]
        res = mats.solve(flb, fub)
        if res.status != 0:
            continue
        cand = np.asarray(res.x)
        if validate_solution(model, cand)["ok"]:
            return cand
    return None


def branch_and_bound(
    model: MilpModel,
    limits: SolveLimits = SolveLimits(),
    warm_start: Optional[np.ndarray] = None,
    on_improvement: Optional[Callable[[str], None]] = None,
) -> MilpSolution:
    """Solve the model to integrality.

    A ``warm_start`` assignment, when it validates, becomes the initial
    incumbent so large parts of the tree prune immediately; an invalid warm
    start is ignored rather than trusted.  Without one, a fractional root
    triggers an LP-guided primal heuristic so even node-limited solves
    usually carry a feasible schedule and a true optimality gap.

    ``on_improvement`` receives one CSV line per incumbent improvement,
    ``time_s,nodes,incumbent,bound,gap`` — diagnostics only, never part of
    solve results (wall time is not deterministic).
    """
    mats = _Matrices(model)
    lb0, ub0 = model.bound_arrays()
    int_idx = model.integer_indices()
    t0 = time.monotonic()

    incumbent: Optional[np.ndarray] = None
    inc_obj = math.inf

    def note_improvement(bound_now: float) -> None:
        if on_improvement is None:
            return
        gap_now = _relative_gap(inc_obj, bound_now)
        on_improvement(
            f"{time.monotonic() - t0:.3f},{nodes},{inc_obj:.9g},"
            f"{bound_now:.9g},{gap_now:.6g}"
        )

    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float)
        if ws.shape == (model.n_variables,) and validate_solution(model, ws)["ok"]:
            incumbent = ws
            inc_obj = float(mats.c @ ws)

    nodes = 0

    def solve_node(lb: np.ndarray, ub: np.ndarray):
        nonlocal nodes
        nodes += 1
        res = mats.solve(lb, ub)
        if res.status == 2:
            return None
        if res.status == 3:
            raise SolverError("relaxation unbounded below a bounded parent")
        if res.status != 0:
            raise SolverError(f"LP backend failure (status {res.status})")
        return float(res.fun), np.asarray(res.x)

    root = solve_node(lb0, ub0)
    if root is None:
        if incumbent is not None:
            raise SolverError("warm start validated but the root LP is infeasible")
        return MilpSolution("infeasible", math.inf, None, math.inf, nodes, math.inf)

    # open nodes: (bound, insertion sequence, lb, ub, relaxation x)
    heap: List[Tuple[float, int, np.ndarray, np.ndarray, np.ndarray]] = []
    seq = 0
    current: Optional[Tuple[float, np.ndarray, np.ndarray, np.ndarray]] = None
    root_bound, root_x = root

    def global_bound(local: float) -> float:
        return min(local, heap[0][0]) if heap else local

    if incumbent is not None:
        note_improvement(root_bound)
    if incumbent is None and not _is_integral(root_x, int_idx, limits.integrality_tol):
        pumped = _lp_guided_incumbent(mats, model, lb0, ub0, root_x, int_idx)
        if pumped is not None:
            incumbent = pumped
            inc_obj = float(mats.c @ pumped)
            note_improvement(root_bound)
    if root_bound < inc_obj:
        current = (root_bound, lb0, ub0, root_x)

    def out_of_budget() -> bool:
        if nodes >= limits.max_nodes:
            return True
        if limits.time_limit_s is not None:
            return time.monotonic() - t0 >= limits.time_limit_s
        return False

    limited = False
    while current is not None or heap:
        if current is None:
            bound, _, lb, ub, x = heapq.heappop(heap)
            if bound >= inc_obj:
                continue
            current = (bound, lb, ub, x)
        bound, lb, ub, x = current
        current = None
        if bound >= inc_obj:
            continue
        if _relative_gap(inc_obj, bound) <= limits.mip_gap and incumbent is not None:
            # nothing open can improve the incumbent beyond the gap
            return MilpSolution(
                "optimal", inc_obj, incumbent, bound, nodes, _relative_gap(inc_obj, bound)
            )
        branch = _branch_variable(x, int_idx, limits.integrality_tol)
        if branch is None:
            if bound < inc_obj:
                incumbent = x
                inc_obj = bound
                note_improvement(global_bound(bound))
            continue
        if out_of_budget():
            limited = True
            heapq.heappush(heap, (bound, seq, lb, ub, x))
            seq += 1
            break
        pivot = x[branch]
        children = []
        for side in ("down", "up"):
            clb, cub = lb.copy(), ub.copy()
            if side == "down":
                cub[branch] = math.floor(pivot)
            else:
                clb[branch] = math.ceil(pivot)
            if clb[branch] > cub[branch] + 1e-12:
                continue
            sol = solve_node(clb, cub)
            if sol is None:
                continue
            cbound, cx = sol
            if cbound >= inc_obj:
                continue
            if _is_integral(cx, int_idx, limits.integrality_tol):
                incumbent = cx
                inc_obj = cbound
                note_improvement(global_bound(bound))
                continue
            children.append((cbound, clb, cub, cx))
        children.sort(key=lambda ch: ch[0])
        if children:
            current = children[0]
            for ch in children[1:]:
                heapq.heappush(heap, (ch[0], seq, ch[1], ch[2], ch[3]))
                seq += 1

    open_bounds = [b for b, *_ in heap if b < inc_obj]
    if current is not None:
        open_bounds.append(current[0])
    bound = min(open_bounds) if open_bounds else inc_obj
    gap = _relative_gap(inc_obj, bound)
    if incumbent is None:
        status = "unknown" if limited else "infeasible"
        bound = root_bound if limited else math.inf
        return MilpSolution(status, math.inf, None, bound, nodes, math.inf)
    status = "feasible" if (limited and gap > limits.mip_gap) else "optimal"
    return MilpSolution(status, inc_obj, incumbent, bound, nodes, gap)


# ---------------------------------------------------------------------------
# warm starts from a previous plan


def _route_interval_flows(
    model: MilpModel,
    runs: Sequence[Tuple[str, str, int, int]],
) -> Optional[np.ndarray]:
    """Set every edge variable of a full-length assignment from charging runs:
    charge/entering/leaving edges of each run carry one unit, the remaining
    units ride the rest chain by conservation.  Returns None when a run cannot
    be realized (missing edge) or would need more units than exist."""
    graph = model.graph
    K = model.instance.n_steps
    x = np.zeros(model.n_variables)

    known_types = {sub.charger_type_id for sub in graph.subgraphs}
    for bus_id, tid, k0, k1 in runs:
        if tid not in known_types:
            return None
        for k in range(k0, k1):
            gid = graph.sigma.get((bus_id, k, tid))
            if gid is None:
                return None
            x[model.x_of[gid]] = 1.0
        # one unit must enter before the run and leave after it
        enter_gid = _entering_edge(graph, tid, bus_id, k0)
        if enter_gid is None:
            return None
        x[model.x_of[enter_gid]] = 1.0
        leave_gid = _leaving_edge(graph, tid, bus_id, k1)
        if leave_gid is None:
            return None
        x[model.x_of[leave_gid]] = 1.0

    for sub in graph.subgraphs:
        busy = np.zeros(K, dtype=float)
        continuation = 0.0
        exits_at_end = 0.0
        for i, e in enumerate(sub.edges):
            val = x[model.x_of[sub.edge_offset + i]]
            if val == 0.0 or e.bus_id is None:
                continue
            if e.kind == "source":
                continuation += val
            elif e.kind == "sink":
                exits_at_end += val
            else:
                busy[e.k_from] += val
        source_rest = sub.count - continuation
        if source_rest < -1e-9:
            return None
        for i, e in enumerate(sub.edges):
            vid = model.x_of[sub.edge_offset + i]
            if e.bus_id is not None:
                continue
            if e.kind == "source":
                x[vid] = source_rest
            elif e.kind == "rest":
                x[vid] = sub.count - busy[e.k_from]
            elif e.kind == "sink":
                x[vid] = sub.count - exits_at_end
        rest_flows = [
            x[model.x_of[sub.edge_offset + i]]
            for i, e in enumerate(sub.edges)
            if e.bus_id is None
        ]
        if min(rest_flows, default=0.0) < -1e-9:
            return None  # more simultaneous charging than chargers
    return x


def build_warm_start(
    model: MilpModel,
    intervals: Sequence[Tuple[str, str, int, int]],
) -> Optional[np.ndarray]:
    """Lift charging intervals (in this model's step coordinates) to a full
    assignment: flows routed through the action graph, gains forward-simulated
    at the binding bound, meter and window variables recomputed.  Returns None
    when the intervals cannot be realized in this model (missing edges, bound
    violations, capacity conflicts), so callers can fall back to a cold solve.
    """
    inst = model.instance
    scenario = inst.scenario
    K = inst.n_steps
    options = model.options
    lb, ub = model.bound_arrays()

    from .milp import pair_discrete_params

    # clip to the window, drop what falls outside entirely
    runs: List[Tuple[str, str, int, int]] = []
    for bus_id, tid, k0, k1 in intervals:
        k0c, k1c = max(k0, 0), min(k1, K)
        if k1c > k0c:
            runs.append((bus_id, tid, k0c, k1c))

    x = _route_interval_flows(model, runs)
    if x is None:
        return None

    # forward-simulate charge levels at the binding gain bound
    run_type: Dict[Tuple[str, int], str] = {}
    for bus_id, tid, k0, k1 in runs:
        for k in range(k0, k1):
            if (bus_id, k) in run_type:
                return None  # overlapping runs for one bus
            run_type[(bus_id, k)] = tid
    for j, bus in enumerate(scenario.buses):
        s = lb[model.s_of[(bus.id, 0)]]  # pinned start level
        x[model.s_of[(bus.id, 0)]] = s
        for k in range(K):
            tid = run_type.get((bus.id, k))
            if tid is not None:
                par = pair_discrete_params(
                    bus, scenario.charger_by_id(tid), inst.delta_hours
                )
                if options.fixed_rate:
                    g = par.b_bar_cc
                else:
                    caps = [par.b_bar_cc, bus.capacity_kwh]
                    if not options.linear_profile:
                        caps.append((par.a_bar_cv - 1.0) * s + par.b_bar_cv)
                    caps.append(ub[model.s_of[(bus.id, k + 1)]] - s)
                    g = max(0.0, min(caps))
                x[model.g_of[(bus.id, k, tid)]] = g
                s = s + g
            elif inst.charging_types_at(bus.id, k):
                pass  # plugged-out step inside a visit: the level holds
            else:
                s = s - float(inst.discharge_kwh[j, k])
            idx = model.s_of[(bus.id, k + 1)]
            if s < lb[idx] - 1e-9 or s > ub[idx] + 1e-9:
                if model.options.soft_min_soc and s < lb[idx]:
                    pass  # slacks absorb it below
                else:
                    return None
            x[idx] = s

    # slacks, terminal errors, meter chain
    if options.soft_min_soc:
        for v_idx, var in enumerate(model.variables):
            if var.role == "soc_slack":
                s_val = x[model.s_of[(var.bus_id, var.k)]]
                cap = scenario.bus_by_id(var.bus_id).capacity_kwh
                lo = (scenario.bus_by_id(var.bus_id).min_soc + options.soc_buffer) * cap
                x[v_idx] = max(0.0, lo - s_val)
    for bus_id, err_idx in model.err_of.items():
        target = model.terminal_targets[bus_id]
        x[err_idx] = abs(x[model.s_of[(bus_id, K)]] - target)
    for k in range(K):
        total = float(inst.load_kwh[k])
        for (bus_id, kk, tid), gi in model.g_of.items():
            if kk == k:
                total += x[gi]
        x[model.e_of[k]] = total
    p_vals = window_averages(
        [x[model.e_of[k]] for k in range(K)],
        inst.delta_min,
        scenario.rates.demand_window_minutes,
        history=options.energy_history,
    )
    for k in range(K + 1):
        x[model.p_of[k]] = p_vals[k]
    x[model.peak_idx] = float(p_vals.max()) if len(p_vals) else 0.0
    mask = inst.instant_in_peak
    x[model.peak_tou_idx] = float(p_vals[mask].max()) if mask.any() else 0.0

    return x if validate_solution(model, x)["ok"] else None


def _entering_edge(graph, type_id, bus_id, k0) -> Optional[int]:
    """The unique edge whose head is the run's first charge vertex."""
    for gid, sub, e in graph.iter_edges():
        if sub.charger_type_id != type_id or e.bus_id != bus_id:
            continue
        head = sub.vertices[e.head]
        if head.kind == "charge" and head.bus_id == bus_id and head.k == k0:
            tail = sub.vertices[e.tail]
            if tail.kind in ("rest", "source"):
                return gid
    return None


def _leaving_edge(graph, type_id, bus_id, k1) -> Optional[int]:
    """The unique edge whose tail is the vertex just after the run's last
    charge step."""
    for gid, sub, e in graph.iter_edges():
        if sub.charger_type_id != type_id or e.bus_id != bus_id:
            continue
        tail = sub.vertices[e.tail]
        if tail.kind == "charge" and tail.bus_id == bus_id and tail.k == k1:
            head = sub.vertices[e.head]
            if head.kind in ("rest", "sink"):
                return gid
    return None
