"""Action-space graph: incidence, capacities, visit groups, plan preference."""

import dataclasses

import numpy as np
import pytest

from bebcharge.graph import (
    Edge,
    SubGraph,
    Vertex,
    apply_plan_preference,
    build_action_graph,
    close_edges,
    dump_edges_csv,
    flow_rhs,
    incidence_matrix,
)
from bebcharge.scenario import discretize

from helpers import single_visit_scenario, two_type_scenario


def sample_subgraph():
    """Four vertices, five edges, constructed in a fixed order."""
    vertices = tuple(Vertex("rest", k=i) for i in range(4))
    edges = (
        Edge("rest", 0, 1, 0, 1, 1),
        Edge("rest", 1, 2, 1, 2, 1),
        Edge("rest", 2, 1, 2, 1, 1),
        Edge("rest", 2, 3, 2, 3, 1),
        Edge("rest", 1, 3, 1, 3, 1),
    )
    return SubGraph("t", 1, vertices, edges)


def test_incidence_of_sample_graph_matches_hand_computation():
    expected = np.array(
        [
            [1, 0, 0, 0, 0],
            [-1, 1, -1, 0, 1],
            [0, -1, 1, 1, 0],
            [0, 0, 0, -1, -1],
        ],
        dtype=float,
    )
    D = incidence_matrix(sample_subgraph()).toarray()
    np.testing.assert_array_equal(D, expected)


def test_incidence_columns_sum_to_zero_on_built_graphs():
    inst = discretize(two_type_scenario(), 5.0)
    graph = build_action_graph(inst)
    for sub in graph.subgraphs:
        D = incidence_matrix(sub)
        np.testing.assert_array_equal(np.asarray(D.sum(axis=0)).ravel(), 0.0)
        # each column has exactly one +1 and one -1
        assert (D.toarray() == 1).sum(axis=0).max() == 1
        assert (D.toarray() == -1).sum(axis=0).max() == 1


def test_all_rest_flow_satisfies_balance():
    inst = discretize(two_type_scenario(charger_counts=(2, 3)), 5.0)
    graph = build_action_graph(inst)
    for sub in graph.subgraphs:
        D = incidence_matrix(sub)
        x = np.zeros(sub.n_edges)
        for i, e in enumerate(sub.edges):
            if e.kind in ("rest",) or (e.kind in ("source", "sink") and e.bus_id is None):
                x[i] = sub.count
        np.testing.assert_allclose(D @ x, flow_rhs(sub))


def test_capacities_follow_the_charging_vertex_rule():
    inst = discretize(two_type_scenario(charger_counts=(2, 1)), 5.0)
    graph = build_action_graph(inst)
    for sub in graph.subgraphs:
        for e in sub.edges:
            head_kind = sub.vertices[e.head].kind
            if head_kind == "charge":
                assert e.capacity == 1
            elif e.kind in ("rest", "source", "sink") and e.bus_id is None:
                assert e.capacity == sub.count


def test_single_visit_group_and_entering_edges():
    # visit of exactly 2 steps, one charger type
    scn = single_visit_scenario(visit_start=330, visit_end=340)
    inst = discretize(scn, 5.0)
    graph = build_action_graph(inst)
    assert len(graph.groups) == 1
    grp = graph.groups[0]
    entering = [graph.edge(i) for i in grp.entering_edges]
    assert all(e.kind == "transition" for e in entering)
    assert sorted(e.k_to for e in entering) == [6, 7]  # steps at 330 and 335
    assert all(e.bus_id == "b1" for e in entering)
    # charge edges of the visit are inside the group, not entering
    charge_ids = [gid for gid, _, e in graph.iter_edges() if e.kind == "charge"]
    assert set(charge_ids).isdisjoint(grp.entering_edges)
    assert len(charge_ids) == 2


def test_group_spans_charger_types_at_same_station():
    inst = discretize(two_type_scenario(visit_start=330, visit_end=340), 5.0)
    graph = build_action_graph(inst)
    assert len(graph.groups) == 1
    grp = graph.groups[0]
    sub_of = {}
    for gid in grp.entering_edges:
        sub_of.setdefault(graph.subgraph_of_edge(gid).charger_type_id, 0)
        sub_of[graph.subgraph_of_edge(gid).charger_type_id] += 1
    assert sub_of == {"fast": 2, "slow": 2}


def test_sigma_maps_exactly_the_available_steps():
    inst = discretize(two_type_scenario(visit_start=330, visit_end=345), 5.0)
    graph = build_action_graph(inst)
    v = inst.visits[0]
    expected_keys = {
        (v.bus_id, k, tid)
        for tid in v.charger_type_ids
        for k in range(v.k_start, v.k_end)
    }
    assert set(graph.sigma.keys()) == expected_keys
    for key, gid in graph.sigma.items():
        e = graph.edge(gid)
        assert e.kind == "charge"
        assert (e.bus_id, e.k_from) == (key[0], key[1])


def test_attachment_creates_source_continuation_edge():
    scn = single_visit_scenario(visit_start=330, visit_end=345)
    inst = discretize(scn, 5.0, t0_min=335, t_end_min=360)  # window starts mid-visit
    bare = build_action_graph(inst)
    attached = build_action_graph(inst, attachments=[("b1", "fast")])
    def source_charge_edges(g):
        return [
            e for _, _, e in g.iter_edges() if e.kind == "source" and e.bus_id == "b1"
        ]
    assert source_charge_edges(bare) == []
    cont = source_charge_edges(attached)
    assert len(cont) == 1
    assert cont[0].k_to == 0
    # the continuation edge counts as entering the visit group
    grp = attached.groups[0]
    gid = [i for i, _, e in attached.iter_edges() if e is cont[0]][0]
    assert gid in grp.entering_edges


def test_attachment_without_step_zero_availability_is_ignored():
    scn = single_visit_scenario(visit_start=330, visit_end=345)
    inst = discretize(scn, 5.0)  # visit starts mid-window, not at step 0
    g = build_action_graph(inst, attachments=[("b1", "fast")])
    assert [e for _, _, e in g.iter_edges() if e.kind == "source" and e.bus_id] == []


def test_build_is_deterministic():
    inst = discretize(two_type_scenario(charger_counts=(2, 2)), 5.0)
    a = build_action_graph(inst)
    b = build_action_graph(inst)
    assert a.subgraphs == b.subgraphs
    assert a.groups == b.groups
    assert a.sigma == b.sigma


def test_edges_ordered_by_tail_then_head():
    inst = discretize(two_type_scenario(), 5.0)
    graph = build_action_graph(inst)
    for sub in graph.subgraphs:
        keys = [(e.tail, e.head) for e in sub.edges]
        assert keys == sorted(keys)


# ---------------------------------------------------------------------------
# plan preference


@dataclasses.dataclass
class FakePlan:
    intervals: list
    t0_min: float
    delta_min: float


def test_close_edges_match_previous_plan_intervals():
    inst = discretize(single_visit_scenario(visit_start=330, visit_end=345), 5.0)
    graph = build_action_graph(inst)
    # previous plan on a 3-minute grid charging b1 on fast during [330, 340)
    plan = FakePlan(intervals=[("b1", "fast", 10, 13.3333333)], t0_min=300, delta_min=3.0)
    close = close_edges(graph, plan)
    kinds = {}
    for gid in close:
        e = graph.edge(gid)
        kinds.setdefault(e.kind, []).append(e)
    # charge edges overlapping [330, 340): steps starting 330 and 335
    assert sorted(e.k_from for e in kinds["charge"]) == [6, 7]
    # rest edges of the fast type overlapping the busy span are not close
    for e in kinds["rest"]:
        lo = inst.t0_min + e.k_from * inst.delta_min
        hi = inst.t0_min + e.k_to * inst.delta_min
        assert not (min(hi, 340.0) - max(lo, 330.0) > 0)


def test_close_edges_empty_plan_returns_all_rest_edges():
    inst = discretize(single_visit_scenario(), 5.0)
    graph = build_action_graph(inst)
    close = close_edges(graph, FakePlan(intervals=[], t0_min=300, delta_min=5.0))
    rest_ids = [gid for gid, _, e in graph.iter_edges() if e.kind == "rest"]
    assert close == rest_ids


def test_apply_plan_preference_lowers_only_close_edges():
    inst = discretize(single_visit_scenario(), 5.0)
    graph = build_action_graph(inst)
    close = [3, 5, 7]
    pref = apply_plan_preference(graph, close, 0.25)
    assert graph.edge_costs.sum() == 0.0  # untouched
    for gid in range(graph.n_edges):
        expected = -0.25 if gid in close else 0.0
        assert pref.edge_costs[gid] == expected
    with pytest.raises(ValueError):
        apply_plan_preference(graph, close, -1.0)


def test_dump_edges_csv_round_trips_structure(tmp_path):
    inst = discretize(two_type_scenario(), 5.0)
    graph = build_action_graph(inst)
    path = tmp_path / "edges.csv"
    dump_edges_csv(graph, str(path))
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "edge_id,kind,bus,charger_type,k_from,k_to,capacity,cost"
    assert len(lines) == 1 + graph.n_edges
    first = lines[1].split(",")
    assert first[0] == "0"
    assert first[1] in ("source", "sink", "rest", "charge", "transition")
