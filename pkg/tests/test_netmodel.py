import pytest
import yaml

from msjc import fixtures
from msjc.netmodel import (
    ScenarioError,
    boundary_key,
    candidate_hyper_path,
    load_scenario,
    scenario_from_dict,
    scenario_to_dict,
    serialize_scenario,
)

MINIMAL = {
    "regions": {"R1": {"neighbors": ["R2"]}, "R2": {"neighbors": ["R1"]}},
    "links": {
        "a": {"from": "n0", "to": "g", "region": "R1", "length_m": 100.0},
        "b": {"from": "g", "to": "n1", "region": "R2", "length_m": 100.0},
    },
    "intersections": {
        "g": {
            "kind": "gating",
            "boundary": ["R1", "R2"],
            "phases": {"go": ["a_0"], "stop": []},
        }
    },
    "plans": {
        "R1|R2": [
            {"id": "s0", "phases": {"g": "go"}},
            {"id": "s1", "phases": {"g": "stop"}},
        ]
    },
    "demand": {
        "horizon_s": 100.0,
        "warmup_s": 0.0,
        "od": [{"origin": "a", "destination": "b", "rate_veh_s": 0.1}],
    },
}


def _raw():
    return yaml.safe_load(yaml.safe_dump(MINIMAL))


def test_minimal_two_region_scenario(tmp_path):
    path = tmp_path / "minimal.yaml"
    path.write_text(yaml.safe_dump(MINIMAL))
    sc = load_scenario(path)
    assert sc.partition.regions == ("R1", "R2")
    assert sc.network.links["a"].region == "R1"
    assert sc.network.lanes["a_0"].output_lanes == ("b_0",)
    assert sc.network.sink_links() == ("b",)


def test_dangling_output_lane_rejected():
    raw = _raw()
    raw["lanes"] = {"a_0": {"output_lanes": ["missing_0"]}}
    with pytest.raises(ScenarioError, match="missing_0"):
        scenario_from_dict(raw)


def test_output_lane_must_be_downstream():
    raw = _raw()
    raw["links"]["c"] = {"from": "n1", "to": "n2", "region": "R2", "length_m": 50.0}
    raw["lanes"] = {"a_0": {"output_lanes": ["c_0"]}}
    with pytest.raises(ScenarioError, match="does not start at node"):
        scenario_from_dict(raw)


def test_asymmetric_adjacency_rejected():
    raw = _raw()
    raw["regions"]["R2"]["neighbors"] = []
    with pytest.raises(ScenarioError, match="symmetric"):
        scenario_from_dict(raw)


def test_boundary_without_gating_intersection_rejected():
    raw = _raw()
    raw["intersections"]["g"]["kind"] = "non_gating"
    del raw["intersections"]["g"]["phases"]
    raw["plans"] = {"R1|R2": []}
    with pytest.raises(ScenarioError, match="gating"):
        scenario_from_dict(raw)


def test_boundary_without_plan_rejected():
    raw = _raw()
    raw["plans"] = {"R1|R2": []}
    with pytest.raises(ScenarioError, match="plan"):
        scenario_from_dict(raw)


def test_unreachable_demand_rejected():
    raw = _raw()
    raw["demand"]["od"] = [{"origin": "b", "destination": "a", "rate_veh_s": 0.1}]
    with pytest.raises(ScenarioError, match="unreachable"):
        scenario_from_dict(raw)


def test_warmup_must_precede_horizon():
    raw = _raw()
    raw["demand"]["warmup_s"] = 100.0
    with pytest.raises(ScenarioError, match="warmup"):
        scenario_from_dict(raw)


def test_grid6_partitions_six_symmetric_regions():
    sc = fixtures.grid6()
    assert len(sc.partition.regions) == 6
    for r in sc.partition.regions:
        for h in sc.partition.adjacency[r]:
            assert r in sc.partition.adjacency[h]
    # every boundary pair carries at least one plan
    for i, h in sc.partition.ordered_boundaries():
        assert sc.network.plan_set(i, h)


def test_every_lane_outputs_onto_downstream_links():
    sc = fixtures.grid6()
    for lane in sc.network.lanes.values():
        link = sc.network.links[lane.link]
        for out in lane.output_lanes:
            out_link = sc.network.links[sc.network.lanes[out].link]
            assert out_link.from_node == link.to_node


@pytest.mark.parametrize("build", [fixtures.corridor2, fixtures.grid6])
def test_scenario_round_trip(build, tmp_path):
    sc = build()
    text = serialize_scenario(sc)
    path = tmp_path / "roundtrip.yaml"
    path.write_text(text)
    sc2 = load_scenario(path)
    assert scenario_to_dict(sc2) == scenario_to_dict(sc)
    assert sc2 == sc


def test_boundary_key_is_order_free():
    assert boundary_key("R2", "R1") == ("R1", "R2")
    assert boundary_key("R1", "R2") == ("R1", "R2")


class TestCandidateHyperPath:
    def test_single_region_route(self, linear3):
        assert candidate_hyper_path(["a1", "a2"], linear3.network) == ["R1"]

    def test_consecutive_duplicates_collapse(self, linear3):
        route = ["a1", "a2", "b1", "b2", "c1"]
        assert candidate_hyper_path(route, linear3.network) == ["R1", "R2", "R3"]

    def test_reentry_preserved(self, linear3):
        route = ["a2", "b1", "rb", "ra"]
        assert candidate_hyper_path(route, linear3.network) == ["R1", "R2", "R1"]

    def test_disconnected_route_rejected(self, linear3):
        with pytest.raises(ScenarioError, match="disconnected"):
            candidate_hyper_path(["a1", "b1"], linear3.network)

    def test_unknown_link_rejected(self, linear3):
        with pytest.raises(ScenarioError, match="unknown link"):
            candidate_hyper_path(["a1", "zz"], linear3.network)
