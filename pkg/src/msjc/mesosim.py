"""Queue-based mesoscopic traffic engine.

Links are point queues: a vehicle traverses a link at free-flow speed, then
waits in a vertical queue at the stop line until a lane serves it.  Service
per lane and step is min(queued + arrived, saturation flow * dt, downstream
space), with gating approaches served only when the activated multi-phase
plan allows their lane.  Vehicles follow their routes link by link; blocked
vehicles are never removed.

The engine is deterministic: identical seed, scenario and control trace
produce an identical observation trace.
"""

from __future__ import annotations

import csv
import heapq
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .netmodel import (
    GATING,
    NON_GATING,
    MultiPhasePlan,
    Network,
    Scenario,
    boundary_key,
)

logger = logging.getLogger(__name__)


@dataclass
class _Vehicle:
    id: int
    origin: str
    destination: str
    dest_region: str
    route: tuple[str, ...]  # route[0] is always the current link
    remaining_s: float = 0.0
    queued: bool = False
    lane: str | None = None
    entered_s: float | None = None

    @property
    def current(self) -> str:
        return self.route[0]


@dataclass(frozen=True)
class VehicleView:
    """Read-only per-vehicle snapshot shipped with each observation."""

    id: int
    link: str
    region: str
    queued: bool
    lane: str | None
    queue_index: int | None
    remaining_s: float
    route: tuple[str, ...]
    origin: str
    destination: str
    dest_region: str
    entered_s: float


@dataclass(frozen=True)
class MicroObservation:
    """State snapshot after one micro step plus the flows realized during it.

    ``queues``/``arrivals`` describe the end-of-step state (the decision
    inputs for the next step); ``boundary_crossings`` are the exact counts of
    link transitions across each ordered region boundary during the step,
    expressed in veh/s.
    """

    step: int
    time_s: float
    dt_s: float
    queues: dict[str, int]
    arrivals: dict[str, float]
    boundary_crossings: dict[tuple[str, str], float]
    non_gating_crossings: dict[tuple[str, str], float]
    accumulation: dict[str, int]
    od_counts: dict[tuple[str, str], int]
    completed: int
    completions_by_region: dict[str, int]
    admitted_od: dict[tuple[str, str], int]
    entry_queue: int
    in_network: int
    vehicles: tuple[VehicleView, ...]

    def queue_total(self) -> int:
        return sum(self.queues.values())


@dataclass(frozen=True)
class TypeCounts:
    by_region: dict[str, tuple[int, int, int]]
    by_od: dict[tuple[str, str], tuple[int, int, int]]


def classify_vehicles(obs: MicroObservation, net: Network) -> TypeCounts:
    """Partition each region's vehicles into boundary-ready (type I),
    on-destination-link (type II) and still-traveling (type III)."""
    by_region: dict[str, list[int]] = {}
    by_od: dict[tuple[str, str], list[int]] = {}
    for v in obs.vehicles:
        if v.link == v.destination:
            idx = 1
        elif v.queued and len(v.route) > 1 and net.link_region(v.route[1]) != v.region:
            idx = 0
        else:
            idx = 2
        by_region.setdefault(v.region, [0, 0, 0])[idx] += 1
        by_od.setdefault((v.region, v.dest_region), [0, 0, 0])[idx] += 1
    return TypeCounts(
        {r: tuple(c) for r, c in by_region.items()},
        {k: tuple(c) for k, c in by_od.items()},
    )


class Simulator:
    """Single-writer simulation state; ``advance`` is the only mutator."""

    def __init__(self, scenario: Scenario, seed: int, demand_scale: float = 1.0):
        self.scenario = scenario
        self.net: Network = scenario.network
        self.partition = scenario.partition
        self.dt = scenario.control.t_micro_s
        self.demand_scale = demand_scale
        self.seed = seed

        seq = np.random.SeedSequence([seed, scenario.demand.seed])
        demand_seq, routing_seq = seq.spawn(2)
        self.demand_rng = np.random.Generator(np.random.PCG64(demand_seq))
        self.routing_rng = np.random.Generator(np.random.PCG64(routing_seq))

        self.step_count = 0
        self.time_s = 0.0
        self.vehicles: dict[int, _Vehicle] = {}
        self._next_vid = 0

        self._running: dict[str, list[int]] = {l: [] for l in self.net.links}
        self._queues: dict[str, list[int]] = {l: [] for l in self.net.lanes}
        self._occupancy: dict[str, int] = {l: 0 for l in self.net.links}
        self._storage = {
            link.id: sum(self.net.lanes[l].capacity_veh for l in link.lanes)
            for link in self.net.links.values()
        }
        self._entry: dict[str, list[int]] = {}
        self._entry_total = 0

        self.created_total = 0
        self.admitted_total = 0
        self.completed_total = 0
        self._last_obs: MicroObservation | None = None

        # feasible lanes per (link, next link)
        self._lane_for_move: dict[tuple[str, str], tuple[str, ...]] = {}
        for link in self.net.links.values():
            for nxt in self.net.successors(link.id):
                feasible = tuple(
                    lid
                    for lid in link.lanes
                    if any(
                        self.net.lanes[out].link == nxt
                        for out in self.net.lanes[lid].output_lanes
                    )
                )
                self._lane_for_move[(link.id, nxt)] = feasible

        self._gating_node: dict[str, str] = {}  # node -> canonical boundary
        self._non_gating_node: dict[str, str] = {}
        for node in self.net.intersections.values():
            if node.boundary is None:
                continue
            if node.kind == GATING:
                self._gating_node[node.id] = node.id
            elif node.kind == NON_GATING:
                self._non_gating_node[node.id] = node.id

    # ------------------------------------------------------------------
    # Demand

    def travel_time_estimates(self) -> dict[str, float]:
        """Instantaneous per-link travel time: free flow plus queue clearance."""
        out = {}
        for link in self.net.links.values():
            queued = sum(len(self._queues[l]) for l in link.lanes)
            service = sum(self.net.lanes[l].sat_flow_veh_s for l in link.lanes)
            out[link.id] = link.travel_time_s + queued / service
        return out

    def shortest_route(
        self, origin: str, destination: str, travel_times: Mapping[str, float]
    ) -> tuple[str, ...] | None:
        """Minimum-travel-time link route from origin to destination
        (label-setting over the link graph; deterministic tie-break)."""
        dist = {origin: 0.0}
        parent: dict[str, str] = {}
        heap: list[tuple[float, str]] = [(0.0, origin)]
        while heap:
            d, link = heapq.heappop(heap)
            if link == destination:
                route = [link]
                while link in parent:
                    link = parent[link]
                    route.append(link)
                return tuple(reversed(route))
            if d > dist.get(link, math.inf):
                continue
            for nxt in self.net.successors(link):
                nd = d + travel_times[nxt]
                if nd < dist.get(nxt, math.inf) - 1e-12:
                    dist[nxt] = nd
                    parent[nxt] = link
                    heapq.heappush(heap, (nd, nxt))
        return None

    def inject_demand(self, step: int) -> list[int]:
        """Draw Poisson arrivals for micro step ``step`` and stage them in the
        entry queues.  Returns the new vehicle ids."""
        t = step * self.dt
        tt = self.travel_time_estimates()
        new_ids: list[int] = []
        for flow in self.scenario.demand.od:
            rate = flow.rate_at(t) * self.demand_scale
            if t >= self.scenario.demand.horizon_s:
                rate = 0.0
            if rate <= 0.0:
                continue
            count = int(self.demand_rng.poisson(rate * self.dt))
            for _ in range(count):
                route = self.shortest_route(flow.origin, flow.destination, tt)
                if route is None:
                    # unreachable ODs are rejected at load; defensive only
                    logger.error("no route %s->%s", flow.origin, flow.destination)
                    continue
                vid = self._next_vid
                self._next_vid += 1
                self.vehicles[vid] = _Vehicle(
                    id=vid,
                    origin=flow.origin,
                    destination=flow.destination,
                    dest_region=self.net.link_region(flow.destination),
                    route=route,
                )
                self._entry.setdefault(flow.origin, []).append(vid)
                self._entry_total += 1
                self.created_total += 1
                new_ids.append(vid)
        return new_ids

    def set_route(self, vid: int, route: Sequence[str]) -> None:
        v = self.vehicles[vid]
        if route[0] != v.current:
            raise ValueError(
                f"vehicle {vid}: route must start at current link {v.current}"
            )
        if route[-1] != v.destination:
            raise ValueError(f"vehicle {vid}: route must end at {v.destination}")
        v.route = tuple(route)

    # ------------------------------------------------------------------
    # Stepping

    def _active_lanes(
        self, plans: Mapping[tuple[str, str], str]
    ) -> dict[str, MultiPhasePlan]:
        """Resolve the activated plan object per gating intersection; missing
        boundaries fall back to a fixed-cycle round robin."""
        chosen: dict[tuple[str, str], MultiPhasePlan] = {}
        for key, plan_list in self.net.plans.items():
            plan_id = plans.get(key)
            if plan_id is None:
                plan = plan_list[self.step_count % len(plan_list)]
            else:
                by_id = {p.id: p for p in plan_list}
                plan = by_id[plan_id]
            chosen[key] = plan
        by_node: dict[str, MultiPhasePlan] = {}
        for key, plan in chosen.items():
            for node_id, _ in plan.phase_by_intersection:
                by_node[node_id] = plan
        return by_node

    def advance(
        self, plans: Mapping[tuple[str, str], str], dt: float | None = None
    ) -> MicroObservation:
        """Advance one micro step under the activated plans (one plan id per
        canonical boundary key) and return the step's observation."""
        if dt is None:
            dt = self.dt
        if abs(dt - self.dt) > 1e-9:
            raise ValueError(f"dt {dt} != configured micro step {self.dt}")
        plan_by_node = self._active_lanes(plans)
        self.step_count += 1
        self.time_s += dt

        admitted_od: dict[tuple[str, str], int] = {}
        crossings: dict[tuple[str, str], int] = {}
        ng_crossings: dict[tuple[str, str], int] = {}
        completed = 0
        completions_by_region: dict[str, int] = {}

        # 1. admit staged vehicles while their origin link has storage
        for origin in sorted(self._entry):
            staged = self._entry[origin]
            while staged and self._occupancy[origin] < self._storage[origin]:
                vid = staged.pop(0)
                v = self.vehicles[vid]
                v.entered_s = self.time_s - dt
                v.remaining_s = self.net.links[origin].travel_time_s
                self._occupancy[origin] += 1
                self._running[origin].append(vid)
                self._entry_total -= 1
                self.admitted_total += 1
                od = (self.net.link_region(origin), v.dest_region)
                admitted_od[od] = admitted_od.get(od, 0) + 1

        # 2. free-flow progress; vehicles reaching the stop line join a lane
        #    queue (shortest feasible) or complete their trip
        for link_id in sorted(self._running):
            still_running: list[int] = []
            for vid in self._running[link_id]:
                v = self.vehicles[vid]
                v.remaining_s = max(0.0, v.remaining_s - dt)
                if v.remaining_s > 0.0:
                    still_running.append(vid)
                    continue
                if v.current == v.destination:
                    self._occupancy[link_id] -= 1
                    del self.vehicles[vid]
                    completed += 1
                    self.completed_total += 1
                    region = self.net.link_region(link_id)
                    completions_by_region[region] = (
                        completions_by_region.get(region, 0) + 1
                    )
                    continue
                lane = self._pick_lane(v)
                if lane is None:
                    still_running.append(vid)  # all feasible lanes full; hold
                    continue
                v.queued = True
                v.lane = lane
                self._queues[lane].append(vid)
            self._running[link_id] = still_running

        # 3. queue service
        node_budget: dict[str, int] = {}
        for node in self.net.intersections.values():
            if node.kind == NON_GATING and node.service_rate_veh_s is not None:
                node_budget[node.id] = int(math.floor(node.service_rate_veh_s * dt + 1e-9))

        for link_id in sorted(self.net.links):
            link = self.net.links[link_id]
            node = self.net.intersections.get(link.to_node)
            for lane_id in link.lanes:
                lane = self.net.lanes[lane_id]
                budget = int(math.floor(lane.sat_flow_veh_s * dt + 1e-9))
                if node is not None and node.kind == GATING:
                    plan = plan_by_node.get(node.id)
                    if plan is None:
                        budget = 0
                    else:
                        phase = node.phase(plan.phase_of(node.id))
                        if lane_id not in phase.allowed_lanes:
                            budget = 0
                queue = self._queues[lane_id]
                while budget > 0 and queue:
                    if node is not None and node.id in node_budget:
                        if node_budget[node.id] <= 0:
                            break
                    vid = queue[0]
                    v = self.vehicles[vid]
                    nxt = v.route[1]
                    if self._occupancy[nxt] >= self._storage[nxt]:
                        break  # head blocked: FIFO lane stops discharging
                    queue.pop(0)
                    v.queued = False
                    v.lane = None
                    v.route = v.route[1:]
                    v.remaining_s = self.net.links[nxt].travel_time_s
                    self._occupancy[link_id] -= 1
                    self._occupancy[nxt] += 1
                    self._running[nxt].append(vid)
                    budget -= 1
                    if node is not None and node.id in node_budget:
                        node_budget[node.id] -= 1
                    from_region = link.region
                    to_region = self.net.link_region(nxt)
                    if from_region != to_region:
                        key = (from_region, to_region)
                        crossings[key] = crossings.get(key, 0) + 1
                        if node is not None and node.kind == NON_GATING:
                            ng_crossings[key] = ng_crossings.get(key, 0) + 1

        obs = self._build_observation(
            crossings, ng_crossings, completed, completions_by_region, admitted_od, dt
        )
        self._last_obs = obs
        return obs

    def _pick_lane(self, v: _Vehicle) -> str | None:
        nxt = v.route[1]
        feasible = self._lane_for_move.get((v.current, nxt), ())
        best = None
        best_len = None
        for lane_id in feasible:
            q = len(self._queues[lane_id])
            if q >= self.net.lanes[lane_id].capacity_veh:
                continue
            if best_len is None or q < best_len:
                best, best_len = lane_id, q
        return best

    # ------------------------------------------------------------------
    # Observations

    def initial_observation(self) -> MicroObservation:
        return self._build_observation({}, {}, 0, {}, {}, self.dt)

    def last_observation(self) -> MicroObservation:
        if self._last_obs is None:
            self._last_obs = self.initial_observation()
        return self._last_obs

    def _build_observation(
        self,
        crossings: dict[tuple[str, str], int],
        ng_crossings: dict[tuple[str, str], int],
        completed: int,
        completions_by_region: dict[str, int],
        admitted_od: dict[tuple[str, str], int],
        dt: float,
    ) -> MicroObservation:
        queues = {lane: len(q) for lane, q in self._queues.items()}

        arrivals = {lane: float(len(q)) for lane, q in self._queues.items()}
        for link_id in sorted(self._running):
            lane_loads = {l: queues[l] for l in self.net.links[link_id].lanes}
            for vid in self._running[link_id]:
                v = self.vehicles[vid]
                if v.remaining_s > dt or v.current == v.destination:
                    continue
                feasible = self._lane_for_move.get((v.current, v.route[1]), ())
                if not feasible:
                    continue
                lane = min(feasible, key=lambda l: (lane_loads[l], l))
                lane_loads[lane] += 1
                arrivals[lane] += 1.0

        accumulation = {r: 0 for r in self.partition.regions}
        for link in self.net.links.values():
            accumulation[link.region] += self._occupancy[link.id]

        od_counts: dict[tuple[str, str], int] = {}
        views = []
        for vid in sorted(self.vehicles):
            v = self.vehicles[vid]
            if v.entered_s is None:
                continue  # still in an entry queue, outside the regions
            region = self.net.link_region(v.current)
            od_counts[(region, v.dest_region)] = (
                od_counts.get((region, v.dest_region), 0) + 1
            )
            views.append(
                VehicleView(
                    id=vid,
                    link=v.current,
                    region=region,
                    queued=v.queued,
                    lane=v.lane,
                    queue_index=(
                        self._queues[v.lane].index(vid) if v.queued and v.lane else None
                    ),
                    remaining_s=v.remaining_s,
                    route=v.route,
                    origin=v.origin,
                    destination=v.destination,
                    dest_region=v.dest_region,
                    entered_s=v.entered_s,
                )
            )

        boundary_rates = {}
        ng_rates = {}
        for i in self.partition.regions:
            for h in self.partition.adjacency[i]:
                boundary_rates[(i, h)] = crossings.get((i, h), 0) / dt
                ng_rates[(i, h)] = ng_crossings.get((i, h), 0) / dt

        return MicroObservation(
            step=self.step_count,
            time_s=self.time_s,
            dt_s=dt,
            queues=queues,
            arrivals=arrivals,
            boundary_crossings=boundary_rates,
            non_gating_crossings=ng_rates,
            accumulation=accumulation,
            od_counts=od_counts,
            completed=completed,
            completions_by_region=completions_by_region,
            admitted_od=admitted_od,
            entry_queue=self._entry_total,
            in_network=len([v for v in self.vehicles.values() if v.entered_s is not None]),
            vehicles=tuple(views),
        )


def write_observation_log(
    path, observations: Iterable[MicroObservation], scenario: Scenario
) -> None:
    """Per-step observation log: step, region accumulations, boundary
    crossing rates, queue totals.  Column order is stable."""
    regions = scenario.partition.regions
    boundaries = scenario.partition.ordered_boundaries()
    header = (
        ["step", "time_s"]
        + [f"N_{r}" for r in regions]
        + [f"m_{i}_{h}" for i, h in boundaries]
        + ["queue_total", "entry_queue", "in_network", "completed"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for obs in observations:
            writer.writerow(
                [obs.step, repr(obs.time_s)]
                + [obs.accumulation[r] for r in regions]
                + [repr(obs.boundary_crossings[(i, h)]) for i, h in boundaries]
                + [obs.queue_total(), obs.entry_queue, obs.in_network, obs.completed]
            )
