"""Per-vehicle candidate routes and the intra-region route-choice program.

Candidate generation keeps exactly the vehicle's current route and the
instantaneously shortest route (deduplicated).  The per-region program picks
route probabilities on each vehicle's simplex so that the realized
next-region proportions match the hyper-path split targets while the
predicted end-of-step link densities stay close to the region mean.  The
objective is a convex quadratic; it is solved by accelerated projected
gradient on the product of per-vehicle simplices.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .mesosim import MicroObservation, VehicleView
from .netmodel import Network, next_region

logger = logging.getLogger(__name__)

_STATIONARITY_TOL = 1e-9
_MAX_ITER = 20000


@dataclass(frozen=True)
class CandidateRoute:
    links: tuple[str, ...]
    next_region: str
    projected_link: str | None  # None: leaves the region this step (ignored
    # for densities)
    is_current: bool


@dataclass(frozen=True)
class VehicleRoutes:
    vid: int
    region: str
    dest_region: str
    routes: tuple[CandidateRoute, ...]
    pinned: bool
    unreachable: bool = False


@dataclass
class RouteProbabilities:
    phi: dict[int, np.ndarray]
    densities: dict[str, float]
    mean_density: float
    objective: float
    target_term: float
    homogeneity_term: float
    realized: dict[tuple[str, str, str], float]
    iterations: int


def shortest_paths_to(
    net: Network, destination: str, travel_times: Mapping[str, float]
) -> dict[str, str]:
    """Next-link choice of the minimum-time route toward ``destination`` for
    every link that can reach it (label-setting on the reversed link graph)."""
    preds: dict[str, list[str]] = {l: [] for l in net.links}
    for link in net.links:
        for nxt in net.successors(link):
            preds[nxt].append(link)
    dist = {destination: travel_times[destination]}
    nxt_choice: dict[str, str] = {}
    heap = [(dist[destination], destination)]
    while heap:
        d, link = heapq.heappop(heap)
        if d > dist.get(link, math.inf):
            continue
        for prev in preds[link]:
            nd = d + travel_times[prev]
            better = nd < dist.get(prev, math.inf) - 1e-12
            tie = (
                abs(nd - dist.get(prev, math.inf)) <= 1e-12
                and link < nxt_choice.get(prev, "~")
            )
            if better or tie:
                dist[prev] = nd
                nxt_choice[prev] = link
                heapq.heappush(heap, (nd, prev))
    return nxt_choice


def _shortest_route(
    origin: str, destination: str, nxt_choice: Mapping[str, str]
) -> tuple[str, ...] | None:
    route = [origin]
    while route[-1] != destination:
        step = nxt_choice.get(route[-1])
        if step is None or len(route) > len(nxt_choice) + 1:
            return None
        route.append(step)
    return tuple(route)


def generate_routes(
    vehicles: Sequence[VehicleView],
    net: Network,
    travel_times: Mapping[str, float],
    dt_s: float,
) -> list[VehicleRoutes]:
    """Candidate route sets for the given vehicles.

    Vehicles on their destination link or one link away keep their current
    route only (no routing freedom).  An unreachable destination also pins
    the current route and is flagged.
    """
    nxt_cache: dict[str, dict[str, str]] = {}
    out: list[VehicleRoutes] = []
    for v in vehicles:
        current = v.route
        pinned = len(current) <= 2
        unreachable = False
        candidates = [current]
        if not pinned:
            if v.destination not in nxt_cache:
                nxt_cache[v.destination] = shortest_paths_to(
                    net, v.destination, travel_times
                )
            shortest = _shortest_route(v.link, v.destination, nxt_cache[v.destination])
            if shortest is None:
                unreachable = True
                logger.warning(
                    "vehicle %d: destination %s unreachable from %s",
                    v.id,
                    v.destination,
                    v.link,
                )
            elif shortest != current:
                candidates.append(shortest)
        routes = tuple(
            CandidateRoute(
                links=r,
                next_region=next_region(r, net),
                projected_link=_projected_link(v, r, net, dt_s),
                is_current=(r == current),
            )
            for r in candidates
        )
        out.append(
            VehicleRoutes(
                vid=v.id,
                region=v.region,
                dest_region=v.dest_region,
                routes=routes,
                pinned=pinned or unreachable or len(routes) == 1,
                unreachable=unreachable,
            )
        )
    return out


def _projected_link(
    v: VehicleView, route: tuple[str, ...], net: Network, dt_s: float
) -> str | None:
    """Link where the vehicle is expected to sit at the end of the step:
    queued vehicles within this step's service budget advance to the route's
    next link, everyone else stays put.  Links outside the vehicle's current
    region are reported as None (ignored in densities)."""
    link = v.link
    if v.queued and v.lane is not None and len(route) > 1:
        budget = net.lanes[v.lane].sat_flow_veh_s * dt_s
        if (v.queue_index or 0) < budget:
            link = route[1]
    if net.link_region(link) != v.region:
        return None
    return link


def candidate_next_regions(
    routes: Sequence[VehicleRoutes],
) -> dict[tuple[str, str], list[frozenset[str]]]:
    """Per-OD candidate next-region sets, the input to the split bounds."""
    out: dict[tuple[str, str], list[frozenset[str]]] = {}
    for vr in routes:
        if vr.dest_region == vr.region:
            continue
        key = (vr.region, vr.dest_region)
        out.setdefault(key, []).append(
            frozenset(r.next_region for r in vr.routes)
        )
    return out


def density_fields(
    routes: Sequence[VehicleRoutes],
    phi: Mapping[int, np.ndarray],
    net: Network,
    region: str,
    accumulation: float,
) -> tuple[dict[str, float], float]:
    """Expected end-of-step link densities (veh/m/lane) and the region mean."""
    region_links = sorted(
        l.id for l in net.links.values() if l.region == region
    )
    area = {
        l: net.links[l].lane_count * net.links[l].length_m for l in region_links
    }
    mass = {l: 0.0 for l in region_links}
    for vr in routes:
        if vr.region != region:
            continue
        weights = phi[vr.vid]
        for r, w in zip(vr.routes, weights):
            if r.projected_link is not None and r.projected_link in mass:
                mass[r.projected_link] += float(w)
    densities = {l: mass[l] / area[l] for l in region_links}
    mean = accumulation / sum(area.values()) if region_links else 0.0
    return densities, mean


def solve_probabilities(
    routes: Sequence[VehicleRoutes],
    targets: Mapping[tuple[str, str, str], float],
    net: Network,
    region: str,
    accumulation: float,
    beta: float,
    adjacency: Mapping[str, tuple[str, ...]],
) -> RouteProbabilities:
    """Minimize beta * (proportion mismatch)^2 + (density spread)^2 over the
    product of per-vehicle simplices, by accelerated projected gradient.

    The returned objective never exceeds the uniform-probability objective
    and satisfies the simplex constraints exactly.
    """
    in_region = [vr for vr in routes if vr.region == region]
    if not in_region:
        raise ValueError(f"no vehicles to route in region {region}")

    var_of: dict[tuple[int, int], int] = {}
    groups: list[np.ndarray] = []
    for vr in in_region:
        cols = []
        for r_idx in range(len(vr.routes)):
            var_of[(vr.vid, r_idx)] = len(var_of)
            cols.append(var_of[(vr.vid, r_idx)])
        groups.append(np.array(cols, dtype=int))
    nv = len(var_of)

    od_counts: dict[tuple[str, str], int] = {}
    for vr in in_region:
        if vr.dest_region != region:
            key = (region, vr.dest_region)
            od_counts[key] = od_counts.get(key, 0) + 1

    a_rows = []
    t_vals = []
    for (i, j) in sorted(od_counts):
        n_ij = od_counts[(i, j)]
        for h in adjacency[region]:
            row = np.zeros(nv)
            for vr in in_region:
                if (vr.region, vr.dest_region) != (i, j):
                    continue
                for r_idx, r in enumerate(vr.routes):
                    if r.next_region == h:
                        row[var_of[(vr.vid, r_idx)]] = 1.0 / n_ij
            a_rows.append(row)
            t_vals.append(targets.get((i, h, j), 0.0))
    a_mat = np.array(a_rows) if a_rows else np.zeros((0, nv))
    t_vec = np.array(t_vals)

    region_links = sorted(l.id for l in net.links.values() if l.region == region)
    area = np.array(
        [net.links[l].lane_count * net.links[l].length_m for l in region_links]
    )
    d_rows = np.zeros((len(region_links), nv))
    link_row = {l: k for k, l in enumerate(region_links)}
    for vr in in_region:
        for r_idx, r in enumerate(vr.routes):
            if r.projected_link is not None and r.projected_link in link_row:
                d_rows[link_row[r.projected_link], var_of[(vr.vid, r_idx)]] = 1.0
    d_mat = d_rows / area[:, None]
    d_bar = accumulation / float(area.sum())

    def objective_terms(x: np.ndarray) -> tuple[float, float]:
        ta = float(np.sum((a_mat @ x - t_vec) ** 2)) if a_rows else 0.0
        td = float(np.sum((d_mat @ x - d_bar) ** 2))
        return beta * ta, td

    def grad(x: np.ndarray) -> np.ndarray:
        g = 2.0 * d_mat.T @ (d_mat @ x - d_bar)
        if a_rows:
            g += 2.0 * beta * a_mat.T @ (a_mat @ x - t_vec)
        return g

    def project(x: np.ndarray) -> np.ndarray:
        y = x.copy()
        for cols in groups:
            y[cols] = _project_simplex(y[cols])
        return y

    # Lipschitz constant of the gradient via power iteration
    rng = np.random.Generator(np.random.PCG64(7))
    v = rng.normal(size=nv)
    v /= np.linalg.norm(v)
    lam = 1.0
    for _ in range(50):
        w = 2.0 * d_mat.T @ (d_mat @ v)
        if a_rows:
            w += 2.0 * beta * a_mat.T @ (a_mat @ v)
        norm = np.linalg.norm(w)
        if norm < 1e-15:
            break
        lam = norm
        v = w / norm
    step = 1.0 / max(lam, 1e-12)

    x = project(np.concatenate([np.full(len(g), 1.0 / len(g)) for g in groups]))
    f_uniform = sum(objective_terms(x))
    best_x, best_f = x.copy(), f_uniform
    y = x.copy()
    t_momentum = 1.0
    iterations = 0
    for iterations in range(1, _MAX_ITER + 1):
        x_new = project(y - step * grad(y))
        f_new = sum(objective_terms(x_new))
        if f_new < best_f:
            best_f, best_x = f_new, x_new.copy()
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_momentum**2))
        y = x_new + (t_momentum - 1.0) / t_next * (x_new - x)
        moved = np.max(np.abs(x_new - x))
        x = x_new
        t_momentum = t_next
        residual = np.max(np.abs(x - project(x - step * grad(x)))) / step
        if residual <= _STATIONARITY_TOL * max(1.0, lam) and moved <= step:
            break

    phi = {vr.vid: best_x[groups[k]].copy() for k, vr in enumerate(in_region)}
    densities, mean = density_fields(in_region, phi, net, region, accumulation)
    realized: dict[tuple[str, str, str], float] = {}
    for (i, j) in sorted(od_counts):
        n_ij = od_counts[(i, j)]
        for h in adjacency[region]:
            total = 0.0
            for vr in in_region:
                if (vr.region, vr.dest_region) != (i, j):
                    continue
                for r_idx, r in enumerate(vr.routes):
                    if r.next_region == h:
                        total += phi[vr.vid][r_idx]
            realized[(i, h, j)] = total / n_ij
    target_term, homog_term = objective_terms(best_x)
    return RouteProbabilities(
        phi=phi,
        densities=densities,
        mean_density=mean,
        objective=target_term + homog_term,
        target_term=target_term,
        homogeneity_term=homog_term,
        realized=realized,
        iterations=iterations,
    )


def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    if len(v) == 1:
        return np.ones(1)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u * np.arange(1, len(v) + 1) > css)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def assign_routes(
    routes: Sequence[VehicleRoutes],
    probabilities: Mapping[int, np.ndarray],
    rng: np.random.Generator,
) -> dict[int, tuple[str, ...]]:
    """Sample one committed route per vehicle from its probabilities.

    Iteration is ordered by vehicle id, so a fixed seed reproduces the exact
    assignment."""
    chosen: dict[int, tuple[str, ...]] = {}
    for vr in sorted(routes, key=lambda r: r.vid):
        phi = np.asarray(probabilities[vr.vid], dtype=float)
        if len(vr.routes) == 1:
            chosen[vr.vid] = vr.routes[0].links
            continue
        phi = np.clip(phi, 0.0, None)
        phi = phi / phi.sum()
        idx = int(rng.choice(len(vr.routes), p=phi))
        chosen[vr.vid] = vr.routes[idx].links
    return chosen
