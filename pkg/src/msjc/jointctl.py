"""Upper-level joint perimeter-control and route-guidance program.

Each macro step this module picks gating fractions b (one per ordered
boundary) and hyper-path splits c (one per region/next-region/destination
triple) that minimize the worst next-step overshoot of any region's
accumulation beyond its critical value, subject to boundary flow envelopes
and per-OD split bounds.  The program is nonconvex (bilinear b*c terms), so
it is solved by deterministic multi-start SQP and the best local optimum is
kept; ties in the objective break toward higher total boundary throughput.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Collection, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from . import macrodyn
from .macrodyn import CompletionModel, MacroState

logger = logging.getLogger(__name__)

BKey = tuple[str, str]
TKey = tuple[str, str, str]

_EMPTY_REGION_VEH = 1.0  # regions below this stock impose no flow constraint
_FEASIBILITY_TOL = 1e-6


@dataclass(frozen=True)
class ControlBounds:
    m_min: dict[BKey, float]
    m_max: dict[BKey, float]
    c_min: dict[TKey, float]
    c_max: dict[TKey, float]


@dataclass
class ControlSolution:
    b: dict[BKey, float]
    c: dict[TKey, float]
    z: float
    m: dict[BKey, float]
    residual: float
    feasible: bool
    start_index: int
    message: str = ""


def route_bounds(
    candidates: Mapping[tuple[str, str], Sequence[Collection[str]]],
    adjacency: Mapping[str, tuple[str, ...]],
) -> tuple[dict[TKey, float], dict[TKey, float]]:
    """Split bounds from the vehicles' candidate next-region sets.

    The upper bound for next region h is the fraction of the OD's vehicles
    that could go via h at all; the lower bound is the fraction that has no
    other option.  ODs without vehicles get the vacuous (0, 1) box.
    """
    c_min: dict[TKey, float] = {}
    c_max: dict[TKey, float] = {}
    for (i, j), vehicle_sets in candidates.items():
        neighbors = adjacency[i]
        n = len(vehicle_sets)
        if n == 0:
            for h in neighbors:
                c_min[(i, h, j)] = 0.0
                c_max[(i, h, j)] = 1.0
            continue
        for sets in vehicle_sets:
            if not sets:
                raise ValueError(f"OD {(i, j)}: vehicle with empty candidate set")
        for h in neighbors:
            could = sum(1 for s in vehicle_sets if h in s)
            must = sum(1 for s in vehicle_sets if set(s) == {h})
            c_min[(i, h, j)] = must / n
            c_max[(i, h, j)] = could / n
    return c_min, c_max


class _Problem:
    """Index maps and vectorized constraint evaluation for one macro step."""

    def __init__(self, state: MacroState, mfd: CompletionModel, bounds: ControlBounds):
        self.state = state
        self.bounds = bounds
        self.regions = list(state.regions)
        self.region_index = {r: k for k, r in enumerate(self.regions)}
        acc = state.accumulations()

        self.b_keys: list[BKey] = sorted(
            (i, h) for i in state.regions for h in state.adjacency[i]
        )
        self.pinned_b = {
            key: acc[key[0]] < _EMPTY_REGION_VEH for key in self.b_keys
        }

        # ODs that move mass this step: sender occupied and stock present
        self.active_od = sorted(
            (i, j)
            for (i, j), stock in state.n.items()
            if i != j and stock > 0.0 and acc[i] >= _EMPTY_REGION_VEH
        )
        self.od_index = {od: k for k, od in enumerate(self.active_od)}
        self.c_keys: list[TKey] = sorted(
            (i, h, j) for (i, j) in self.active_od for h in state.adjacency[i]
        )

        self.nb = len(self.b_keys)
        self.nc = len(self.c_keys)
        self.nv = self.nb + self.nc + 1  # + auxiliary z
        self.zi = self.nv - 1
        self.b_index = {k: n for n, k in enumerate(self.b_keys)}
        self.c_index = {k: self.nb + n for n, k in enumerate(self.c_keys)}

        kappa_od = {}
        for (i, j) in self.active_od:
            n_i = acc[i]
            kappa_od[(i, j)] = (
                state.n[(i, j)] / n_i * mfd.evaluate(i, n_i) * state.t_macro_s
            )
        self.c_kappa = np.array(
            [kappa_od[(i, j)] for (i, h, j) in self.c_keys], dtype=float
        )
        self.c_b_col = np.array(
            [self.b_index[(i, h)] for (i, h, j) in self.c_keys], dtype=int
        )
        self.c_out_region = np.array(
            [self.region_index[i] for (i, h, j) in self.c_keys], dtype=int
        )
        self.c_in_region = np.array(
            [self.region_index[h] for (i, h, j) in self.c_keys], dtype=int
        )

        type2 = {}
        for i in self.regions:
            n_i = acc[i]
            type2[i] = (
                0.0
                if n_i <= 0.0
                else state.n.get((i, i), 0.0) / n_i * mfd.evaluate(i, n_i) * state.t_macro_s
            )
        self.base = np.array(
            [
                acc[i]
                + sum(state.q.get((i, j), 0.0) for j in self.regions)
                - type2[i]
                for i in self.regions
            ],
            dtype=float,
        )
        self.crit = np.array([mfd.critical(i) for i in self.regions], dtype=float)

        # flow-envelope rows, skipping boundaries whose sender is empty
        self.flow_keys = [key for key in self.b_keys if not self.pinned_b[key]]
        self.flow_cols: dict[BKey, np.ndarray] = {}
        for key in self.flow_keys:
            cols = [
                self.c_index[(i, h, j)]
                for (i, h, j) in self.c_keys
                if (i, h) == key
            ]
            self.flow_cols[key] = np.array(cols, dtype=int)

        self.m_min = np.array([bounds.m_min[k] for k in self.flow_keys])
        self.m_max = np.array([bounds.m_max[k] for k in self.flow_keys])
        self.c_lo = np.array([bounds.c_min[k] for k in self.c_keys])
        self.c_hi = np.array([bounds.c_max[k] for k in self.c_keys])

    # -- transfers ---------------------------------------------------------

    def _bc(self, x: np.ndarray) -> np.ndarray:
        """Per c-variable transferred vehicles b*c*kappa."""
        if self.nc == 0:
            return np.zeros(0)
        return x[self.c_b_col] * x[self.nb : self.nb + self.nc] * self.c_kappa

    def next_accumulation(self, x: np.ndarray) -> np.ndarray:
        moved = self._bc(x)
        out = np.zeros(len(self.regions))
        np.add.at(out, self.c_out_region, -moved)
        np.add.at(out, self.c_in_region, moved)
        return self.base + out

    def g(self, x: np.ndarray) -> np.ndarray:
        """Overshoot of each region's predicted accumulation beyond critical."""
        return self.next_accumulation(x) - self.crit

    def g_jac(self, x: np.ndarray) -> np.ndarray:
        jac = np.zeros((len(self.regions), self.nv))
        if self.nc:
            b_vals = x[self.c_b_col]
            c_vals = x[self.nb : self.nb + self.nc]
            for n, (i, h, j) in enumerate(self.c_keys):
                dc = b_vals[n] * self.c_kappa[n]
                db = c_vals[n] * self.c_kappa[n]
                col_c = self.nb + n
                col_b = self.c_b_col[n]
                r_out, r_in = self.c_out_region[n], self.c_in_region[n]
                jac[r_out, col_c] -= dc
                jac[r_in, col_c] += dc
                jac[r_out, col_b] -= db
                jac[r_in, col_b] += db
        return jac

    def flows(self, x: np.ndarray) -> np.ndarray:
        moved = self._bc(x)
        return np.array(
            [moved[self.flow_cols[k] - self.nb].sum() for k in self.flow_keys]
        ) / self.state.t_macro_s

    def flows_jac(self, x: np.ndarray) -> np.ndarray:
        jac = np.zeros((len(self.flow_keys), self.nv))
        for row, key in enumerate(self.flow_keys):
            for col in self.flow_cols[key]:
                n = col - self.nb
                jac[row, col] = x[self.c_b_col[n]] * self.c_kappa[n]
                jac[row, self.c_b_col[n]] += x[col] * self.c_kappa[n]
        return jac / self.state.t_macro_s

    def all_flows(self, x: np.ndarray) -> dict[BKey, float]:
        moved = self._bc(x)
        out = {}
        for key in self.b_keys:
            cols = [
                n for n, (i, h, j) in enumerate(self.c_keys) if (i, h) == key
            ]
            out[key] = float(moved[cols].sum()) / self.state.t_macro_s
        return out

    # -- feasibility --------------------------------------------------------

    def project(self, x: np.ndarray) -> np.ndarray:
        """Clip b into its boxes and project each OD's c onto its bounded
        simplex; z is recomputed exactly afterwards by the caller."""
        y = x.copy()
        for n, key in enumerate(self.b_keys):
            lo = 1.0 if self.pinned_b[key] else 0.0
            y[n] = min(1.0, max(lo, y[n]))
        for od in self.active_od:
            cols = [
                self.nb + n for n, (i, h, j) in enumerate(self.c_keys) if (i, j) == od
            ]
            lo = np.array([self.c_lo[c - self.nb] for c in cols])
            hi = np.array([self.c_hi[c - self.nb] for c in cols])
            y[cols] = _project_capped_simplex(y[cols], lo, hi)
        return y

    def residual(self, x: np.ndarray) -> float:
        res = 0.0
        if self.flow_keys:
            m = self.flows(x)
            res = max(
                res,
                float(np.max(self.m_min - m, initial=0.0)),
                float(np.max(m - self.m_max, initial=0.0)),
            )
        if self.nc:
            c = x[self.nb : self.nb + self.nc]
            res = max(
                res,
                float(np.max(self.c_lo - c, initial=0.0)),
                float(np.max(c - self.c_hi, initial=0.0)),
            )
            for od in self.active_od:
                cols = [
                    n for n, (i, h, j) in enumerate(self.c_keys) if (i, j) == od
                ]
                res = max(res, abs(float(c[cols].sum()) - 1.0))
        return res


def _project_capped_simplex(
    v: np.ndarray, lo: np.ndarray, hi: np.ndarray
) -> np.ndarray:
    """Euclidean projection onto {lo <= x <= hi, sum x = 1} via bisection;
    when the box itself cannot reach sum 1, return the nearest box corner."""
    if lo.sum() > 1.0:
        return lo.copy()
    if hi.sum() < 1.0:
        return hi.copy()
    a, b = -2.0, 2.0
    for _ in range(100):
        tau = 0.5 * (a + b)
        s = np.clip(v + tau, lo, hi).sum()
        if s < 1.0:
            a = tau
        else:
            b = tau
    return np.clip(v + 0.5 * (a + b), lo, hi)


def _validate_bounds(problem: _Problem) -> str:
    for od in problem.active_od:
        cols = [
            n for n, (i, h, j) in enumerate(problem.c_keys) if (i, j) == od
        ]
        lo = sum(problem.c_lo[c] for c in cols)
        hi = sum(problem.c_hi[c] for c in cols)
        if lo > 1.0 + 1e-12:
            return f"sum of c_min for OD {od} is {lo:.4f} > 1"
        if hi < 1.0 - 1e-12:
            return f"sum of c_max for OD {od} is {hi:.4f} < 1"
    for key, lo in zip(problem.flow_keys, problem.m_min):
        hi = problem.bounds.m_max[key]
        if lo > hi + 1e-12:
            return f"flow bounds for boundary {key} are inverted ({lo} > {hi})"
    return ""


def _starts(problem: _Problem, extra: np.ndarray | None) -> list[np.ndarray]:
    rng = np.random.Generator(np.random.PCG64(20240601))
    mid = 0.5 * (problem.c_lo + problem.c_hi) if problem.nc else np.zeros(0)
    corners = [
        (1.0, mid),
        (0.0, mid),
        (1.0, problem.c_hi.copy() if problem.nc else mid),
        (0.0, problem.c_lo.copy() if problem.nc else mid),
    ]
    starts = []
    for b0, c0 in corners:
        x = np.zeros(problem.nv)
        x[: problem.nb] = b0
        x[problem.nb : problem.nb + problem.nc] = c0
        starts.append(x)
    for _ in range(4):
        x = np.zeros(problem.nv)
        x[: problem.nb] = rng.uniform(0.0, 1.0, problem.nb)
        if problem.nc:
            x[problem.nb : problem.nb + problem.nc] = rng.uniform(
                problem.c_lo, problem.c_hi
            )
        starts.append(x)
    if extra is not None:
        starts.append(extra.copy())
    out = []
    for x in starts:
        y = problem.project(x)
        y[problem.zi] = float(np.max(problem.g(y)))
        out.append(y)
    return out


def _sqp(problem: _Problem, x0: np.ndarray, z_cap: float | None = None):
    cons = [
        {
            "type": "ineq",
            "fun": lambda x: x[problem.zi] - problem.g(x),
            "jac": lambda x: (
                np.tile(_unit(problem.nv, problem.zi), (len(problem.regions), 1))
                - problem.g_jac(x)
            ),
        }
    ]
    if problem.flow_keys:
        cons.append(
            {
                "type": "ineq",
                "fun": lambda x: np.concatenate(
                    [problem.m_max - problem.flows(x), problem.flows(x) - problem.m_min]
                ),
                "jac": lambda x: np.vstack(
                    [-problem.flows_jac(x), problem.flows_jac(x)]
                ),
            }
        )
    for od in problem.active_od:
        cols = np.array(
            [
                problem.nb + n
                for n, (i, h, j) in enumerate(problem.c_keys)
                if (i, j) == od
            ]
        )
        cons.append(
            {
                "type": "eq",
                "fun": lambda x, cols=cols: np.array([x[cols].sum() - 1.0]),
                "jac": lambda x, cols=cols: _row(problem.nv, cols),
            }
        )
    if z_cap is not None:
        cons.append(
            {
                "type": "ineq",
                "fun": lambda x: np.array([z_cap - x[problem.zi]]),
                "jac": lambda x: -_row(problem.nv, np.array([problem.zi])),
            }
        )

    lb = np.zeros(problem.nv)
    ub = np.ones(problem.nv)
    for n, key in enumerate(problem.b_keys):
        lb[n] = 1.0 if problem.pinned_b[key] else 0.0
    if problem.nc:
        lb[problem.nb : problem.nb + problem.nc] = problem.c_lo
        ub[problem.nb : problem.nb + problem.nc] = problem.c_hi
    lb[problem.zi], ub[problem.zi] = -np.inf, np.inf

    if z_cap is None:
        fun = lambda x: x[problem.zi]
        jac = lambda x: _unit(problem.nv, problem.zi)
    else:
        scale = 1.0 / max(1.0, float(np.max(np.abs(problem.c_kappa), initial=1.0)))

        def fun(x):
            return -problem.flows(x).sum() * scale if problem.flow_keys else 0.0

        def jac(x):
            if not problem.flow_keys:
                return np.zeros(problem.nv)
            return -problem.flows_jac(x).sum(axis=0) * scale

    return minimize(
        fun,
        x0,
        jac=jac,
        bounds=list(zip(lb, ub)),
        constraints=cons,
        method="SLSQP",
        options={"maxiter": 200, "ftol": 1e-10},
    )


def _unit(n: int, k: int) -> np.ndarray:
    e = np.zeros(n)
    e[k] = 1.0
    return e


def _row(n: int, cols: np.ndarray) -> np.ndarray:
    r = np.zeros((1, n))
    r[0, cols] = 1.0
    return r


def solve(
    state: MacroState,
    mfd: CompletionModel,
    bounds: ControlBounds,
    warm_start: ControlSolution | None = None,
) -> ControlSolution:
    """Solve the joint program for one macro step.

    Runs deterministic multi-start SQP, projects every candidate back onto
    the exact feasible boxes/simplices, recomputes the objective exactly at
    the projected point, and keeps the best by (z, -total flow, start index).
    Among equal-z optima a refinement pass maximizes total boundary
    throughput.  Infeasible instances return the least-infeasible point with
    ``feasible=False`` and the binding constraint in ``message``.
    """
    state.validate()
    problem = _Problem(state, mfd, bounds)
    message = _validate_bounds(problem)

    extra = None
    if warm_start is not None:
        extra = np.zeros(problem.nv)
        for key, n in problem.b_index.items():
            extra[n] = warm_start.b.get(key, 1.0)
        for key, n in problem.c_index.items():
            extra[n] = warm_start.c.get(key, 0.0)

    candidates = []
    for idx, x0 in enumerate(_starts(problem, extra)):
        try:
            res = _sqp(problem, x0)
            x = problem.project(res.x)
        except Exception as exc:  # solver hiccup: fall back to the start point
            logger.warning("start %d failed: %s", idx, exc)
            x = x0.copy()
        x[problem.zi] = float(np.max(problem.g(x)))
        candidates.append(
            (
                x[problem.zi],
                -problem.flows(x).sum() if problem.flow_keys else 0.0,
                idx,
                problem.residual(x),
                x,
            )
        )

    feasible = [c for c in candidates if c[3] <= _FEASIBILITY_TOL]
    pool = feasible if feasible else candidates
    z_val, _, start_idx, residual, best = min(
        pool, key=lambda c: (c[0], c[1], c[2])
    )

    if feasible and problem.flow_keys:
        try:
            res = _sqp(problem, best.copy(), z_cap=z_val + 1e-9)
            y = problem.project(res.x)
            y[problem.zi] = float(np.max(problem.g(y)))
            if (
                problem.residual(y) <= _FEASIBILITY_TOL
                and y[problem.zi] <= z_val + 1e-9
                and problem.flows(y).sum() > problem.flows(best).sum() + 1e-12
            ):
                best = y
                z_val = y[problem.zi]
                residual = problem.residual(y)
        except Exception as exc:
            logger.debug("throughput refinement skipped: %s", exc)

    b_out = {key: float(best[problem.b_index[key]]) for key in problem.b_keys}
    c_out: dict[TKey, float] = {}
    for key in problem.c_keys:
        c_out[key] = float(best[problem.c_index[key]])
    # inactive ODs: report the uniform split so downstream consumers always
    # see a full simplex per OD
    for (i, j), stock in sorted(state.n.items()):
        if i == j or (i, j) in problem.od_index:
            continue
        neighbors = state.adjacency[i]
        for h in neighbors:
            c_out[(i, h, j)] = 1.0 / len(neighbors)

    if not feasible and not message:
        message = "no start reached the feasibility tolerance"
    if message:
        logger.warning("joint control infeasible: %s", message)

    return ControlSolution(
        b=b_out,
        c=c_out,
        z=float(z_val),
        m=problem.all_flows(best),
        residual=float(residual),
        feasible=bool(feasible) and not message,
        start_index=start_idx,
        message=message,
    )


def targets(
    solution: ControlSolution, state: MacroState, mfd: CompletionModel
) -> dict[BKey, float]:
    """Boundary flow targets implied by the returned controls, via the macro
    transfer bookkeeping."""
    est = macrodyn.transfers(state, mfd, solution.b, solution.c)
    return dict(sorted(est.m_boundary.items()))
