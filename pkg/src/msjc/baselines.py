"""Comparison strategies: PI-based gating targets, logit route choice, and
pure backpressure plan selection over the full plan set.

These compose the same boundary realization and candidate-route machinery as
the joint strategy, so swapping strategies changes no simulator code.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import boundaryctl
from .mesosim import MicroObservation
from .netmodel import Network

logger = logging.getLogger(__name__)


@dataclass
class PiController:
    """Velocity-form PI regulator driving the receiving region's
    accumulation toward its critical value."""

    boundary: tuple[str, str]  # ordered (i, h); setpoint is region h's
    kp: float
    ki: float
    setpoint: float
    m_prev: float = 0.0
    n_prev: float | None = None
    active: bool = False

    def reset(self, m_init: float, n_now: float) -> None:
        self.m_prev = m_init
        self.n_prev = n_now
        self.active = True

    def deactivate(self) -> None:
        self.active = False
        self.n_prev = None


def pi_target(
    controller: PiController, n_h: float, m_min: float, m_max: float
) -> float:
    """Next macro-step flow target, clamped to the feasible envelope."""
    n_prev = controller.n_prev if controller.n_prev is not None else n_h
    raw = (
        controller.m_prev
        - controller.kp * (n_h - n_prev)
        - controller.ki * (n_h - controller.setpoint)
    )
    target = min(m_max, max(m_min, raw))
    controller.m_prev = target
    controller.n_prev = n_h
    return target


def logit_choice(
    travel_times: Sequence[float], theta: float
) -> np.ndarray:
    """Route probabilities exp(-theta*tt) normalized, shift-stabilized."""
    u = -theta * np.asarray(travel_times, dtype=float)
    u = u - u.max()
    e = np.exp(u)
    return e / e.sum()


def route_travel_time(
    route: Sequence[str], travel_times: Mapping[str, float]
) -> float:
    return float(sum(travel_times[l] for l in route))


def bp_control(
    obs: MicroObservation, net: Network, boundary: tuple[str, str]
) -> str:
    """Max-pressure plan over the full plan set (no flow-tracking filter)."""
    plans = net.plan_set(*boundary)
    order = [p.id for p in plans]
    weights = {p.id: boundaryctl.plan_weight(p, obs, net) for p in plans}
    plan_id, _ = boundaryctl.select_plan(order, weights, order)
    return plan_id
