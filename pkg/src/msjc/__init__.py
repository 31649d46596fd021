"""Multi-scale joint perimeter control and route guidance on a mesoscopic
multi-region traffic simulator, with PI-gating, logit-routing and
backpressure baselines behind one controller interface."""

__version__ = "0.1.0"
