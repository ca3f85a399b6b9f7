"""Robust planning and control stack for a planar vehicle.

Modules: polytope set algebra, bicycle dynamics, obstacle occupancy
prediction, Frenet-frame trajectory sampling, convex free-space regions
(IRIS), a dense QP solver, tube MPC, online GPR disturbance bounds, and
a deterministic closed-loop scenario simulator with CLI.
"""

__version__ = "0.1.0"
