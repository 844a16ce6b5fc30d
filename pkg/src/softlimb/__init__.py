"""Soft-limb inverse-kinematics toolkit.

Simulates the steady-state mechanics of a tendon-driven soft limb, generates
labeled episode datasets, trains transformer and feed-forward inverse
kinematics models, and benchmarks them closed-loop against the simulator.
"""

__version__ = "0.1.0"
