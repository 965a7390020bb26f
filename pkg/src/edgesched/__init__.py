"""Online task scheduling for collaborative edge computing.

A discrete-time simulator plus a family of per-slot schedulers: a
drift-plus-penalty controller combined with a two-stage metaheuristic
(discrete particle swarm over node roles, harmony search over flow
amounts), an imitation-learning fast path, and reference baselines with
an exact brute-force oracle for small instances.
"""

__version__ = "0.1.0"
