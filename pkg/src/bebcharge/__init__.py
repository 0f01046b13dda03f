"""Charge scheduling for battery-electric bus fleets.

Subpackages cover the pipeline end to end: scenario description and random
generation (:mod:`bebcharge.scenario`), charger action-space graphs
(:mod:`bebcharge.graph`), the CC-CV charge model (:mod:`bebcharge.charge_model`),
MILP assembly (:mod:`bebcharge.milp`), a small deterministic branch-and-bound
solver (:mod:`bebcharge.solver`), a receding-horizon controller
(:mod:`bebcharge.receding_horizon`), stochastic truth models and Monte-Carlo
evaluation (:mod:`bebcharge.simulation`), and a command-line front end
(:mod:`bebcharge.cli`).
"""

__version__ = "0.1.0"
