"""Simulated runtime-confounding design, oracles and the Monte Carlo harness."""

from .dgp import DgpConfig, SimulatedSample, SimulatedUnit, calibrate_intercept, generate
from .experiment import McResult, ReplicationSpec, Scenario, aggregate, replication_seeds, run_experiment, run_replication
from .oracle import CorruptedNuisances, Oracle, OracleNuisances

__all__ = [
    "CorruptedNuisances", "DgpConfig", "McResult", "Oracle", "OracleNuisances", "ReplicationSpec",
    "Scenario", "SimulatedSample", "SimulatedUnit", "aggregate", "calibrate_intercept", "generate",
    "replication_seeds", "run_experiment", "run_replication",
]
