"""Simulation and numerical checks for randomly perturbed iterated function systems

    x_{n+1} = S(x_n, t_{n+1}) + h_{n+1}.
"""

__version__ = "0.1.0"

from .chain import EmpiricalMeasure, Trajectory, drift_check, push_forward, simulate, stationary_estimate, step
from .climit import Observable, center_g, clt_report, eta_samples, mw_summands
from .coupling import (
    coupled_step,
    coupling_time,
    hitting_time,
    q_mass_check,
    simulate_coupled,
    tail_report,
)
from .metrics import BLResult, RateFit, bl_distance, convergence_curve, fit_geometric_rate, ks_statistic
from .model import AssumptionReport, ModelError, ModelSpec, build_model, cc_affine, check_assumptions
from .rng import RngStream, rng_stream
from .sampling import min_mass, sample_coupled_times, sample_h, sample_t

__all__ = [
    "AssumptionReport",
    "BLResult",
    "EmpiricalMeasure",
    "ModelError",
    "ModelSpec",
    "Observable",
    "RateFit",
    "RngStream",
    "Trajectory",
    "bl_distance",
    "build_model",
    "cc_affine",
    "center_g",
    "check_assumptions",
    "clt_report",
    "convergence_curve",
    "coupled_step",
    "coupling_time",
    "drift_check",
    "eta_samples",
    "fit_geometric_rate",
    "hitting_time",
    "ks_statistic",
    "min_mass",
    "mw_summands",
    "push_forward",
    "q_mass_check",
    "rng_stream",
    "sample_coupled_times",
    "sample_h",
    "sample_t",
    "simulate",
    "simulate_coupled",
    "stationary_estimate",
    "step",
    "tail_report",
]
