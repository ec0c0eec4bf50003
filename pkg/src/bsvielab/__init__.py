"""Numerical laboratory for linear backward stochastic Volterra integral
equations whose generators read the solution through a delay measure.

The pieces compose in the order an experiment runs them: a delay measure
and kernel pair collapse into the reduced kernel and its resolvent
(:mod:`bsvielab.kernels`), the measure and g induce the change of drift
(:mod:`bsvielab.girsanov`), terminal families supply free terms and
their conditional expectations (:mod:`bsvielab.terminal`), the explicit
solver evaluates the resolvent formula for (Y, Z) and the solution norms
(:mod:`bsvielab.solver`), and independent oracles re-solve both the
reduced and the genuinely delayed equations (:mod:`bsvielab.oracles`).
The command-line harness (:mod:`bsvielab.cli`) wires configs from
:mod:`bsvielab.config` through all of it into CSV reports.
"""

from .config import ConfigError, ExperimentConfig, load_config, \
    load_config_file
from .girsanov import DegenerateWeights, DriftFunction, PathEnsemble, \
    drift, expect_q, girsanov_report, sample_paths
from .kernels import GridMismatch, HorizonMismatch, KernelSpec, KernelTable, \
    ResolventTable, ToleranceUnreachable, TriangularGrid, build_phi, \
    constant_kernel, example33_kernel, example33_reference, \
    iterated_sup_bound, poly_exp_kernel, resolvent, series_tail, tail_bound, \
    tabulated_kernel, volterra_compose, zero_kernel
from .measures import (
    Atoms,
    DelayMeasure,
    DiracAt,
    DomainError,
    MassError,
    Mixture,
    SupportError,
    Uniform,
)
from .oracles import LsmcResult, PicardConfig, PicardDiverged, PicardResult, \
    PicardStalled, RegressionIllConditioned, SingularStep, \
    build_delayed_operator, lipschitz_constant, residual_delayed, \
    residual_reduced, residual_reduced_pathwise, solve_delayed_lsmc, \
    solve_delayed_picard, solve_reduced_collocation
from .solver import NormReport, SmoothnessReport, SolutionField, \
    UnsupportedFamily, compute_U, norms, smoothness_diagnostics, solve_Y, \
    solve_Z
from .terminal import Deterministic, GaussianLinear, QuadratureError, \
    TerminalFunction, conditional_F, evaluate_F, gauss_hermite_mean, \
    make_f0, make_h, make_phi, malliavin_F

__all__ = [
    "Atoms",
    "ConfigError",
    "DegenerateWeights",
    "DelayMeasure",
    "Deterministic",
    "DiracAt",
    "DomainError",
    "DriftFunction",
    "ExperimentConfig",
    "GaussianLinear",
    "GridMismatch",
    "HorizonMismatch",
    "KernelSpec",
    "KernelTable",
    "LsmcResult",
    "MassError",
    "Mixture",
    "NormReport",
    "PathEnsemble",
    "PicardConfig",
    "PicardDiverged",
    "PicardResult",
    "PicardStalled",
    "QuadratureError",
    "RegressionIllConditioned",
    "ResolventTable",
    "SingularStep",
    "SmoothnessReport",
    "SolutionField",
    "SupportError",
    "TerminalFunction",
    "ToleranceUnreachable",
    "TriangularGrid",
    "Uniform",
    "UnsupportedFamily",
    "build_delayed_operator",
    "build_phi",
    "compute_U",
    "conditional_F",
    "constant_kernel",
    "drift",
    "evaluate_F",
    "example33_kernel",
    "example33_reference",
    "expect_q",
    "gauss_hermite_mean",
    "girsanov_report",
    "iterated_sup_bound",
    "lipschitz_constant",
    "load_config",
    "load_config_file",
    "make_f0",
    "make_h",
    "make_phi",
    "malliavin_F",
    "norms",
    "poly_exp_kernel",
    "residual_delayed",
    "residual_reduced",
    "residual_reduced_pathwise",
    "resolvent",
    "sample_paths",
    "series_tail",
    "smoothness_diagnostics",
    "solve_Y",
    "solve_Z",
    "solve_delayed_lsmc",
    "solve_delayed_picard",
    "solve_reduced_collocation",
    "tabulated_kernel",
    "tail_bound",
    "volterra_compose",
    "zero_kernel",
]
