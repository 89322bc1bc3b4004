"""particleflow: particle-optimization Bayesian sampling.

A small family of samplers that move an interacting particle ensemble
towards a target density: independent Langevin chains, the deterministic
kernel flow, two Wasserstein-flow discretisations (coupling-based and
kernel-density-based), and the combined kernel + noise update. Targets,
kernels, transport plans, diagnostics, and a YAML-driven experiment
harness round out the package; see the README for the CLI.
"""

from .core import (
    DivergenceError,
    ParticleEnsemble,
    RngStream,
    SamplerConfig,
    gaussian_noise,
    pairwise_sq_dist,
)
from .experiment import (
    ConfigError,
    ExperimentResult,
    ExperimentSpec,
    load_spec,
    read_metrics_csv,
    read_particles_csv,
    run_experiment,
    run_sweep,
    save_spec,
    spec_from_dict,
    spec_to_dict,
)
from .diagnostics import (
    GroundTruthGrid,
    MetricRecord,
    ensemble_predict_logreg,
    finite_diff_check,
    mmd_squared,
    mode_coverage,
    moment_errors,
    stein_check,
)
from .kernels import (
    KernelSpec,
    kernel_eval,
    kernel_grad_first,
    kernel_matrix,
    median_bandwidth,
    resolve_bandwidth,
)
from .samplers import (
    SamplerKind,
    blob_velocity,
    pi_sgld_step,
    run_sampler,
    sgld_step,
    step,
    svgd_direction,
    svgd_step,
    unified_step,
    wsgld_b_step,
    wsgld_grad_f1,
    wsgld_grad_f2,
    wsgld_step,
)
from .targets import (
    BananaTarget,
    GaussianMixture,
    GaussianMixtureSpec,
    LogisticRegressionData,
    LogisticRegressionTarget,
    RingTarget,
    TargetModel,
    load_dataset,
    map_estimate,
    standard_gaussian,
    synth_logreg,
    toy_potential,
    toy_target,
)
from .transport import TransportPlan, exact_plan_bruteforce, plan_entropy, sinkhorn_plan

__version__ = "0.1.0"

__all__ = [
    "BananaTarget",
    "ConfigError",
    "DivergenceError",
    "ExperimentResult",
    "ExperimentSpec",
    "GaussianMixture",
    "GaussianMixtureSpec",
    "GroundTruthGrid",
    "KernelSpec",
    "LogisticRegressionData",
    "LogisticRegressionTarget",
    "MetricRecord",
    "ParticleEnsemble",
    "RingTarget",
    "RngStream",
    "SamplerConfig",
    "SamplerKind",
    "TargetModel",
    "TransportPlan",
    "blob_velocity",
    "ensemble_predict_logreg",
    "exact_plan_bruteforce",
    "finite_diff_check",
    "gaussian_noise",
    "kernel_eval",
    "kernel_grad_first",
    "kernel_matrix",
    "load_dataset",
    "load_spec",
    "map_estimate",
    "median_bandwidth",
    "mmd_squared",
    "mode_coverage",
    "moment_errors",
    "pairwise_sq_dist",
    "pi_sgld_step",
    "plan_entropy",
    "read_metrics_csv",
    "read_particles_csv",
    "resolve_bandwidth",
    "run_experiment",
    "run_sampler",
    "run_sweep",
    "save_spec",
    "sgld_step",
    "sinkhorn_plan",
    "spec_from_dict",
    "spec_to_dict",
    "standard_gaussian",
    "stein_check",
    "step",
    "svgd_direction",
    "svgd_step",
    "synth_logreg",
    "toy_potential",
    "toy_target",
    "unified_step",
    "wsgld_b_step",
    "wsgld_grad_f1",
    "wsgld_grad_f2",
    "wsgld_step",
]
