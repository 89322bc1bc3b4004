"""Particle update rules.

Five named samplers share one structure: move particles along a drift
built from the target score, optionally couple them through a kernel or
an entropic-transport force, and optionally inject Gaussian noise.

* sgld:     independent Langevin chains (score drift + noise).
* svgd:     deterministic kernel flow (smoothed score + repulsion).
* w-sgld:   discrete flow; each iteration takes one gradient step on an
            energy whose entropy term is approximated through an entropic
            coupling with the previous (lagged) ensemble.
* w-sgld-b: deterministic flow whose entropy force uses kernel-density
            normalisation ("blob" smoothing) instead of a coupling.
* pi-sgld:  sgld plus the svgd interaction, weighted by svgd_weight and
            with noise temperature diffusion_weight.

`unified_step` exposes the same updates through an explicit
(drift, interaction, diffusion, flow) switch set and rejects switch
combinations that do not keep the target density stationary unless the
caller asserts them on purpose.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    DivergenceError,
    ParticleEnsemble,
    RngStream,
    SamplerConfig,
    gaussian_noise,
    pairwise_sq_dist,
)
from .kernels import KernelSpec, resolve_bandwidth
from .targets import TargetModel
from .transport import sinkhorn_plan

__all__ = [
    "SamplerKind",
    "blob_velocity",
    "pi_sgld_step",
    "run_sampler",
    "sgld_step",
    "step",
    "svgd_direction",
    "svgd_step",
    "unified_step",
    "wsgld_b_step",
    "wsgld_grad_f1",
    "wsgld_grad_f2",
    "wsgld_step",
]


def _require_finite(arr: np.ndarray, what: str):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"non-finite {what}; the run has diverged (reduce the stepsize?)")


def _gradients(target: TargetModel, positions: np.ndarray, config: SamplerConfig, rng: RngStream) -> np.ndarray:
    """Score estimates for every particle, minibatched when configured."""
    if config is not None and config.minibatch_size is not None:
        grads = target.stochastic_grad(positions, config.minibatch_size, rng)
    else:
        grads = target.grad_log_density(positions)
    _require_finite(grads, "gradient")
    return grads


def sgld_step(ensemble: ParticleEnsemble, target: TargetModel, config: SamplerConfig,
              rng: RngStream, iteration: int = 0) -> ParticleEnsemble:
    """One Langevin step per particle:

        theta' = theta + h * grad + sqrt(2 * diffusion_weight * h) * noise

    Each particle is an independent chain: its own minibatch draw, its own
    noise. diffusion_weight = 1 is the standard scheme; 0 turns the update
    into noise-free gradient ascent. The stepsize follows config's decay
    policy (constant by default).
    """
    positions = ensemble.positions
    grads = _gradients(target, positions, config, rng)
    h = config.stepsize_at(iteration)
    new = positions + h * grads
    scale = np.sqrt(2.0 * config.diffusion_weight * h)
    if scale > 0.0:
        new = new + scale * gaussian_noise(rng, positions.shape)
    _require_finite(new, "position")
    return ensemble.replace(new)


def _interaction_from(positions: np.ndarray, grads: np.ndarray, h: float) -> np.ndarray:
    """Kernel interaction given precomputed scores.

    Row i averages kappa-weighted scores plus the kernel repulsion:
        (1/M) sum_j [kappa(x_j, x_i) grads_j + grad_{x_j} kappa(x_j, x_i)]
    """
    m = positions.shape[0]
    gram = np.exp(-pairwise_sq_dist(positions) / h)
    drive = gram @ grads
    repulsion = (2.0 / h) * (gram.sum(axis=1)[:, None] * positions - gram @ positions)
    return (drive + repulsion) / m


def svgd_direction(ensemble: ParticleEnsemble, target: TargetModel, kernel: KernelSpec,
                   config: SamplerConfig = None, rng: RngStream = None) -> np.ndarray:
    """The kernel flow direction (stepsize not included).

    Uses exact scores unless `config` asks for minibatches. Median
    bandwidths are resolved against the current ensemble.
    """
    positions = ensemble.positions
    grads = _gradients(target, positions, config, rng)
    h = resolve_bandwidth(kernel, ensemble)
    return _interaction_from(positions, grads, h)


def svgd_step(ensemble: ParticleEnsemble, target: TargetModel, kernel: KernelSpec,
              config: SamplerConfig, rng: RngStream = None) -> ParticleEnsemble:
    """Deterministic kernel-flow update: theta' = theta + h * direction."""
    direction = svgd_direction(ensemble, target, kernel, config, rng)
    new = ensemble.positions + config.stepsize * direction
    _require_finite(new, "position")
    return ensemble.replace(new)


def wsgld_grad_f1(ensemble: ParticleEnsemble, target: TargetModel,
                  config: SamplerConfig = None, rng: RngStream = None) -> np.ndarray:
    """Gradient of the potential-energy term of the flow objective.

    The objective is minimised, so row i is -grad U(theta_i) (or its
    minibatch estimate).
    """
    return -_gradients(target, ensemble.positions, config, rng)


def wsgld_grad_f2(ensemble, previous, reg: float, gamma: float = None, plan=None) -> np.ndarray:
    """Gradient of the coupling term against the lagged ensemble.

    Row i:  sum_j 2 s_ij (d_ij / reg - 1) exp(-d_ij / reg) (x_i - y_j)

    with d_ij the squared distance between current particle x_i and lagged
    particle y_j. The scaling s_ij is either the fixed surrogate `gamma`
    or u_i v_j from a solved transport plan (whose plan entries already
    include the exp factor, so it is applied once either way). Minimising
    this term pulls a particle towards lagged particles farther than
    sqrt(reg) and pushes it off those closer, which is what keeps the
    cloud spread out.
    """
    if (gamma is None) == (plan is None):
        raise ValueError("pass exactly one of gamma= or plan=")
    x = getattr(ensemble, "positions", ensemble)
    y = getattr(previous, "positions", previous)
    d = pairwise_sq_dist(x, y)
    if gamma is not None:
        if not gamma > 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        w = 2.0 * gamma * (d / reg - 1.0) * np.exp(-d / reg)
    else:
        w = 2.0 * plan.plan * (d / reg - 1.0)
    return w.sum(axis=1)[:, None] * x - w @ y


def wsgld_step(ensemble: ParticleEnsemble, target: TargetModel, config: SamplerConfig,
               rng: RngStream, previous: ParticleEnsemble = None) -> ParticleEnsemble:
    """Discrete-flow update against a lagged ensemble.

    Takes config.inner_steps gradient-descent steps on the flow objective
    while the lagged ensemble stays fixed; the caller then promotes the
    result to be the next iteration's lagged ensemble. On the first
    iteration the initial ensemble plays the lagged role. The coupling
    scaling comes from config.coupling: the fixed plan_scale surrogate, or
    a Sinkhorn plan re-solved on every evaluation.
    """
    prev = previous if previous is not None else ensemble
    positions = ensemble.positions
    h = config.stepsize
    for _ in range(config.inner_steps):
        f1 = -_gradients(target, positions, config, rng)
        if config.coupling == "sinkhorn":
            plan = sinkhorn_plan(pairwise_sq_dist(positions, prev.positions), config.entropic_reg)
            if not plan.converged:
                warnings.warn(
                    f"transport solve stopped at {plan.iterations} iterations with marginal error {plan.marginal_error:.2e}",
                    RuntimeWarning, stacklevel=2,
                )
            f2 = wsgld_grad_f2(positions, prev.positions, config.entropic_reg, plan=plan)
        else:
            f2 = wsgld_grad_f2(positions, prev.positions, config.entropic_reg, gamma=config.plan_scale)
        positions = positions - h * (f1 + f2)
        _require_finite(positions, "position")
    return ensemble.replace(positions)


def blob_velocity(ensemble: ParticleEnsemble, target: TargetModel, kernel: KernelSpec,
                  config: SamplerConfig = None, rng: RngStream = None) -> np.ndarray:
    """Particle velocity of the kernel-density ("blob") flow.

    Row i is the score plus two kernel-density repulsion terms:

        v_i = grad U(x_i) - sum_j gradK_ij / sum_k K_ik
                          - sum_j gradK_ij / sum_k K_jk

    where gradK_ij is the gradient of K(x_i, x_j) in x_i. The signs are
    fixed so the net motion ascends the log density while the smoothed
    entropy terms push particles apart; a single particle reduces to plain
    gradient ascent because gradK vanishes at zero separation.
    """
    positions = ensemble.positions
    grads = _gradients(target, positions, config, rng)
    h = resolve_bandwidth(kernel, ensemble)
    gram = np.exp(-pairwise_sq_dist(positions) / h)
    sums = gram.sum(axis=1)  # symmetric gram, so row sums = column sums
    gram_pos = gram @ positions
    row_grad_sum = -(2.0 / h) * (sums[:, None] * positions - gram_pos)
    term_self = row_grad_sum / sums[:, None]
    weighted = gram / sums[None, :]
    term_cross = -(2.0 / h) * (weighted.sum(axis=1)[:, None] * positions - weighted @ positions)
    return grads - term_self - term_cross


def wsgld_b_step(ensemble: ParticleEnsemble, target: TargetModel, kernel: KernelSpec,
                 config: SamplerConfig, rng: RngStream = None) -> ParticleEnsemble:
    """Forward-Euler step along the blob velocity field."""
    velocity = blob_velocity(ensemble, target, kernel, config, rng)
    new = ensemble.positions + config.stepsize * velocity
    _require_finite(new, "position")
    return ensemble.replace(new)


def pi_sgld_step(ensemble: ParticleEnsemble, target: TargetModel, kernel: KernelSpec,
                 config: SamplerConfig, rng: RngStream, iteration: int = 0,
                 include_drift: bool = True) -> ParticleEnsemble:
    """Langevin update with the kernel interaction added to the drift:

        theta' = theta + h * (grad + svgd_weight * interaction)
                       + sqrt(2 * diffusion_weight * h) * noise

    With svgd_weight = 0 this is exactly sgld_step (same code path, same
    draw order, bitwise-equal trajectories under a shared seed).
    """
    if config.svgd_weight == 0.0 and include_drift:
        return sgld_step(ensemble, target, config, rng, iteration)
    positions = ensemble.positions
    grads = _gradients(target, positions, config, rng)
    h_kernel = resolve_bandwidth(kernel, ensemble)
    direction = config.svgd_weight * _interaction_from(positions, grads, h_kernel)
    if include_drift:
        direction = grads + direction
    new = positions + config.stepsize * direction
    scale = np.sqrt(2.0 * config.diffusion_weight * config.stepsize)
    if scale > 0.0:
        new = new + scale * gaussian_noise(rng, positions.shape)
    _require_finite(new, "position")
    return ensemble.replace(new)


# ---------------------------------------------------------------------------
# Unified switch set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplerKind:
    """A sampler named either by tag or by its switch settings.

    Named tags: 'sgld', 'svgd', 'w-sgld', 'w-sgld-b', 'pi-sgld'. The tag
    'unified' selects behaviour through the switches:

        drift:       include the score term in the deterministic motion.
        interaction: 'svgd' for the kernel coupling, 'none' otherwise.
        diffusion:   include an entropy / noise channel.
        flow:        how diffusion is realised: 'simulate' (injected
                     noise), 'discrete' (lagged-ensemble coupling force),
                     or 'blob' (kernel-density force).

    A named tag fixes the switches to its preset, so the tag and the
    switch fields can never disagree. Switch combinations outside the
    known stationary presets are rejected unless user_asserted is set.
    """

    tag: str
    drift: bool = True
    interaction: str = "none"
    diffusion: bool = True
    flow: str = "simulate"
    user_asserted: bool = False

    _TAGS = ("sgld", "svgd", "w-sgld", "w-sgld-b", "pi-sgld", "unified")
    _TAG_SWITCHES = {
        "sgld": (True, "none", True, "simulate"),
        "svgd": (False, "svgd", False, "simulate"),
        "w-sgld": (True, "none", True, "discrete"),
        "w-sgld-b": (True, "none", True, "blob"),
        "pi-sgld": (True, "svgd", True, "simulate"),
    }

    def __post_init__(self):
        if self.tag not in self._TAGS:
            raise ValueError(f"unknown sampler tag {self.tag!r}; available: {list(self._TAGS)}")
        preset = self._TAG_SWITCHES.get(self.tag)
        if preset is not None:
            drift, interaction, diffusion, flow = preset
            object.__setattr__(self, "drift", drift)
            object.__setattr__(self, "interaction", interaction)
            object.__setattr__(self, "diffusion", diffusion)
            object.__setattr__(self, "flow", flow)
        if self.interaction not in ("none", "svgd"):
            raise ValueError(f"interaction must be 'none' or 'svgd', got {self.interaction!r}")
        if self.flow not in ("simulate", "discrete", "blob"):
            raise ValueError(f"flow must be 'simulate', 'discrete' or 'blob', got {self.flow!r}")


# Switch settings that reproduce each named sampler. These are the preset
# combinations known to leave the target density stationary.
_PRESET_SWITCHES = {
    ("drift", "none", "diffusion", "simulate"): "sgld",
    ("nodrift", "svgd", "nodiffusion", "simulate"): "svgd",
    ("drift", "none", "diffusion", "discrete"): "w-sgld",
    ("drift", "none", "diffusion", "blob"): "w-sgld-b",
    ("drift", "svgd", "diffusion", "simulate"): "pi-sgld",
}


def _switch_key(kind: SamplerKind):
    return (
        "drift" if kind.drift else "nodrift",
        kind.interaction,
        "diffusion" if kind.diffusion else "nodiffusion",
        kind.flow if kind.diffusion else "simulate",
    )


def unified_step(ensemble: ParticleEnsemble, target: TargetModel, kernel: KernelSpec,
                 kind: SamplerKind, config: SamplerConfig, rng: RngStream,
                 previous: ParticleEnsemble = None, iteration: int = 0) -> ParticleEnsemble:
    """Step under an explicit switch set.

    Recognised switch combinations dispatch to the named steppers, so the
    unified surface and the individual samplers cannot drift apart. Other
    combinations raise unless `kind.user_asserted`: dropping, say, the
    noise channel while keeping the score drift leaves nothing to balance
    the drift's probability flux, so the target density is no longer a
    fixed point of the update. Asserted combinations run as the literal
    composition of the selected terms.
    """
    tag = _PRESET_SWITCHES.get(_switch_key(kind))
    if tag is not None:
        return step(ensemble, target, SamplerKind(tag), config, rng,
                    kernel=kernel, previous=previous, iteration=iteration)
    if not kind.user_asserted:
        raise ValueError(
            "switch combination "
            f"(drift={kind.drift}, interaction={kind.interaction}, "
            f"diffusion={kind.diffusion}, flow={kind.flow}) "
            "does not keep the target density stationary: the deterministic "
            "drift and the entropy/noise channel must balance each other's "
            "probability flux. Known presets: "
            f"{sorted(set(_PRESET_SWITCHES.values()))}. "
            "Set user_asserted=True to run it anyway."
        )
    positions = ensemble.positions
    grads = _gradients(target, positions, config, rng)
    direction = np.zeros_like(positions)
    if kind.drift:
        direction = direction + grads
    if kind.interaction == "svgd":
        h_kernel = resolve_bandwidth(kernel, ensemble)
        direction = direction + config.svgd_weight * _interaction_from(positions, grads, h_kernel)
    noise_scale = 0.0
    if kind.diffusion:
        if kind.flow == "simulate":
            noise_scale = np.sqrt(2.0 * config.diffusion_weight * config.stepsize)
        elif kind.flow == "blob":
            entropy_force = blob_velocity(ensemble, target, kernel, config=None, rng=None) \
                - target.grad_log_density(positions)
            direction = direction + config.diffusion_weight * entropy_force
        else:  # discrete
            prev = previous if previous is not None else ensemble
            f2 = wsgld_grad_f2(positions, prev.positions, config.entropic_reg, gamma=config.plan_scale)
            direction = direction - config.diffusion_weight * f2
    new = positions + config.stepsize * direction
    if noise_scale > 0.0:
        new = new + noise_scale * gaussian_noise(rng, positions.shape)
    _require_finite(new, "position")
    return ensemble.replace(new)


def step(ensemble: ParticleEnsemble, target: TargetModel, kind: SamplerKind,
         config: SamplerConfig, rng: RngStream, kernel: KernelSpec = None,
         previous: ParticleEnsemble = None, iteration: int = 0) -> ParticleEnsemble:
    """Dispatch one update for any sampler kind."""
    if kernel is None:
        kernel = KernelSpec(bandwidth=config.bandwidth, floor=config.bandwidth_floor)
    if kind.tag == "sgld":
        return sgld_step(ensemble, target, config, rng, iteration)
    if kind.tag == "svgd":
        return svgd_step(ensemble, target, kernel, config, rng)
    if kind.tag == "w-sgld":
        return wsgld_step(ensemble, target, config, rng, previous)
    if kind.tag == "w-sgld-b":
        return wsgld_b_step(ensemble, target, kernel, config, rng)
    if kind.tag == "pi-sgld":
        return pi_sgld_step(ensemble, target, kernel, config, rng, iteration)
    return unified_step(ensemble, target, kernel, kind, config, rng, previous, iteration)


def run_sampler(target: TargetModel, kind: SamplerKind, config: SamplerConfig,
                ensemble: ParticleEnsemble, rng: RngStream, kernel: KernelSpec = None,
                callback=None) -> ParticleEnsemble:
    """Iterate a sampler for config.iterations steps.

    Keeps the one-iteration lag needed by the discrete flow and invokes
    `callback(iteration, ensemble)` after each update (iterations are
    1-based here; the caller sees the initial state as iteration 0).
    """
    if kernel is None:
        kernel = KernelSpec(bandwidth=config.bandwidth, floor=config.bandwidth_floor)
    previous = ensemble
    for t in range(config.iterations):
        updated = step(ensemble, target, kind, config, rng,
                       kernel=kernel, previous=previous, iteration=t)
        previous = ensemble
        ensemble = updated
        if callback is not None:
            callback(t + 1, ensemble)
    return ensemble
