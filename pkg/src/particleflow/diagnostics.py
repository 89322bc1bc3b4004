"""Run diagnostics: discrepancy metrics and ground-truth quadrature.

The 2-D toy targets get their reference moments, reference samples, and
density contours from a midpoint-rule grid over a box chosen wide enough
that the truncated mass is negligible. Kernel discrepancies are computed
blockwise so a 10^4-sample reference set does not materialise a 10^8-entry
Gram matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ParticleEnsemble, RngStream, pairwise_sq_dist, _positions
from .kernels import KernelSpec, resolve_bandwidth
from .targets import LogisticRegressionData, LogisticRegressionTarget, TargetModel

__all__ = [
    "GroundTruthGrid",
    "MetricRecord",
    "ensemble_predict_logreg",
    "finite_diff_check",
    "mmd_squared",
    "mode_coverage",
    "moment_errors",
    "stein_check",
]

_BLOCK_ROWS_BUDGET = 4_000_000  # elements per kernel block


@dataclass(frozen=True)
class MetricRecord:
    """One scalar diagnostic value at one iteration."""

    iteration: int
    metric: str
    value: float

    def __post_init__(self):
        if self.iteration < 0:
            raise ValueError(f"iteration must be >= 0, got {self.iteration}")
        if not np.isfinite(self.value):
            raise ValueError(f"metric {self.metric!r} has non-finite value {self.value}")


class GroundTruthGrid:
    """Midpoint-rule quadrature of a 2-D target on a box.

    Provides normalised cell masses, reference moments, mass-quantile
    contour levels, and jittered reference samples drawn from the cell
    histogram.

    Args:
        target: 2-D target model.
        lo, hi: box corners; defaults cover [-8, 8]^2.
        resolution: cells per axis (default 400).
        max_boundary_mass: construction fails if the outermost cell ring
            holds more than this, which catches a box that clips the
            target.
    """

    def __init__(self, target: TargetModel, lo=(-8.0, -8.0), hi=(8.0, 8.0),
                 resolution: int = 400, max_boundary_mass: float = 1e-6):
        if target.dim != 2:
            raise ValueError("quadrature grid supports 2-D targets only")
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != (2,) or hi.shape != (2,) or not np.all(hi > lo):
            raise ValueError("box corners must satisfy hi > lo componentwise")
        if resolution < 2:
            raise ValueError(f"resolution must be >= 2, got {resolution}")
        self.lo, self.hi = lo, hi
        self.resolution = int(resolution)
        widths = (hi - lo) / resolution
        self.cell_area = float(widths[0] * widths[1])
        self.xs = lo[0] + (np.arange(resolution) + 0.5) * widths[0]
        self.ys = lo[1] + (np.arange(resolution) + 0.5) * widths[1]
        gx, gy = np.meshgrid(self.xs, self.ys, indexing="xy")
        self.centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
        logp = target.log_density(self.centers)
        unnorm = np.exp(logp - np.max(logp))
        total = float(unnorm.sum())
        self.cell_mass = unnorm / total  # sums to 1 exactly up to rounding
        self.density = (self.cell_mass / self.cell_area).reshape(resolution, resolution)
        edge = np.zeros((resolution, resolution), dtype=bool)
        edge[0, :] = edge[-1, :] = True
        edge[:, 0] = edge[:, -1] = True
        self.boundary_mass = float(self.cell_mass.reshape(resolution, resolution)[edge].sum())
        if self.boundary_mass > max_boundary_mass:
            raise ValueError(
                f"boundary cells hold {self.boundary_mass:.2e} of the mass; enlarge the box"
            )
        self.mean = self.cell_mass @ self.centers
        centred = self.centers - self.mean
        self.cov = (centred * self.cell_mass[:, None]).T @ centred
        self._cell_widths = widths

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        """n reference draws: cells by mass, uniform jitter within a cell."""
        u = rng.uniform(0.0, 1.0, (n,))
        idx = np.searchsorted(np.cumsum(self.cell_mass), u)
        jitter = rng.uniform(-0.5, 0.5, (n, 2)) * self._cell_widths[None, :]
        return self.centers[idx] + jitter

    def contour_levels(self, fractions: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 0.9)) -> np.ndarray:
        """Density levels whose superlevel sets enclose the given mass
        fractions, smallest level (widest region) first."""
        fractions = np.asarray(fractions, dtype=float)
        if np.any(fractions <= 0) or np.any(fractions >= 1):
            raise ValueError("fractions must lie strictly between 0 and 1")
        order = np.argsort(self.density.ravel())[::-1]
        cum = np.cumsum(self.cell_mass.ravel()[order])
        levels = np.empty(fractions.shape)
        flat = self.density.ravel()
        for k, frac in enumerate(fractions):
            pos = int(np.searchsorted(cum, frac))
            pos = min(pos, order.shape[0] - 1)
            levels[k] = flat[order[pos]]
        return np.sort(np.unique(levels))

    def enclosed_mass(self, level: float) -> float:
        """Total mass of cells whose density is >= level."""
        return float(self.cell_mass[self.density.ravel() >= level].sum())


def _mean_kernel(a: np.ndarray, b: np.ndarray, h: float) -> float:
    """Mean of exp(-d/h) over all pairs, accumulated in fixed row blocks."""
    rows = max(1, _BLOCK_ROWS_BUDGET // max(1, b.shape[0]))
    total = 0.0
    for lo in range(0, a.shape[0], rows):
        block = np.exp(-pairwise_sq_dist(a[lo:lo + rows], b) / h)
        total += float(block.sum())
    return total / (a.shape[0] * b.shape[0])


def mmd_squared(a, b, kernel: KernelSpec) -> float:
    """Biased (V-statistic) squared maximum mean discrepancy.

    Requires a kernel with a fixed bandwidth: a data-dependent bandwidth
    would make values at different iterations incomparable. Identical
    inputs give exactly zero.
    """
    if isinstance(kernel.bandwidth, str):
        raise ValueError("mmd_squared needs a fixed kernel bandwidth")
    h = float(kernel.bandwidth)
    x = _positions(a)
    y = _positions(b)
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    return (_mean_kernel(x, x, h) + _mean_kernel(y, y, h)) - 2.0 * _mean_kernel(x, y, h)


def moment_errors(ensemble: ParticleEnsemble, grid: GroundTruthGrid) -> dict:
    """Distance of ensemble moments from the quadrature reference.

    Returns {'mean_error': L2 distance of means,
             'cov_error': Frobenius distance of covariances}.
    The ensemble covariance uses the 1/M normalisation, so a single
    particle has zero covariance by convention.
    """
    pos = ensemble.positions
    mean = pos.mean(axis=0)
    centred = pos - mean
    cov = centred.T @ centred / pos.shape[0]
    return {
        "mean_error": float(np.linalg.norm(mean - grid.mean)),
        "cov_error": float(np.linalg.norm(cov - grid.cov, ord="fro")),
    }


def mode_coverage(ensemble: ParticleEnsemble, modes: np.ndarray, radius: float) -> np.ndarray:
    """Fraction of particles within `radius` of each mode centre.

    Particles are assigned to their nearest mode and count only if inside
    the ball, so the fractions are disjoint. The balls must be disjoint
    too: radius has to be under half the smallest inter-mode distance.
    """
    modes = np.atleast_2d(np.asarray(modes, dtype=float))
    if modes.shape[0] < 1:
        raise ValueError("need at least one mode")
    if modes.shape[1] != ensemble.dim:
        raise ValueError(f"mode dimension {modes.shape[1]} != ensemble dimension {ensemble.dim}")
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if modes.shape[0] > 1:
        gaps = np.sqrt(pairwise_sq_dist(modes))
        min_gap = float(gaps[np.triu_indices(modes.shape[0], k=1)].min())
        if radius >= min_gap / 2.0:
            raise ValueError(
                f"radius {radius} overlaps mode balls (closest modes are {min_gap:.3g} apart)"
            )
    d = np.sqrt(pairwise_sq_dist(ensemble.positions, modes))
    nearest = np.argmin(d, axis=1)
    inside = d[np.arange(d.shape[0]), nearest] <= radius
    counts = np.bincount(nearest[inside], minlength=modes.shape[0])
    return counts / ensemble.count


def stein_check(target: TargetModel, kernel: KernelSpec, n_samples: int, rng: RngStream) -> float:
    """Norm of the mean kernel interaction over exact target samples.

    Each pair contributes kappa(x_j, x_i) grad U(x_j) + grad_{x_j}
    kappa(x_j, x_i); under the target the pair expectation vanishes, so
    the norm of the empirical mean decays like 1/sqrt(n_samples). Only
    targets with exact samplers qualify.
    """
    if not hasattr(target, "sample"):
        raise ValueError("stein_check needs a target with an exact sampler")
    samples = np.asarray(target.sample(rng, n_samples), dtype=float)
    grads = target.grad_log_density(samples)
    h = resolve_bandwidth(kernel, samples)
    n = samples.shape[0]
    drive = np.zeros(samples.shape[1])
    repulse = np.zeros(samples.shape[1])
    rows = max(1, _BLOCK_ROWS_BUDGET // n)
    for lo in range(0, n, rows):
        block = samples[lo:lo + rows]
        gram = np.exp(-pairwise_sq_dist(block, samples) / h)  # rows index j
        weight = gram.sum(axis=1)
        drive += weight @ grads[lo:lo + rows]
        # sum_i grad_{x_j} kappa(x_j, x_i) = -(2/h)(weight_j x_j - sum_i kappa_ji x_i)
        repulse += -(2.0 / h) * (weight @ block - (gram @ samples).sum(axis=0))
    return float(np.linalg.norm((drive + repulse) / (n * n)))


def finite_diff_check(target: TargetModel, points: np.ndarray, step: float = 1e-5) -> float:
    """Worst relative error of the analytic gradient vs central differences.

    The difference step is scaled per coordinate by max(1, |coordinate|).
    Returns max over points and coordinates of
    |analytic - numeric| / (|analytic| + 1e-12).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    worst = 0.0
    for p in points:
        analytic = target.grad_log_density(p)
        for j in range(points.shape[1]):
            hj = step * max(1.0, abs(p[j]))
            plus = p.copy()
            minus = p.copy()
            plus[j] += hj
            minus[j] -= hj
            numeric = (target.log_density(plus) - target.log_density(minus)) / (2.0 * hj)
            rel = abs(analytic[j] - numeric) / (abs(analytic[j]) + 1e-12)
            worst = max(worst, rel)
    return worst


def ensemble_predict_logreg(ensemble: ParticleEnsemble, target: LogisticRegressionTarget,
                            data: LogisticRegressionData) -> dict:
    """Posterior-averaged predictions of the logistic ensemble.

    The predictive probability of label +1 is the mean of the per-particle
    sigmoid probabilities; accuracy thresholds it at 1/2 (ties count as
    +1). Returns {'accuracy': ..., 'mean_log_likelihood': ...} on `data`.
    """
    probs = target.predict_proba(ensemble.positions, data.features)
    predicted = np.where(probs >= 0.5, 1.0, -1.0)
    accuracy = float(np.mean(predicted == data.labels))
    label_probs = np.where(data.labels > 0, probs, 1.0 - probs)
    mean_ll = float(np.mean(np.log(np.clip(label_probs, 1e-300, None))))
    return {"accuracy": accuracy, "mean_log_likelihood": mean_ll}
