"""Radial basis function kernel and the median bandwidth rule.

The kernel convention is kappa(x, y) = exp(-||x - y||^2 / h) with a single
scalar bandwidth h. Under the median rule the bandwidth is recomputed from
the current ensemble every time it is resolved, so interacting samplers
adapt as the particle cloud spreads or contracts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .core import pairwise_sq_dist, _positions

__all__ = [
    "KernelSpec",
    "kernel_eval",
    "kernel_grad_first",
    "kernel_matrix",
    "median_bandwidth",
    "resolve_bandwidth",
]


@dataclass(frozen=True)
class KernelSpec:
    """RBF kernel with either a fixed bandwidth or the median policy.

    Args:
        bandwidth: positive float, or 'median' to recompute from the
            ensemble each step.
        floor: epsilon applied to the squared median distance so a
            (nearly) collapsed ensemble still yields a positive bandwidth.
    """

    family: str = "rbf"
    bandwidth: Union[float, str] = "median"
    floor: float = 1e-8

    def __post_init__(self):
        if self.family != "rbf":
            raise ValueError(f"unsupported kernel family {self.family!r}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median":
                raise ValueError(f"bandwidth must be positive or 'median', got {self.bandwidth!r}")
        elif not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if not self.floor > 0:
            raise ValueError(f"floor must be positive, got {self.floor}")

    def with_bandwidth(self, value: float) -> "KernelSpec":
        return replace(self, bandwidth=float(value))


def median_bandwidth(ensemble, floor: float = 1e-8) -> float:
    """Median-heuristic bandwidth h = max(med^2, floor) / log M.

    `med` is the median of the M(M-1)/2 distinct pairwise Euclidean
    distances (distances, not squared distances). Needs at least two
    particles; for M = 2 the denominator is log 2.
    """
    pos = _positions(ensemble)
    m = pos.shape[0]
    if m < 2:
        raise ValueError("median bandwidth needs at least two particles")
    sq = pairwise_sq_dist(pos)
    iu = np.triu_indices(m, k=1)
    med = float(np.median(np.sqrt(sq[iu])))
    return max(med * med, floor) / float(np.log(m))


def resolve_bandwidth(spec: KernelSpec, ensemble=None) -> float:
    """Concrete bandwidth for `spec`, given the ensemble if policy is median."""
    if isinstance(spec.bandwidth, str):
        if ensemble is None:
            raise ValueError("median bandwidth policy needs an ensemble to resolve against")
        return median_bandwidth(ensemble, floor=spec.floor)
    return float(spec.bandwidth)


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """kappa(x, y) for a spec with a fixed bandwidth."""
    h = _fixed_bandwidth(spec)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff = x - y
    return float(np.exp(-np.dot(diff, diff) / h))


def kernel_grad_first(spec: KernelSpec, x, y) -> np.ndarray:
    """Gradient of kappa(x, y) with respect to x: -(2/h)(x - y) kappa."""
    h = _fixed_bandwidth(spec)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff = x - y
    return -(2.0 / h) * diff * np.exp(-np.dot(diff, diff) / h)


def kernel_matrix(a, b=None, h: float = 1.0) -> np.ndarray:
    """Gram matrix exp(-d_ij / h) between two particle sets."""
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    return np.exp(-pairwise_sq_dist(a, b) / h)


def _fixed_bandwidth(spec: KernelSpec) -> float:
    if isinstance(spec.bandwidth, str):
        raise ValueError("pointwise kernel evaluation needs a fixed bandwidth; resolve the median policy against an ensemble first")
    return float(spec.bandwidth)
