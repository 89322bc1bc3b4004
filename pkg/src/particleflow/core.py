"""Shared primitives for particle-based samplers.

Conventions used throughout the package:

* A particle set is an (M, r) float64 array wrapped in a ParticleEnsemble.
  Steppers never mutate an ensemble in place; they return a new one.
* All reductions over particles go through numpy, whose summation order is
  fixed for a given input shape, so runs with equal seeds are bit-stable.
* Randomness flows through RngStream, a thin wrapper over numpy's PCG64
  bit generator. Equal (algorithm, seed) pairs yield equal draw sequences
  on every platform we target.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

__all__ = [
    "DivergenceError",
    "ParticleEnsemble",
    "RngStream",
    "SamplerConfig",
    "gaussian_noise",
    "pairwise_sq_dist",
]

# Row-block budget (in array elements) for chunked pairwise work. Chunking
# changes memory use only, never values: every entry is computed
# independently of the block layout.
_CHUNK_ELEMENTS = 8_000_000


class DivergenceError(RuntimeError):
    """Raised when a sampler produces non-finite gradients or positions."""


def _positions(obj) -> np.ndarray:
    """Accept either a ParticleEnsemble or a bare (M, r) array."""
    arr = getattr(obj, "positions", obj)
    return np.asarray(arr, dtype=float)


@dataclass(frozen=True)
class ParticleEnsemble:
    """An interacting set of M particles in r dimensions.

    Particles always carry uniform importance weights 1/M; the weights are
    exposed for diagnostics but never vary within a run.

    Args:
        positions: array of shape (M, r), finite float64.
    """

    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2:
            raise ValueError(f"positions must be (M, r), got shape {pos.shape}")
        if pos.shape[0] < 1 or pos.shape[1] < 1:
            raise ValueError(f"need at least one particle and one dimension, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions contain non-finite values")
        pos = pos.copy()
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def weights(self) -> np.ndarray:
        """Uniform weights, each exactly 1/M."""
        return np.full(self.count, 1.0 / self.count)

    def replace(self, positions: np.ndarray) -> "ParticleEnsemble":
        """Return a new ensemble with the same shape contract."""
        return ParticleEnsemble(positions)


class RngStream:
    """Deterministic random stream.

    Wraps numpy's PCG64 generator. The stream is identified by
    (algorithm, seed); two streams with the same identifier produce the
    same draws in the same order. A draw counter tracks how many variates
    have been consumed, which is handy when auditing reproducibility.

    A stream has a single owner: sharing one instance across concurrent
    repeats is not supported (the harness gives each repeat its own seed).
    """

    algorithm = "pcg64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.draw_count = 0
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def __repr__(self):
        return f"RngStream(algorithm={self.algorithm!r}, seed={self.seed}, draws={self.draw_count})"

    def _count(self, shape) -> int:
        if shape is None or shape == ():
            return 1
        return int(np.prod(shape))

    def standard_normal(self, shape=None) -> np.ndarray:
        self.draw_count += self._count(shape)
        return self._gen.standard_normal(shape if shape is not None else ())

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        self.draw_count += self._count(shape)
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        self.draw_count += self._count(shape)
        return self._gen.integers(low, high, size=shape)

    def subset(self, n: int, k: int) -> np.ndarray:
        """k indices drawn uniformly from range(n) without replacement."""
        if not 1 <= k <= n:
            raise ValueError(f"subset size {k} out of range for population {n}")
        self.draw_count += k
        return self._gen.choice(n, size=k, replace=False)

    def shuffled(self, n: int) -> np.ndarray:
        self.draw_count += n
        return self._gen.permutation(n)


def gaussian_noise(rng: RngStream, shape) -> np.ndarray:
    """Standard normal noise of the given shape, drawn from `rng`."""
    return rng.standard_normal(shape)


def pairwise_sq_dist(a, b=None) -> np.ndarray:
    """Squared Euclidean distances between two particle sets.

    Entries are computed per pair from coordinate differences, so the
    result is exactly symmetric with a zero diagonal when both arguments
    are the same set. Work is chunked over rows of `a` to bound memory.

    Args:
        a: ensemble or (M_a, r) array.
        b: ensemble or (M_b, r) array; defaults to `a`.

    Returns:
        (M_a, M_b) array of squared distances.
    """
    A = _positions(a)
    B = A if b is None else _positions(b)
    if A.ndim != 2 or B.ndim != 2:
        raise ValueError("pairwise_sq_dist expects 2-D position arrays")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    out = np.empty((A.shape[0], B.shape[0]))
    step = max(1, _CHUNK_ELEMENTS // max(1, B.shape[0] * A.shape[1]))
    for lo in range(0, A.shape[0], step):
        hi = min(lo + step, A.shape[0])
        diff = A[lo:hi, None, :] - B[None, :, :]
        out[lo:hi] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


@dataclass
class SamplerConfig:
    """Knobs shared by every stepper.

    Args:
        stepsize: h, the (outer) stepsize. Must be positive.
        iterations: number of outer iterations T.
        seed: base seed for the run's RngStream.
        minibatch_size: subsample size n for stochastic gradients, or None
            for full-data gradients. Ignored by targets without data.
        svgd_weight: lambda_1, strength of the kernel interaction term.
        diffusion_weight: lambda_2, temperature of the injected noise.
        entropic_reg: lambda, the entropic-transport regulariser.
        plan_scale: gamma, the fixed surrogate for the transport scaling
            u_i * v_j (the JKO proximal weight is folded into it).
        coupling: 'fixed-gamma' or 'sinkhorn'; how the transport scaling
            in the flow force is obtained.
        inner_steps: gradient steps taken against one lagged ensemble
            before it is refreshed (discrete-flow sampler only).
        bandwidth: kernel bandwidth, a positive float or 'median'.
        bandwidth_floor: epsilon floor applied to the squared median so a
            collapsed ensemble cannot produce a zero bandwidth.
        step_decay: exponent for a polynomially decaying stepsize
            h_t = h * (t + 1)^(-step_decay); 0 keeps h constant.
    """

    stepsize: float = 0.1
    iterations: int = 1000
    seed: int = 0
    minibatch_size: Union[int, None] = None
    svgd_weight: float = 1.0
    diffusion_weight: float = 1.0
    entropic_reg: float = 1.0
    plan_scale: float = 1.0
    coupling: str = "fixed-gamma"
    inner_steps: int = 1
    bandwidth: Union[float, str] = "median"
    bandwidth_floor: float = 1e-8
    step_decay: float = 0.0

    def __post_init__(self):
        if self.stepsize <= 0:
            raise ValueError(f"stepsize must be positive, got {self.stepsize}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.minibatch_size is not None and self.minibatch_size < 1:
            raise ValueError(f"minibatch_size must be >= 1 or None, got {self.minibatch_size}")
        if self.svgd_weight < 0 or self.diffusion_weight < 0:
            raise ValueError("interaction and diffusion weights must be non-negative")
        if self.entropic_reg <= 0:
            raise ValueError(f"entropic_reg must be positive, got {self.entropic_reg}")
        if self.plan_scale <= 0:
            raise ValueError(f"plan_scale must be positive, got {self.plan_scale}")
        if self.coupling not in ("fixed-gamma", "sinkhorn"):
            raise ValueError(f"coupling must be 'fixed-gamma' or 'sinkhorn', got {self.coupling!r}")
        if self.inner_steps < 1:
            raise ValueError(f"inner_steps must be >= 1, got {self.inner_steps}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median":
                raise ValueError(f"bandwidth must be a positive float or 'median', got {self.bandwidth!r}")
        elif self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        if self.bandwidth_floor <= 0:
            raise ValueError(f"bandwidth_floor must be positive, got {self.bandwidth_floor}")
        if not 0.0 <= self.step_decay < 1.0:
            raise ValueError(f"step_decay must lie in [0, 1), got {self.step_decay}")

    def stepsize_at(self, iteration: int) -> float:
        """Stepsize for a given 0-based iteration under the decay policy."""
        if self.step_decay == 0.0:
            return self.stepsize
        return self.stepsize * float(iteration + 1) ** (-self.step_decay)

    def updated(self, **changes) -> "SamplerConfig":
        return replace(self, **changes)
