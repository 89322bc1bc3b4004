"""Target distributions: toy 2-D potentials, Gaussian mixtures, and
Bayesian logistic regression.

A target exposes the unnormalised log density U(theta) and its gradient.
All evaluation methods accept a single point of shape (r,) or a batch of
shape (M, r) and return matching shapes. Targets backed by a dataset also
provide unbiased stochastic gradients built from uniform without-replacement
minibatches; for every other target the stochastic gradient is simply the
exact one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .core import RngStream

__all__ = [
    "BananaTarget",
    "GaussianMixture",
    "GaussianMixtureSpec",
    "LogisticRegressionData",
    "LogisticRegressionTarget",
    "RingTarget",
    "TargetModel",
    "load_dataset",
    "map_estimate",
    "standard_gaussian",
    "synth_logreg",
    "toy_target",
    "toy_potential",
    "TOY_TARGETS",
]


class TargetModel:
    """Base class for targets defined through an unnormalised log density."""

    dim: int

    def log_density(self, theta):
        """U(theta); scalar for (r,) input, (M,) for (M, r) input."""
        raise NotImplementedError

    def grad_log_density(self, theta):
        """exact gradient of U; shape matches the input."""
        raise NotImplementedError

    def stochastic_grad(self, theta, n, rng: RngStream):
        """Unbiased gradient estimate from a size-n minibatch.

        Targets without data fall back to the exact gradient, so the
        estimator is trivially unbiased for them.
        """
        return self.grad_log_density(theta)

    def _as_batch(self, theta):
        arr = np.asarray(theta, dtype=float)
        if arr.ndim == 1:
            if arr.shape[0] != self.dim:
                raise ValueError(f"expected dimension {self.dim}, got {arr.shape[0]}")
            return arr[None, :], True
        if arr.ndim != 2 or arr.shape[1] != self.dim:
            raise ValueError(f"expected shape (M, {self.dim}), got {arr.shape}")
        return arr, False


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """Equal-length component arrays for a diagonal-covariance mixture.

    Args:
        means: (K, r) component means.
        variances: (K, r) positive per-coordinate variances.
        weights: (K,) positive weights summing to 1.
    """

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        variances = np.atleast_2d(np.asarray(self.variances, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if means.shape != variances.shape:
            raise ValueError(f"means {means.shape} and variances {variances.shape} must match")
        if weights.shape[0] != means.shape[0]:
            raise ValueError(f"{means.shape[0]} components but {weights.shape[0]} weights")
        if not np.all(variances > 0):
            raise ValueError("variances must be positive")
        if not np.all(weights > 0):
            raise ValueError("weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {weights.sum()}")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "weights", weights)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


class GaussianMixture(TargetModel):
    """Diagonal-covariance Gaussian mixture with exact sampling."""

    def __init__(self, spec: GaussianMixtureSpec):
        self.spec = spec
        self.dim = spec.dim
        # per-component log weight + log normaliser, reused by every call
        self._log_norm = np.log(spec.weights) - 0.5 * np.sum(
            np.log(2.0 * np.pi * spec.variances), axis=1
        )

    @property
    def modes(self) -> np.ndarray:
        """Component means; genuine local maxima for well-separated mixtures."""
        return self.spec.means.copy()

    def _component_logs(self, batch):
        # (M, K): log of each weighted component density
        diff = batch[:, None, :] - self.spec.means[None, :, :]
        quad = np.sum(diff * diff / self.spec.variances[None, :, :], axis=2)
        return self._log_norm[None, :] - 0.5 * quad

    def log_density(self, theta):
        batch, single = self._as_batch(theta)
        vals = logsumexp(self._component_logs(batch), axis=1)
        return float(vals[0]) if single else vals

    def grad_log_density(self, theta):
        batch, single = self._as_batch(theta)
        comp = self._component_logs(batch)
        resp = np.exp(comp - logsumexp(comp, axis=1, keepdims=True))  # (M, K)
        pull = (self.spec.means[None, :, :] - batch[:, None, :]) / self.spec.variances[None, :, :]
        grads = np.sum(resp[:, :, None] * pull, axis=1)
        return grads[0] if single else grads

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        """n exact draws; used by diagnostics that need true samples."""
        if self.spec.n_components > 1:
            # component choice by inverse CDF so weights need not be uniform
            u = rng.uniform(0.0, 1.0, (n,))
            ks = np.searchsorted(np.cumsum(self.spec.weights), u)
        else:
            ks = np.zeros(n, dtype=int)
        noise = rng.standard_normal((n, self.dim))
        return self.spec.means[ks] + noise * np.sqrt(self.spec.variances[ks])


def standard_gaussian(dim: int) -> GaussianMixture:
    """Zero-mean unit-variance Gaussian as a one-component mixture."""
    spec = GaussianMixtureSpec(
        means=np.zeros((1, dim)),
        variances=np.ones((1, dim)),
        weights=np.ones(1),
    )
    return GaussianMixture(spec)


class RingTarget(TargetModel):
    """2-D ring: U(theta) = -(||theta|| - radius)^2 / (2 width^2)."""

    def __init__(self, radius: float = 2.0, width: float = 0.25):
        if radius <= 0 or width <= 0:
            raise ValueError("radius and width must be positive")
        self.radius = float(radius)
        self.width = float(width)
        self.dim = 2

    def log_density(self, theta):
        batch, single = self._as_batch(theta)
        r = np.sqrt(np.sum(batch * batch, axis=1))
        vals = -((r - self.radius) ** 2) / (2.0 * self.width**2)
        return float(vals[0]) if single else vals

    def grad_log_density(self, theta):
        batch, single = self._as_batch(theta)
        r = np.sqrt(np.sum(batch * batch, axis=1))
        # radial pull towards ||theta|| = radius; zero at the origin, where
        # the potential has a (measure-zero) cusp in the radial direction
        safe = np.where(r > 0, r, 1.0)
        coef = np.where(r > 0, -(r - self.radius) / (self.width**2 * safe), 0.0)
        grads = coef[:, None] * batch
        return grads[0] if single else grads


class BananaTarget(TargetModel):
    """2-D banana: U = -t1^2/8 - (t2 - t1^2/4)^2 / 0.5, single mode at 0."""

    def __init__(self):
        self.dim = 2
        self.modes = np.zeros((1, 2))

    def log_density(self, theta):
        batch, single = self._as_batch(theta)
        t1, t2 = batch[:, 0], batch[:, 1]
        w = t2 - t1 * t1 / 4.0
        vals = -t1 * t1 / 8.0 - w * w / 0.5
        return float(vals[0]) if single else vals

    def grad_log_density(self, theta):
        batch, single = self._as_batch(theta)
        t1, t2 = batch[:, 0], batch[:, 1]
        w = t2 - t1 * t1 / 4.0
        g1 = -t1 / 4.0 + 2.0 * w * t1
        g2 = -4.0 * w
        grads = np.stack([g1, g2], axis=1)
        return grads[0] if single else grads


def _bimodal_spec() -> GaussianMixtureSpec:
    return GaussianMixtureSpec(
        means=np.array([[-2.0, 0.0], [2.0, 0.0]]),
        variances=np.full((2, 2), 0.25),
        weights=np.full(2, 0.5),
    )


def _quad_modal_spec() -> GaussianMixtureSpec:
    return GaussianMixtureSpec(
        means=np.array([[-2.0, -2.0], [-2.0, 2.0], [2.0, -2.0], [2.0, 2.0]]),
        variances=np.full((4, 2), 0.25),
        weights=np.full(4, 0.25),
    )


TOY_TARGETS = {
    "bimodal-gauss": lambda: GaussianMixture(_bimodal_spec()),
    "quad-modal-gauss": lambda: GaussianMixture(_quad_modal_spec()),
    "ring": RingTarget,
    "banana": BananaTarget,
}


def toy_target(name: str) -> TargetModel:
    """Construct one of the built-in 2-D toy targets by name."""
    try:
        factory = TOY_TARGETS[name]
    except KeyError:
        raise ValueError(f"unknown toy target {name!r}; available: {sorted(TOY_TARGETS)}") from None
    return factory()


def toy_potential(name: str, theta) -> float:
    """U(theta) for a named toy target at a single point."""
    return float(toy_target(name).log_density(np.asarray(theta, dtype=float)))


# ---------------------------------------------------------------------------
# Bayesian logistic regression
# ---------------------------------------------------------------------------


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LogisticRegressionData:
    """Design data for the logistic model.

    Args:
        features: (N, d) float matrix.
        labels: (N,) array with entries in {-1, +1}.
        prior_variance: variance of the isotropic Gaussian weight prior.
        metadata: free-form provenance notes (source path, standardisation).
    """

    features: np.ndarray
    labels: np.ndarray
    prior_variance: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.features.ndim != 2:
            raise ValueError(f"features must be (N, d), got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be one per row of features")
        bad = set(np.unique(self.labels)) - {-1.0, 1.0}
        if bad:
            raise ValueError(f"labels must be in {{-1, +1}}, found {sorted(bad)}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if self.prior_variance <= 0:
            raise ValueError(f"prior_variance must be positive, got {self.prior_variance}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "LogisticRegressionData":
        return LogisticRegressionData(
            self.features[idx], self.labels[idx], self.prior_variance, dict(self.metadata)
        )


def design_matrix(features: np.ndarray, add_bias: bool = True) -> np.ndarray:
    """Feature matrix used by the model; appends a constant 1 column."""
    features = np.asarray(features, dtype=float)
    if not add_bias:
        return features
    return np.hstack([features, np.ones((features.shape[0], 1))])


class LogisticRegressionTarget(TargetModel):
    """Posterior of logistic regression with a Gaussian weight prior.

    U(theta) = sum_i log sigmoid(y_i x_i.theta) - ||theta||^2 / (2 sigma^2),
    where x_i includes an appended bias coordinate fixed to 1.
    """

    def __init__(self, data: LogisticRegressionData, add_bias: bool = True):
        self.data = data
        self.add_bias = add_bias
        self._X = design_matrix(data.features, add_bias)
        self._yX = self._X * data.labels[:, None]  # rows y_i * x_i
        self.dim = self._X.shape[1]

    def log_density(self, theta):
        batch, single = self._as_batch(theta)
        margins = self._yX @ batch.T  # (N, M)
        loglik = np.sum(_log_sigmoid(margins), axis=0)
        prior = -0.5 * np.sum(batch * batch, axis=1) / self.data.prior_variance
        vals = loglik + prior
        return float(vals[0]) if single else vals

    def grad_log_density(self, theta):
        batch, single = self._as_batch(theta)
        margins = self._yX @ batch.T  # (N, M)
        weights = _sigmoid(-margins)  # d/dz log sigmoid(z) = sigmoid(-z)
        grads = (self._yX.T @ weights).T - batch / self.data.prior_variance
        return grads[0] if single else grads

    def minibatch_grad(self, theta, idx):
        """Gradient estimate for an explicit index set: the prior term plus
        the likelihood sum over `idx` rescaled by N/n."""
        batch, single = self._as_batch(theta)
        idx = np.asarray(idx, dtype=int)
        scale = self.data.n / idx.shape[0]
        rows = self._yX[idx]
        margins = rows @ batch.T
        weights = _sigmoid(-margins)
        grads = scale * (rows.T @ weights).T - batch / self.data.prior_variance
        return grads[0] if single else grads

    def stochastic_grad(self, theta, n, rng: RngStream):
        """Unbiased minibatch gradient; each particle in a batch gets its
        own independent without-replacement index draw."""
        if n is None or n >= self.data.n:
            return self.grad_log_density(theta)
        batch, single = self._as_batch(theta)
        grads = np.empty_like(batch)
        for i in range(batch.shape[0]):  # ascending order, one draw per particle
            grads[i] = self.minibatch_grad(batch[i], rng.subset(self.data.n, n))
        return grads[0] if single else grads

    def predict_proba(self, positions: np.ndarray, features: np.ndarray) -> np.ndarray:
        """Per-example probability of label +1, averaged over particles."""
        X = design_matrix(features, self.add_bias)
        probs = _sigmoid(X @ np.atleast_2d(positions).T)
        return probs.mean(axis=1)


def synth_logreg(n: int, d: int, separation: float, rng: RngStream) -> LogisticRegressionData:
    """Two labelled Gaussian clouds separated along a random direction.

    Labels are balanced (+1/-1 alternating before shuffling is not needed;
    each row's label is drawn with probability 1/2) and cloud centres sit
    at +/- separation/2 along a random unit vector, so separation 0 makes
    the labels carry no information.
    """
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    if separation < 0:
        raise ValueError(f"separation must be non-negative, got {separation}")
    direction = rng.standard_normal((d,))
    direction /= np.sqrt(np.dot(direction, direction))
    labels = np.where(rng.uniform(0.0, 1.0, (n,)) < 0.5, -1.0, 1.0)
    features = rng.standard_normal((n, d)) + labels[:, None] * (separation / 2.0) * direction[None, :]
    return LogisticRegressionData(
        features,
        labels,
        metadata={"source": "synthetic", "separation": float(separation)},
    )


def _map_labels(raw: np.ndarray) -> np.ndarray:
    values = sorted(set(np.unique(raw)))
    if len(values) != 2:
        raise ValueError(f"need exactly two label values, found {values}")
    if values == [-1.0, 1.0]:
        return raw
    lo, hi = values
    return np.where(raw == hi, 1.0, -1.0)


def load_dataset(path, fmt: str = None, standardize: bool = False) -> LogisticRegressionData:
    """Read a binary classification dataset from CSV or LIBSVM text.

    CSV rows are numeric with the label in the last column; a single
    header line is skipped if its fields are not numeric. LIBSVM rows are
    `label index:value ...` with 1-based indices and implicit zeros.
    Labels from {0, 1}, {1, 2} or {-1, +1} are mapped onto {-1, +1}.

    Args:
        path: input file.
        fmt: 'csv' or 'libsvm'; inferred from the suffix when omitted.
        standardize: scale each feature column to zero mean, unit variance
            (constant columns are left centred); recorded in metadata.
    """
    path = Path(path)
    if fmt is None:
        fmt = "libsvm" if path.suffix in (".libsvm", ".svm", ".svmlight") else "csv"
    if fmt == "csv":
        features, labels = _read_csv(path)
    elif fmt == "libsvm":
        features, labels = _read_libsvm(path)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}; use 'csv' or 'libsvm'")
    labels = _map_labels(labels)
    meta = {"source": str(path), "format": fmt, "standardized": bool(standardize)}
    if standardize:
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        std[std == 0.0] = 1.0
        features = (features - mean) / std
    return LogisticRegressionData(features, labels, metadata=meta)


def _read_csv(path: Path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if lineno == 1:  # tolerate a single header line
                    continue
                raise ValueError(f"{path}:{lineno}: non-numeric field in row {row!r}") from None
            if len(rows) > 1 and len(rows[-1]) != len(rows[0]):
                raise ValueError(f"{path}:{lineno}: expected {len(rows[0])} fields, got {len(rows[-1])}")
    if not rows:
        raise ValueError(f"{path}: no data rows")
    if len(rows[0]) < 2:
        raise ValueError(f"{path}: rows need at least one feature and a label")
    arr = np.asarray(rows, dtype=float)
    return arr[:, :-1], arr[:, -1]


def _read_libsvm(path: Path):
    labels = []
    entries = []  # (row, col, value)
    max_col = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                labels.append(float(parts[0]))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad label field {parts[0]!r}") from None
            row = len(labels) - 1
            for token in parts[1:]:
                try:
                    idx_str, val_str = token.split(":", 1)
                    col = int(idx_str)
                    val = float(val_str)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad feature token {token!r}") from None
                if col < 1:
                    raise ValueError(f"{path}:{lineno}: indices are 1-based, got {col}")
                entries.append((row, col - 1, val))
                max_col = max(max_col, col)
    if not labels:
        raise ValueError(f"{path}: no data rows")
    features = np.zeros((len(labels), max_col))
    for row, col, val in entries:
        features[row, col] = val
    return features, np.asarray(labels, dtype=float)


def map_estimate(target: TargetModel, x0: np.ndarray = None) -> np.ndarray:
    """Deterministic MAP point via L-BFGS on -U with the exact gradient.

    Used as the reference fit that ensemble predictions are compared
    against; the logistic posterior is concave so the optimum is unique.
    """
    if x0 is None:
        x0 = np.zeros(target.dim)

    def objective(theta):
        return -target.log_density(theta), -target.grad_log_density(theta)

    result = minimize(objective, x0, jac=True, method="L-BFGS-B",
                      options={"maxiter": 1000, "ftol": 1e-12, "gtol": 1e-10})
    return np.asarray(result.x, dtype=float)
