"""Local surrogate explanation: perturb, weight, fit a tree, explain it.

For one instance x the pipeline samples N Gaussian perturbations scaled
by each feature's spread, weights them by exp(-distance^2 / sigma^2) in
standardized space, fits a weighted regression tree g to the black box's
scalar output, and reads exact Shapley values off g with the tree
explainer.  The anchor x is always part of the training set with weight
one, and the explanation's efficiency identity holds against g(x); how
far g is from f locally is reported as a weighted R^2, never hidden.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    BlackBoxModel,
    ConfigError,
    FeatureMeta,
    LimaseError,
    RandomStream,
    child_seed,
    standardize,
)
from .shapley import ShapExplanation, tree_shap
from .trees import DecisionTree, TreeParams, fit_tree, predict_batch, predict_tree

AUTO_SIGMA = 5.0


@dataclass(frozen=True)
class LimaseConfig:
    """Knobs of the local surrogate pipeline.

    sigma is measured in standardized-distance units.  sigma_mode "auto"
    ignores the sigma field and uses AUTO_SIGMA; "absolute" uses sigma as
    given.  The effective value is recorded in every result.
    """

    n_samples: int = 1000
    sigma: float = AUTO_SIGMA
    sigma_mode: str = "auto"
    tree_params: TreeParams = field(default_factory=TreeParams)
    seed: int = 0
    class_index: int | None = None

    def __post_init__(self):
        if self.n_samples < 10:
            raise ConfigError(f"n_samples must be >= 10, got {self.n_samples}")
        if self.sigma_mode not in ("auto", "absolute"):
            raise ConfigError(f"sigma_mode must be 'auto' or 'absolute', got {self.sigma_mode!r}")
        if self.sigma_mode == "absolute" and not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")

    @property
    def effective_sigma(self) -> float:
        return AUTO_SIGMA if self.sigma_mode == "auto" else self.sigma


@dataclass
class PerturbationSet:
    """Rows the surrogate is trained on, their scalar targets and weights."""

    Z_x: np.ndarray
    Z_y: np.ndarray
    W: np.ndarray


@dataclass
class LimaseResult:
    """Surrogate explanation of one instance plus the fit diagnostics.

    fidelity_r2 is None when the weighted variance of the model's output
    over the perturbation set is zero (locally constant model); those and
    any no-split fits carry degenerate=True and an all-zero phi vector.
    """

    explanation: ShapExplanation
    surrogate: DecisionTree
    fidelity_r2: float | None
    degenerate: bool
    perturbations: PerturbationSet
    config: LimaseConfig

    def to_json_dict(self, feature_names: list[str] | None = None) -> dict:
        record = self.explanation.to_json_dict(feature_names)
        record["fidelity_r2"] = self.fidelity_r2
        record["sigma"] = self.config.effective_sigma
        record["n_samples"] = self.config.n_samples
        record["degenerate"] = self.degenerate
        record["surrogate_depth"] = self.surrogate.depth()
        return record


def sample_around(
    x: np.ndarray, features: list[FeatureMeta], N: int, rng: RandomStream
) -> np.ndarray:
    """N Gaussian perturbations of x, scaled per feature by its spread.

    Constant features (std 0) are never perturbed.  Deterministic given
    the stream.
    """
    x = np.asarray(x, dtype=float)
    d = len(features)
    if x.shape != (d,):
        raise ValueError(f"expected a row of length {d}, got shape {x.shape}")
    if N < 0:
        raise ValueError("N must be non-negative")
    stds = np.array([f.std for f in features])
    return x + rng.normal_matrix(N, d) * stds


def _standardized_sq_distances(
    x: np.ndarray, Z: np.ndarray, features: list[FeatureMeta]
) -> np.ndarray:
    stds = np.array([f.std for f in features])
    safe = np.where(stds > 0, stds, 1.0)
    diff = (np.atleast_2d(Z) - x) / safe
    diff[:, stds == 0] = 0.0
    return np.sum(diff * diff, axis=1)


def kernel_weights(
    x: np.ndarray, Z: np.ndarray, sigma: float, features: list[FeatureMeta]
) -> np.ndarray:
    """exp(-d^2/sigma^2) per row, with d Euclidean in standardized space."""
    x = np.asarray(x, dtype=float)
    return np.exp(-_standardized_sq_distances(x, Z, features) / (sigma * sigma))


def kernel_weight(x: np.ndarray, z: np.ndarray, sigma: float, features: list[FeatureMeta]) -> float:
    """Single-row view of kernel_weights."""
    return float(kernel_weights(x, np.asarray(z, dtype=float)[None, :], sigma, features)[0])


def limase_explain(
    model: BlackBoxModel,
    x: np.ndarray,
    features: list[FeatureMeta],
    config: LimaseConfig,
) -> LimaseResult:
    """Explain one instance through a locally fitted surrogate tree.

    Classification explains the probability of config.class_index,
    defaulting to the model's predicted class at x.  The efficiency
    identity base + sum(phi) = g(x) holds within 1e-9; the g-vs-f gap is
    reported as fidelity_r2 over the weighted perturbation set.
    """
    started = time.perf_counter()
    x = np.asarray(x, dtype=float)
    d = len(features)
    if x.shape != (d,):
        raise ValueError(f"expected a row of length {d}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("instance contains non-finite values")
    if model.d != d:
        raise ValueError(f"model expects {model.d} features, metadata describes {d}")

    rng = RandomStream(config.seed)
    sampled = sample_around(x, features, config.n_samples, rng)
    rows = np.vstack([x[None, :], sampled])

    class_index = config.class_index
    if model.task.is_classification and class_index is None:
        class_index = int(np.argmax(model.predict(x[None, :]).values[0]))
    try:
        targets = model.predict_scalar(rows, class_index)
    except ValueError:
        raise
    except Exception as e:
        raise LimaseError(f"black-box prediction failed during perturbation scoring: {e}") from e

    sigma = config.effective_sigma
    weights = kernel_weights(x, rows, sigma, features)
    perturbations = PerturbationSet(Z_x=rows, Z_y=targets, W=weights)

    surrogate = fit_tree(rows, targets, weights, config.tree_params)
    explanation = tree_shap(surrogate, x)
    explanation.class_index = class_index
    explanation.explainer = "limase"

    w_total = weights.sum()
    mean_w = float(np.dot(weights, targets)) / w_total
    centered = targets - mean_w
    denom = float(np.dot(weights, centered * centered))
    degenerate = surrogate.n_leaves == 1
    if denom == 0.0:
        fidelity = None
        degenerate = True
    else:
        residual = predict_batch(surrogate, rows) - targets
        fidelity = 1.0 - float(np.dot(weights, residual * residual)) / denom
    explanation.elapsed_ms = (time.perf_counter() - started) * 1000.0
    return LimaseResult(
        explanation=explanation,
        surrogate=surrogate,
        fidelity_r2=fidelity,
        degenerate=degenerate,
        perturbations=perturbations,
        config=config,
    )


def limase_explain_batch(
    model: BlackBoxModel,
    X: np.ndarray,
    features: list[FeatureMeta],
    config: LimaseConfig,
    *,
    threads: int = 1,
) -> list[LimaseResult | LimaseError]:
    """Explain each row of X; entry i uses a seed derived from (seed, i).

    Per-row failures do not abort the batch: the failed position holds
    the exception instead of a result.  Results are independent of
    execution order and of the threads setting.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))

    def explain_row(i: int) -> LimaseResult | LimaseError:
        row_config = replace(config, seed=child_seed(config.seed, i))
        try:
            return limase_explain(model, X[i], features, row_config)
        except LimaseError as e:
            return e

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(explain_row, range(X.shape[0])))
    return [explain_row(i) for i in range(X.shape[0])]


def sigma_sweep(
    model: BlackBoxModel,
    x: np.ndarray,
    features: list[FeatureMeta],
    config: LimaseConfig,
    sigmas: list[float],
) -> list[tuple[float, LimaseResult]]:
    """Re-run the pipeline at several kernel widths with one fixed seed.

    The perturbation geometry is identical across entries; only the
    weights (and hence the surrogate and its base value) change.  Wide
    kernels approach a global fit, narrow ones a hyper-local one.
    """
    if not sigmas:
        raise ConfigError("sigmas must be non-empty")
    if any(not s > 0 for s in sigmas):
        raise ConfigError("all sigma values must be positive")
    out = []
    for s in sigmas:
        cfg = replace(config, sigma=float(s), sigma_mode="absolute")
        out.append((float(s), limase_explain(model, x, features, cfg)))
    return out
