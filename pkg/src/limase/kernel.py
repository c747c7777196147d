"""Kernel-weighted regression estimate of Shapley values for any black box.

The coalition value is interventional: v(S) averages the model over
composite rows that take x on S and a background row everywhere else.
Attributions solve the Shapley-kernel-weighted least squares over
coalitions, with the efficiency identity base + sum(phi) = f(x)
substituted in analytically, so it holds by construction.

This serves as the timing and agreement baseline for the surrogate
pipeline: every coalition costs a full pass over the background set,
which is exactly the expense the surrogate approach avoids.
"""
from __future__ import annotations

import math
import time

import numpy as np

from .core import BlackBoxModel, ConfigError, DataError, RandomStream
from .shapley import ShapExplanation

EXACT_MAX_FEATURES = 16

# Composite rows per model call; bounds peak memory on full enumeration.
_CHUNK_ROWS = 1 << 17


def _masks_matrix(masks: np.ndarray, d: int) -> np.ndarray:
    """Bitmask integers -> boolean matrix, column j = membership of feature j."""
    return (masks[:, None] >> np.arange(d)) & 1 == 1


def _coalition_values(
    model: BlackBoxModel,
    x: np.ndarray,
    background: np.ndarray,
    member: np.ndarray,
    class_index: int | None,
) -> np.ndarray:
    """v(S) for each mask row: mean model output over background composites."""
    n_bg, d = background.shape
    per_mask = max(1, _CHUNK_ROWS // n_bg)
    values = np.empty(member.shape[0])
    for start in range(0, member.shape[0], per_mask):
        chunk = member[start : start + per_mask]
        composites = np.where(chunk[:, None, :], x[None, None, :], background[None, :, :])
        out = model.predict_scalar(composites.reshape(-1, d), class_index)
        values[start : start + per_mask] = out.reshape(chunk.shape[0], n_bg).mean(axis=1)
    return values


def _kernel_weights(sizes: np.ndarray, d: int) -> np.ndarray:
    """Shapley kernel pi(s) = (d-1) / (C(d,s) * s * (d-s)) for 0 < s < d."""
    combs = np.array([math.comb(d, int(s)) for s in sizes], dtype=float)
    return (d - 1) / (combs * sizes * (d - sizes))


def _sample_masks(d: int, budget: int, rng: RandomStream) -> tuple[np.ndarray, np.ndarray]:
    """Paired coalition sampling; returns unique masks and their multiplicities.

    Subset sizes follow p(s) proportional to 1/(s*(d-s)), the Shapley kernel
    times the number of subsets of that size, so duplicate counts serve as
    the regression weights.  Each draw adds the subset and its complement.
    """
    sizes = np.arange(1, d)
    p = 1.0 / (sizes * (d - sizes))
    p /= p.sum()
    cumulative = np.cumsum(p)
    counts: dict[int, int] = {}
    drawn = 0
    while drawn < budget:
        u = rng.uniform(1)[0]
        s = int(sizes[min(int(np.searchsorted(cumulative, u, side="right")), d - 2)])
        chosen = rng.choice(d, size=s, replace=False)
        mask = 0
        for i in chosen:
            mask |= 1 << int(i)
        full = (1 << d) - 1
        counts[mask] = counts.get(mask, 0) + 1
        drawn += 1
        if drawn < budget:
            counts[full ^ mask] = counts.get(full ^ mask, 0) + 1
            drawn += 1
    masks = np.array(sorted(counts), dtype=np.int64)
    weights = np.array([counts[int(m)] for m in masks], dtype=float)
    return masks, weights


def _solve_constrained(
    member: np.ndarray, weights: np.ndarray, values: np.ndarray, base: float, fx: float
) -> np.ndarray:
    """Weighted least squares with sum(phi) = fx - base eliminated analytically.

    The last feature's coefficient is substituted out; the reduced system
    is solved by scaled lstsq, and phi_last recovered from the constraint.
    """
    d = member.shape[1]
    if d == 1:
        return np.array([fx - base])
    gap = fx - base
    y = values - base - member[:, -1] * gap
    X = member[:, :-1].astype(float) - member[:, -1:].astype(float)
    sw = np.sqrt(weights)
    phi_head, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    return np.append(phi_head, gap - phi_head.sum())


def kernel_shap(
    model: BlackBoxModel,
    x: np.ndarray,
    background: np.ndarray,
    budget: int | str,
    rng: RandomStream,
    class_index: int | None = None,
) -> ShapExplanation:
    """Estimate Shapley values of the interventional coalition game.

    budget="exact" enumerates all 2^d coalitions (d <= 16 only); an
    integer budget >= 2d+2 uses paired subset sampling.  base_value is
    the mean model output over the background set; classification
    explains the probability of class_index (default: the model's
    predicted class at x).
    """
    started = time.perf_counter()
    x = np.asarray(x, dtype=float)
    background = np.atleast_2d(np.asarray(background, dtype=float))
    if background.shape[0] == 0:
        raise DataError("background set is empty")
    d = x.shape[0]
    if background.shape[1] != d:
        raise DataError(f"background has {background.shape[1]} columns, expected {d}")
    if model.task.is_classification and class_index is None:
        class_index = int(np.argmax(model.predict(x[None, :]).values[0]))

    base = float(np.mean(model.predict_scalar(background, class_index)))
    fx = float(model.predict_scalar(x[None, :], class_index)[0])

    if budget == "exact":
        if d > EXACT_MAX_FEATURES:
            raise ConfigError(
                f"exact enumeration supports at most {EXACT_MAX_FEATURES} features, got {d}"
            )
    elif isinstance(budget, int) and not isinstance(budget, bool):
        if budget < 2 * d + 2:
            raise ConfigError(f"budget {budget} too small; need at least {2 * d + 2}")
    else:
        raise ConfigError(f"budget must be a positive integer or 'exact', got {budget!r}")

    if d == 1:
        # Only coalitions are {} and {0}; efficiency pins the answer.
        phi = np.array([fx - base])
    else:
        if budget == "exact":
            masks = np.arange(1, (1 << d) - 1, dtype=np.int64)
            member = _masks_matrix(masks, d)
            weights = _kernel_weights(member.sum(axis=1), d)
        else:
            masks, weights = _sample_masks(d, budget, rng)
            member = _masks_matrix(masks, d)
        values = _coalition_values(model, x, background, member, class_index)
        phi = _solve_constrained(member, weights, values, base, fx)

    elapsed_ms = (time.perf_counter() - started) * 1000.0
    return ShapExplanation(
        base_value=base,
        phi=phi,
        fx=fx,
        instance=x.copy(),
        explainer="kernelshap",
        elapsed_ms=elapsed_ms,
        class_index=class_index,
    )
