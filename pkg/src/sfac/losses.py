"""Decomposed actor loss: advantage regression plus a clipped symmetry series.

The actor objective splits into a cross-entropy-like advantage-regression
term (from the t ln t part of the generator) and a truncated power series in
the clipped policy ratio (from the symmetric remainder g). Both terms are
exposed separately so training code can log them; `sfac_total_loss` is their
sum. `tabular_sfac_loss` assembles the whole thing, with exact gradients,
for softmax policies over enumerable actions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np

from .divergences import (
    DivergenceFamily,
    SYMMETRIC_FAMILIES,
    UnsupportedFamilyError,
    f_derivative_at_one,
    series_coefficient,
)
from .policy import q_exp

_SYMMETRIC_KINDS = tuple(f.kind for f in SYMMETRIC_FAMILIES)


@dataclass(frozen=True)
class LossConfig:
    """Knobs of the actor loss.

    coefficient_convention selects the series weights: "g" (default) uses
    the symmetric-part derivatives g^(n)(1)/n!, "f" the full-generator
    derivatives f^(n)(1)/n!.
    """

    family: DivergenceFamily
    n_loss: int = 3
    eps: float = 100.0
    tau: float = 0.01
    q_weight: float = 0.0
    coefficient_convention: str = "g"

    def __post_init__(self) -> None:
        if self.family.kind not in _SYMMETRIC_KINDS:
            raise UnsupportedFamilyError(
                f"the symmetry series needs a symmetric family, got {self.family.name}"
            )
        if self.n_loss < 2:
            raise ValueError("n_loss must be at least 2")
        if not self.eps > 0.0:
            raise ValueError("eps must be positive")
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        if self.coefficient_convention not in ("g", "f"):
            raise ValueError("coefficient_convention must be 'g' or 'f'")


@dataclass(frozen=True)
class RatioBatch:
    """Policy ratios pi_zeta(b|s)/pi_theta(b|s) at sampled actions.

    weights, when given, are nonnegative sample weights; the series term
    then uses the weighted mean. Sampling b from pi_theta guarantees the
    denominators are positive, so ratios are finite and nonnegative.
    """

    ratios: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        ratios = np.asarray(self.ratios, dtype=np.float64)
        if ratios.ndim != 1 or ratios.size == 0:
            raise ValueError("ratios must be a nonempty 1-D vector")
        if not np.all(np.isfinite(ratios)) or np.any(ratios < 0.0):
            raise ValueError("ratios must be finite and nonnegative")
        object.__setattr__(self, "ratios", ratios)
        if self.weights is not None:
            weights = np.asarray(self.weights, dtype=np.float64)
            if weights.shape != ratios.shape:
                raise ValueError("weights must match ratios in shape")
            if not np.all(np.isfinite(weights)) or np.any(weights < 0.0):
                raise ValueError("weights must be finite and nonnegative")
            if not weights.sum() > 0.0:
                raise ValueError("weights must not all be zero")
            object.__setattr__(self, "weights", weights)


def clip_ratio(r, eps: float):
    """Clip to [1-eps, 1+eps]; the lower edge is floored at 0 for eps > 1."""
    lo = max(0.0, 1.0 - eps)
    out = np.clip(np.asarray(r, dtype=np.float64), lo, 1.0 + eps)
    return float(out) if out.ndim == 0 else out


def advantage_weight(q_value, v_value, tau: float, q_weight: float = 0.0):
    """Deformed-exponential weight of the advantage, exp_q((Q - V)/tau)."""
    if not tau > 0.0:
        raise ValueError("tau must be positive")
    q_value = np.asarray(q_value, dtype=np.float64)
    v_value = np.asarray(v_value, dtype=np.float64)
    return q_exp((q_value - v_value) / tau, q_weight)


def awr_term(weights, log_probs) -> float:
    """Mean of -weight * log_prob over the batch."""
    weights = np.asarray(weights, dtype=np.float64)
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if weights.shape != log_probs.shape:
        raise ValueError("weights and log_probs must share a shape")
    if not np.all(np.isfinite(log_probs)):
        raise ValueError("log_probs must be finite")
    if not np.all(np.isfinite(weights)) or np.any(weights < 0.0):
        raise ValueError("weights must be finite and nonnegative")
    return float(np.mean(-weights * log_probs))


@lru_cache(maxsize=None)
def _series_weights_cached(kind: str, order: int, n_loss: int, convention: str):
    family = DivergenceFamily(kind, order)
    if convention == "g":
        coeffs = [series_coefficient(family, n) for n in range(2, n_loss + 1)]
    else:
        coeffs = [
            f_derivative_at_one(family, n) / factorial(n)
            for n in range(2, n_loss + 1)
        ]
    return np.array(coeffs)


def loss_series_weights(config: LossConfig) -> np.ndarray:
    """Series coefficients c_2..c_{n_loss} under the configured convention."""
    return _series_weights_cached(
        config.family.kind, config.family.order, config.n_loss, config.coefficient_convention
    )


def _series_and_slope(deviations: np.ndarray, coeffs: np.ndarray):
    # phi(d) = sum_n c_n d^n and phi'(d), accumulated with running powers
    phi = np.zeros_like(deviations)
    slope = np.zeros_like(deviations)
    power = deviations.copy()  # d^(n-1), starts at n=2
    for n, c_n in enumerate(coeffs, start=2):
        slope += n * c_n * power
        power = power * deviations
        phi += c_n * power
    return phi, slope


def symmetry_series(ratios, config: LossConfig) -> np.ndarray:
    """Per-sample series value sum_n c_n (clip(r) - 1)^n."""
    d = clip_ratio(np.asarray(ratios, dtype=np.float64), config.eps) - 1.0
    phi, _ = _series_and_slope(np.atleast_1d(d), loss_series_weights(config))
    return phi


def conditional_symmetry_term(batch: RatioBatch, config: LossConfig) -> float:
    """Batch mean (weighted if the batch carries weights) of the series."""
    phi = symmetry_series(batch.ratios, config)
    if batch.weights is None:
        return float(np.mean(phi))
    return float(np.sum(batch.weights * phi) / np.sum(batch.weights))


def sfac_total_loss(awr: float, consym: float) -> float:
    return awr + consym


def tabular_symmetry_value_grad(theta_probs, zeta_probs, config: LossConfig):
    """Exact per-state series expectation and its gradient in theta_probs.

    Rows are states. The expectation over b ~ pi_theta is computed by full
    enumeration, C(s) = sum_b pi_theta(b|s) phi(clip(r_b)) with
    r_b = pi_zeta(b|s)/pi_theta(b|s). The gradient accounts for pi_theta
    appearing both as the sampling distribution and in the ratio:
    dC/dpi_b = phi(clip(r_b)) - [r_b inside the band] * r_b * phi'(r_b).
    Ratios exactly on a clip edge take the zero (clipped) branch.
    """
    theta_probs = np.asarray(theta_probs, dtype=np.float64)
    zeta_probs = np.asarray(zeta_probs, dtype=np.float64)
    if np.any(theta_probs <= 0.0):
        raise ValueError("theta_probs must be strictly positive")
    r = zeta_probs / theta_probs
    lo = max(0.0, 1.0 - config.eps)
    hi = 1.0 + config.eps
    d = np.clip(r, lo, hi) - 1.0
    phi, slope = _series_and_slope(d, loss_series_weights(config))
    in_band = (r > lo) & (r < hi)
    value = np.sum(theta_probs * phi, axis=-1)
    grad = phi - np.where(in_band, r * slope, 0.0)
    return value, grad


def softmax_grad_from_probs(probs, grad_probs) -> np.ndarray:
    """Pull dL/dprobs back through a row-wise softmax to dL/dlogits."""
    probs = np.asarray(probs, dtype=np.float64)
    grad_probs = np.asarray(grad_probs, dtype=np.float64)
    inner = np.sum(probs * grad_probs, axis=-1, keepdims=True)
    return probs * (grad_probs - inner)


def tabular_sfac_loss(
    logits,
    zeta_probs,
    state_index,
    action_index,
    adv_weights,
    config: LossConfig,
    include_symmetry: bool = True,
):
    """Full actor loss and exact logit gradient for a softmax policy table.

    logits and zeta_probs are (n_states, n_actions); the batch is given by
    parallel vectors of state indices, action indices, and advantage
    weights. Returns (total, awr, consym, grad_logits, diagnostics) where
    diagnostics carries max_ratio, min_ratio, and clip_fraction over the
    enumerated ratios of the states present in the batch.

    include_symmetry=False drops the series term entirely (the pure
    advantage-regression baseline); the gradient is then identical bit for
    bit to the default path at zero series weight because the series
    contribution is simply never added.
    """
    logits = np.asarray(logits, dtype=np.float64)
    zeta_probs = np.asarray(zeta_probs, dtype=np.float64)
    state_index = np.asarray(state_index, dtype=np.intp)
    action_index = np.asarray(action_index, dtype=np.intp)
    adv_weights = np.asarray(adv_weights, dtype=np.float64)
    if state_index.shape != action_index.shape or state_index.shape != adv_weights.shape:
        raise ValueError("state_index, action_index, adv_weights must align")
    batch_size = state_index.size
    if batch_size == 0:
        raise ValueError("empty batch")

    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    log_probs = shifted - log_z
    probs = np.exp(log_probs)
    assert np.all(probs > 0.0), "softmax policy lost strict positivity"

    awr = float(np.mean(-adv_weights * log_probs[state_index, action_index]))
    # d awr / d logits: scatter -w onto taken actions, add w * pi per state
    grad_logits = np.zeros_like(logits)
    np.subtract.at(grad_logits, (state_index, action_index), adv_weights)
    weight_per_state = np.zeros(logits.shape[0])
    np.add.at(weight_per_state, state_index, adv_weights)
    grad_logits += weight_per_state[:, None] * probs
    grad_logits /= batch_size

    state_counts = np.bincount(state_index, minlength=logits.shape[0]).astype(np.float64)
    present = state_counts > 0
    if include_symmetry:
        value, grad_pi = tabular_symmetry_value_grad(
            probs[present], zeta_probs[present], config
        )
        consym = float(np.dot(state_counts[present], value) / batch_size)
        scale = (state_counts[present] / batch_size)[:, None]
        grad_logits[present] += scale * softmax_grad_from_probs(
            probs[present], grad_pi
        )
    else:
        consym = 0.0

    ratios = zeta_probs[present] / probs[present]
    lo = max(0.0, 1.0 - config.eps)
    clipped = (ratios <= lo) | (ratios >= 1.0 + config.eps)
    diagnostics = {
        "max_ratio": float(ratios.max()),
        "min_ratio": float(ratios.min()),
        "clip_fraction": float(np.mean(clipped)),
    }
    total = sfac_total_loss(awr, consym)
    return total, awr, consym, grad_logits, diagnostics
