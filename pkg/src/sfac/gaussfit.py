"""Fit a single Gaussian to a Gaussian mixture by divergence minimization.

Three routes to the same question at different levels of trust:

* `quadrature_divergence` integrates the divergence to absolute tolerance
  1e-9 with composite Gauss-Legendre panels, in log-space formulas that
  survive extreme density ratios.
* `best_fit_quadrature` minimizes it over (mu, log sigma) by coarse grid
  search plus coordinate descent, using analytic gradient integrals, down
  to gradient norm 1e-6. This is the trusted reference optimum.
* `fit_sgd` runs the stochastic minimization a training loop would: plain
  SGD on Monte-Carlo estimates, either of the exact divergence or of the
  decomposed loss (cross-entropy plus the clipped symmetry series).

Bounded divergences saturate: far from the target, the exact loss of the
Jensen-Shannon kind has almost no gradient, so SGD from a wide start barely
moves. The decomposed loss keeps a cross-entropy term whose gradient does
not vanish. That contrast is the point of the harness, so the default SGD
start is deliberately wide, (mu, log sigma) = (0, ln 5), and the default
clip radius is tight (0.3): clipping gates far ratios out of the series
term, which summed to all orders would otherwise rebuild the exact
landscape, saturation included.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .divergences import (
    DivergenceFamily,
    UnsupportedFamilyError,
    validate_distribution,
)
from .losses import LossConfig, loss_series_weights

_LN2 = float(np.log(2.0))
_LOG_SQRT_2PI = 0.5 * float(np.log(2.0 * np.pi))

_DEFAULT_INIT = (0.0, float(np.log(5.0)))


class QuadratureError(RuntimeError):
    """Composite quadrature failed to reach tolerance within the panel budget."""


class GaussFitError(RuntimeError):
    """Stochastic fitting diverged."""


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        stds = np.asarray(self.stds, dtype=np.float64)
        if not (weights.ndim == 1 and weights.shape == means.shape == stds.shape):
            raise ValueError("weights, means, stds must be equal-length vectors")
        if weights.size == 0:
            raise ValueError("mixture needs at least one component")
        validate_distribution(weights)
        if not np.all(np.isfinite(means)):
            raise ValueError("means must be finite")
        if not np.all(np.isfinite(stds)) or np.any(stds <= 0.0):
            raise ValueError("stds must be finite and positive")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    def log_pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        z = (x[..., None] - self.means) / self.stds
        comp = -0.5 * z**2 - np.log(self.stds) - _LOG_SQRT_2PI
        with np.errstate(divide="ignore"):
            return logsumexp(comp + np.log(self.weights), axis=-1)

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.log_pdf(x))

    def log_pdf_and_score(self, x):
        # score = d/dx log pdf, via component responsibilities
        x = np.asarray(x, dtype=np.float64)
        z = (x[..., None] - self.means) / self.stds
        comp = -0.5 * z**2 - np.log(self.stds) - _LOG_SQRT_2PI
        with np.errstate(divide="ignore"):
            weighted = comp + np.log(self.weights)
        total = logsumexp(weighted, axis=-1)
        resp = np.exp(weighted - total[..., None])
        score = np.sum(resp * (-z / self.stds), axis=-1)
        return total, score

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(self.weights.size, size=size, p=self.weights)
        return self.means[comp] + self.stds[comp] * rng.standard_normal(size)

    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    def variance(self) -> float:
        second = np.dot(self.weights, self.stds**2 + self.means**2)
        return float(second - self.mean() ** 2)


@dataclass(frozen=True)
class GaussianModel:
    mu: float
    log_sigma: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.mu) and np.isfinite(self.log_sigma)):
            raise ValueError("mu and log_sigma must be finite")

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))

    def log_pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        z = (x - self.mu) / self.sigma
        return -0.5 * z**2 - self.log_sigma - _LOG_SQRT_2PI

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.log_pdf(x))


@dataclass(frozen=True)
class FitReport:
    method: str
    family: DivergenceFamily
    mu_hat: float
    sigma_hat: float
    divergence_value: float
    steps: int
    seed: int | None


def standard_mixture() -> GaussianMixture:
    """The calibrated two-bump fixture, 0.5 N(-1.6, s) + 0.5 N(1.6, s) with
    s = sqrt(2.44). Total variance is 5, so the forward-KL best fit is
    exactly (0, sqrt(5)); the bumps sit just far enough apart to keep the
    density bimodal while the Jeffreys best fit stays near 2.22."""
    s = float(np.sqrt(2.44))
    return GaussianMixture(
        np.array([0.5, 0.5]), np.array([-1.6, 1.6]), np.array([s, s])
    )


@lru_cache(maxsize=8)
def _gl_nodes(n_points: int):
    return np.polynomial.legendre.leggauss(n_points)


def _integration_window(target: GaussianMixture, model: GaussianModel):
    means = np.append(target.means, model.mu)
    stds = np.append(target.stds, model.sigma)
    pad = 10.0 * float(stds.max())
    lo = float(means.min()) - pad
    hi = float(means.max()) + pad
    # Panel resolution must see the narrowest density from the start, or
    # the doubling check can agree on two estimates that both miss it.
    feature = float(stds.min())
    start = 8
    while start * 8.0 * feature < hi - lo:
        start *= 2
    return lo, hi, start


def _composite_gl(fun, lo, hi, tol=1e-9, n_points=20, start_panels=8, max_panels=4096):
    """Integrate fun on [lo, hi]: double the panel count until stable."""
    nodes, weights = _gl_nodes(n_points)
    previous = None
    panels = start_panels
    if panels > max_panels:
        raise QuadratureError(
            "density features are too narrow for the panel budget"
        )
    while panels <= max_panels:
        edges = np.linspace(lo, hi, panels + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        x = (mid[:, None] + half[:, None] * nodes).ravel()
        values = fun(x).reshape(panels, n_points)
        total = float(np.sum(half * np.dot(values, weights)))
        if not np.isfinite(total):
            return total
        if previous is not None and abs(total - previous) < tol:
            return total
        previous = total
        panels *= 2
    raise QuadratureError(f"no convergence to {tol} within {max_panels} panels")


def _divergence_integrand(family: DivergenceFamily, lp, lq):
    # q * f(p/q) written in logs so huge ratios never exponentiate raw
    if family.kind == "forward_kl":
        return np.exp(lp) * (lp - lq)
    if family.kind == "reverse_kl":
        return np.exp(lq) * (lq - lp)
    if family.kind == "jeffreys":
        return (np.exp(lp) - np.exp(lq)) * (lp - lq)
    if family.kind == "jensen_shannon":
        m = np.logaddexp(lp, lq)
        return np.exp(lp) * (_LN2 + lp - m) + np.exp(lq) * (_LN2 + lq - m)
    if family.kind == "gan":
        m = np.logaddexp(lp, lq)
        return np.exp(lp) * (lp - m) + np.exp(lq) * (lq - m)
    if family.kind == "chi":
        with np.errstate(over="ignore"):
            return np.exp(lq) * np.expm1(lp - lq) ** family.order
    raise UnsupportedFamilyError(f"no quadrature integrand for {family.name}")


def quadrature_divergence(
    family: DivergenceFamily, target: GaussianMixture, model: GaussianModel
) -> float:
    """Divergence of the mixture from the model, integrated to 1e-9."""
    lo, hi, start = _integration_window(target, model)

    def fun(x):
        return _divergence_integrand(family, target.log_pdf(x), model.log_pdf(x))

    return _composite_gl(fun, lo, hi, start_panels=start)


def _gradient_prefactor(family: DivergenceFamily, lp, lq):
    # d/dq [q f(p/q)] = f(t) - t f'(t), per family, in logs
    if family.kind == "forward_kl":
        return -np.exp(lp - lq)
    if family.kind == "reverse_kl":
        return 1.0 + lq - lp
    if family.kind == "jeffreys":
        return 1.0 - np.exp(lp - lq) - (lp - lq)
    if family.kind == "jensen_shannon":
        return -(np.logaddexp(lp, lq) - lq - _LN2)
    if family.kind == "gan":
        return -(np.logaddexp(lp, lq) - lq)
    raise UnsupportedFamilyError(f"no gradient integrand for {family.name}")


def _quadrature_gradient(
    family: DivergenceFamily, target: GaussianMixture, model: GaussianModel
) -> np.ndarray:
    """Exact gradient of quadrature_divergence in (mu, log_sigma)."""
    lo, hi, start = _integration_window(target, model)
    sigma = model.sigma

    def make(which):
        def fun(x):
            lp = target.log_pdf(x)
            lq = model.log_pdf(x)
            z = (x - model.mu) / sigma
            score = z / sigma if which == "mu" else z**2 - 1.0
            return _gradient_prefactor(family, lp, lq) * np.exp(lq) * score

        return fun

    return np.array(
        [
            _composite_gl(make("mu"), lo, hi, start_panels=start),
            _composite_gl(make("sigma"), lo, hi, start_panels=start),
        ]
    )


def best_fit_quadrature(family: DivergenceFamily, target: GaussianMixture) -> FitReport:
    """Reference optimum: coarse grid, then coordinate descent on exact
    gradients until their norm drops below 1e-6."""
    mu_grid = np.arange(-4.0, 4.0 + 1e-12, 0.05)
    sigma_grid = np.geomspace(0.3, 6.0, 40)

    best = (np.inf, 0.0, 0.0)
    for sigma in sigma_grid:
        log_sigma = float(np.log(sigma))
        for mu in mu_grid:
            val = quadrature_divergence(family, target, GaussianModel(mu, log_sigma))
            if val < best[0]:
                best = (val, float(mu), log_sigma)
    _, mu, log_sigma = best

    from scipy.optimize import minimize_scalar

    sweeps = 0
    for sweeps in range(1, 101):
        res = minimize_scalar(
            lambda m: quadrature_divergence(family, target, GaussianModel(m, log_sigma)),
            bracket=(mu - 0.2, mu, mu + 0.2),
            method="brent",
            options={"xtol": 1e-12},
        )
        mu = float(res.x)
        res = minimize_scalar(
            lambda ls: quadrature_divergence(family, target, GaussianModel(mu, ls)),
            bracket=(log_sigma - 0.2, log_sigma, log_sigma + 0.2),
            method="brent",
            options={"xtol": 1e-12},
        )
        log_sigma = float(res.x)
        grad = _quadrature_gradient(family, target, GaussianModel(mu, log_sigma))
        if float(np.linalg.norm(grad)) < 1e-6:
            break
    else:
        raise GaussFitError("coordinate descent did not reach gradient tolerance")

    model = GaussianModel(mu, log_sigma)
    return FitReport(
        method="quadrature",
        family=family,
        mu_hat=mu,
        sigma_hat=model.sigma,
        divergence_value=quadrature_divergence(family, target, model),
        steps=sweeps,
        seed=None,
    )


def _model_partials(x, mu, sigma):
    # partials of the model log density at fixed x
    z = (x - mu) / sigma
    return z / sigma, z**2 - 1.0


def sgd_loss_and_grad(
    family: DivergenceFamily,
    target: GaussianMixture,
    params: np.ndarray,
    variant: str,
    n_loss: int,
    eps: float,
    noise: np.ndarray,
    x_target: np.ndarray,
):
    """One-batch loss estimate and its exact gradient in (mu, log_sigma).

    noise is the standard-normal draw behind the model samples
    x = mu + sigma * noise, so differentiating moves the samples too; along
    that path the model's own log density loses its mu dependence entirely
    and is linear in log_sigma, while the target's log density moves with
    the sample through its score. x_target are fixed draws from the target.
    """
    mu, log_sigma = float(params[0]), float(params[1])
    sigma = float(np.exp(log_sigma))
    model = GaussianModel(mu, log_sigma)

    x_model = mu + sigma * noise
    lp_t = target.log_pdf(x_target)
    lq_t = model.log_pdf(x_target)
    dmu_t, ds_t = _model_partials(x_target, mu, sigma)
    lp_m, score_m = target.log_pdf_and_score(x_model)
    lq_m = -0.5 * noise**2 - log_sigma - _LOG_SQRT_2PI

    def mean(v):
        return float(np.mean(v))

    if variant == "exact":
        if family.kind == "forward_kl":
            loss = mean(lp_t - lq_t)
            grad = np.array([mean(-dmu_t), mean(-ds_t)])
        elif family.kind == "reverse_kl":
            loss = mean(lq_m - lp_m)
            grad = np.array(
                [mean(-score_m), mean(-1.0 - score_m * sigma * noise)]
            )
        elif family.kind == "jeffreys":
            loss = mean(lp_t - lq_t) + mean(lq_m - lp_m)
            grad = np.array(
                [
                    mean(-dmu_t) + mean(-score_m),
                    mean(-ds_t) + mean(-1.0 - score_m * sigma * noise),
                ]
            )
        elif family.kind in ("jensen_shannon", "gan"):
            m_t = np.logaddexp(lp_t, lq_t)
            m_m = np.logaddexp(lp_m, lq_m)
            shift = _LN2 if family.kind == "jensen_shannon" else 0.0
            loss = mean(shift + lp_t - m_t) + mean(shift + lq_m - m_m)
            r_q_t = np.exp(lq_t - m_t)  # model's posterior share at target samples
            r_p_m = np.exp(lp_m - m_m)
            grad = np.array(
                [
                    mean(-r_q_t * dmu_t) + mean(-r_p_m * score_m),
                    mean(-r_q_t * ds_t)
                    + mean(r_p_m * (-1.0 - score_m * sigma * noise)),
                ]
            )
        else:
            raise UnsupportedFamilyError(
                f"no exact stochastic loss for {family.name}"
            )
        return loss, grad

    if variant != "expanded":
        raise ValueError("variant must be 'exact' or 'expanded'")

    # cross-entropy part on target samples, series part on model samples
    coeffs = loss_series_weights(LossConfig(family, n_loss=n_loss, eps=eps, tau=1.0))
    delta_m = lp_m - lq_m
    ratio = np.exp(delta_m)
    lo = max(0.0, 1.0 - eps)
    hi = 1.0 + eps
    d = np.clip(ratio, lo, hi) - 1.0
    phi = np.zeros_like(d)
    slope = np.zeros_like(d)
    power = d.copy()
    for n, c_n in enumerate(coeffs, start=2):
        slope += n * c_n * power
        power = power * d
        phi += c_n * power
    in_band = (ratio > lo) & (ratio < hi)
    gate = np.where(in_band, slope * ratio, 0.0)

    loss = mean(-lq_t) + mean(phi)
    # d ratio/d theta = ratio * d(lp - lq)/d theta along the reparam path
    grad = np.array(
        [
            mean(-dmu_t) + mean(gate * score_m),
            mean(-ds_t) + mean(gate * (score_m * sigma * noise + 1.0)),
        ]
    )
    return loss, grad


def fit_sgd(
    family: DivergenceFamily,
    target: GaussianMixture,
    variant: str,
    n_loss: int = 5,
    steps: int = 1000,
    lr: float = 0.001,
    batch: int = 128,
    seed: int = 0,
    eps: float = 0.3,
    init: tuple[float, float] = _DEFAULT_INIT,
) -> FitReport:
    """Stochastic fit; returns final parameters plus the quadrature
    divergence evaluated at them (the honest score, whatever was optimized)."""
    if variant not in ("exact", "expanded"):
        raise ValueError("variant must be 'exact' or 'expanded'")
    if steps <= 0 or batch <= 0:
        raise ValueError("steps and batch must be positive")
    rng = np.random.default_rng(seed)
    params = np.array(init, dtype=np.float64)
    for step in range(steps):
        noise = rng.standard_normal(batch)
        x_target = target.sample(rng, batch)
        _, grad = sgd_loss_and_grad(
            family, target, params, variant, n_loss, eps, noise, x_target
        )
        params -= lr * grad
        if abs(params[0]) > 100.0 or params[1] > np.log(100.0):
            raise GaussFitError(
                f"parameters diverged at step {step}: mu={params[0]:.3g}, "
                f"log_sigma={params[1]:.3g}"
            )
    model = GaussianModel(float(params[0]), float(params[1]))
    return FitReport(
        method="exact_loss" if variant == "exact" else "expanded_loss",
        family=family,
        mu_hat=model.mu,
        sigma_hat=model.sigma,
        divergence_value=quadrature_divergence(family, target, model),
        steps=steps,
        seed=seed,
    )
