"""Monte Carlo estimators for the decision-utility term of the calibrated bound.

The bound being maximized is  ELBO(lambda) + U(lambda, h)  where U scores a
vector of decisions h (one per prediction target) against the posterior
predictive.  Two estimators are provided:

``estimate_U_naive``
    Plugs a nested Monte Carlo average into a log: for each latent draw,
    log of the mean utility over predictive draws, averaged over latent
    draws.  Biased downward (Jensen), with the bias vanishing as ``s_y``
    grows.  Requires a utility with tractable log terms; runs entirely in
    log space so tiny utilities do not underflow.

``estimate_U_linearized``
    First-order expansion of the log around the utility's maximum ``m``:
    up to an additive constant, U reduces to minus the expected loss over
    both sampling stages, scaled by ``1/m``.  Unbiased and loss-agnostic.

Both return the value together with analytic gradients for the variational
parameters and the decisions, estimated from the same draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decisions import (
    LossLike,
    RobustMax,
    UtilitySpec,
    affine_parts,
    loss_grad_h,
    loss_value,
    utility_log_terms,
)
from .meanfield import ElboEstimate, VariationalParams
from .models.base import Batch, ModelSpec
from .reparam import RngState, constrain_with_derivative, positive_mask


class InnerUtilityError(RuntimeError):
    """A per-target inner utility average came out non-finite or degenerate."""


@dataclass(frozen=True)
class UtilityTermEstimate:
    """Estimated utility term with gradients for (means, log_scales, h)."""

    value: float
    grad_means: np.ndarray
    grad_log_scales: np.ndarray
    grad_h: np.ndarray
    estimator_kind: str
    s_theta: int
    s_y: int


@dataclass(frozen=True)
class BoundEstimate:
    """Calibrated bound: ELBO plus utility term, gradients summed likewise."""

    value: float
    grad_means: np.ndarray
    grad_log_scales: np.ndarray
    grad_h: np.ndarray


def calibrated_bound(elbo: ElboEstimate, u_term: UtilityTermEstimate) -> BoundEstimate:
    if elbo.grad_means.shape != u_term.grad_means.shape:
        raise ValueError(
            f"gradient dimension mismatch: ELBO {elbo.grad_means.shape} vs "
            f"utility term {u_term.grad_means.shape}"
        )
    return BoundEstimate(
        value=elbo.value + u_term.value,
        grad_means=elbo.grad_means + u_term.grad_means,
        grad_log_scales=elbo.grad_log_scales + u_term.grad_log_scales,
        grad_h=u_term.grad_h.copy(),
    )


def zero_utility_term(n_targets: int, latent_dim: int) -> UtilityTermEstimate:
    """Identically-zero utility term: the bound degenerates to the ELBO."""
    return UtilityTermEstimate(
        value=0.0,
        grad_means=np.zeros(latent_dim),
        grad_log_scales=np.zeros(latent_dim),
        grad_h=np.zeros(n_targets),
        estimator_kind="zero",
        s_theta=0,
        s_y=0,
    )


def _draw_latents(model: ModelSpec, params: VariationalParams, s_theta: int, gen):
    eps = gen.standard_normal((s_theta, model.latent_dim))
    sigma = np.exp(params.log_scales)
    theta_u = params.means + sigma * eps
    pos = positive_mask(model.support_transforms)
    theta_c, dtheta, _ = constrain_with_derivative(theta_u, pos)
    return eps, sigma, theta_c, dtheta


def _check_inputs(model, batch, params, h, s_theta, s_y):
    if s_theta < 1 or s_y < 1:
        raise ValueError(f"sample counts must be positive, got s_theta={s_theta} s_y={s_y}")
    if params.dim != model.latent_dim:
        raise ValueError(
            f"parameter dimension {params.dim} does not match model ({model.latent_dim})"
        )
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (batch.n_targets,):
        raise ValueError(
            f"decision vector has shape {h.shape}, batch carries {batch.n_targets} targets"
        )
    if not np.all(np.isfinite(h)):
        raise ValueError("decisions must be finite")
    return h


def _lambda_grads(model, batch, coef, theta_c, dtheta, sigma, eps, scale):
    """Chain per-(draw, target) coefficients on the predictive location back
    to gradients for the variational means and log scales."""
    g = model.pred_location_grad(theta_c, batch, coef)
    g_u = g * dtheta
    grad_means = scale * g_u.mean(axis=0)
    grad_log_scales = scale * (g_u * (sigma * eps)).mean(axis=0)
    return grad_means, grad_log_scales


def inner_expected_utility(
    model: ModelSpec,
    theta_c: np.ndarray,
    target,
    h: float,
    utility: UtilitySpec,
    s_y: int,
    rng: RngState,
) -> float:
    """Plain-space inner average: mean utility over s_y predictive draws at
    one latent draw.  Diagnostic / small-problem use; the batch estimator
    below keeps the same quantity in log space."""
    from .decisions import to_utility

    batch = model._single_target_batch(target)
    loc = model.pred_location(theta_c[None, :], batch)[0, 0]
    scale = float(model.pred_scale(batch)[0])
    delta = rng.generator().standard_normal(s_y)
    u = to_utility(utility, loc + scale * delta, h)
    val = float(np.mean(u))
    if not np.isfinite(val):
        raise InnerUtilityError(f"inner utility average is {val} for target {target.key}")
    return val


def estimate_U_naive(
    model: ModelSpec,
    batch: Batch,
    params: VariationalParams,
    h: np.ndarray,
    utility: UtilitySpec,
    s_theta: int,
    s_y: int,
    rng: RngState,
) -> UtilityTermEstimate:
    """Nested Monte Carlo estimator of E_q[ log E_pred[ u ] ].

    The inner average runs in log space (log-sum-exp over predictive draws),
    so utilities that underflow to zero in plain space still contribute.
    Affine wrappers alpha * u + beta are handled outside the per-draw terms:
    with beta = 0 the alpha factor peels off as an additive constant
    ``n_targets_total * log(alpha)`` and the gradients never see it.
    """
    h = _check_inputs(model, batch, params, h, s_theta, s_y)
    alpha, beta, base = affine_parts(utility)
    if isinstance(base, RobustMax):
        raise ValueError(
            "the nested estimator has no log-space form for a shifted-max utility; "
            "use the linearized estimator for that transform"
        )
    gen = rng.generator()
    eps, sigma, theta_c, dtheta = _draw_latents(model, params, s_theta, gen)

    loc = model.pred_location(theta_c, batch)  # (S, T)
    scale = model.pred_scale(batch)  # (T,)
    delta = gen.standard_normal((s_theta, batch.n_targets, s_y))
    y = loc[:, :, None] + scale[None, :, None] * delta

    log_u, dlog_dh, dlog_dy = utility_log_terms(base, y, h[None, :, None])
    if np.isnan(log_u).any():
        s, t = np.argwhere(np.isnan(log_u))[0][:2]
        raise InnerUtilityError(
            f"log utility is NaN for target {batch.targets[int(t)].key} at draw {int(s)}"
        )

    # log of the inner mean, per (draw, target)
    peak = log_u.max(axis=2)
    w = np.exp(log_u - peak[:, :, None])
    w_sum = w.sum(axis=2)
    log_a = peak + np.log(w_sum / s_y)
    bad = ~np.isfinite(log_a)
    if bad.any():
        s, t = np.argwhere(bad)[0]
        raise InnerUtilityError(
            f"inner expected utility vanished for target {batch.targets[int(t)].key} "
            f"at draw {int(s)} (log average {log_a[s, t]})"
        )
    omega = w / w_sum[:, :, None]  # softmax weights over predictive draws
    dla_dh = (omega * dlog_dh).sum(axis=2)  # (S, T)
    dla_dloc = (omega * dlog_dy).sum(axis=2)

    scale_u = batch.likelihood_scale
    if beta == 0.0:
        # log(alpha * A) = log A + log alpha: constant shift, flat gradient
        value = scale_u * float(log_a.mean(axis=0).sum())
        if alpha != 1.0:
            value = value + (scale_u * batch.n_targets) * np.log(alpha)
        grad_h = scale_u * dla_dh.mean(axis=0)
        coef = dla_dloc
    else:
        log_aff = np.logaddexp(np.log(alpha) + log_a, np.log(beta))
        sig = np.exp(np.log(alpha) + log_a - log_aff)  # alpha*A / (alpha*A + beta)
        value = scale_u * float(log_aff.mean(axis=0).sum())
        grad_h = scale_u * (sig * dla_dh).mean(axis=0)
        coef = sig * dla_dloc

    grad_means, grad_log_scales = _lambda_grads(
        model, batch, coef, theta_c, dtheta, sigma, eps, scale_u
    )
    return UtilityTermEstimate(
        value=value,
        grad_means=grad_means,
        grad_log_scales=grad_log_scales,
        grad_h=grad_h,
        estimator_kind="naive",
        s_theta=s_theta,
        s_y=s_y,
    )


def estimate_U_linearized(
    model: ModelSpec,
    batch: Batch,
    params: VariationalParams,
    h: np.ndarray,
    loss: LossLike,
    m: float,
    s_theta: int,
    s_y: int,
    rng: RngState,
) -> UtilityTermEstimate:
    """Linearized utility term: minus the doubly averaged loss over 1/m.

    Unbiased in both sampling stages and defined for any loss, including
    ones whose exponential utility would be intractable.
    """
    h = _check_inputs(model, batch, params, h, s_theta, s_y)
    if not (np.isfinite(m) and m > 0):
        raise ValueError(f"robust maximum m must be positive and finite, got {m}")
    gen = rng.generator()
    eps, sigma, theta_c, dtheta = _draw_latents(model, params, s_theta, gen)

    loc = model.pred_location(theta_c, batch)
    scale = model.pred_scale(batch)
    delta = gen.standard_normal((s_theta, batch.n_targets, s_y))
    y = loc[:, :, None] + scale[None, :, None] * delta

    h_bc = h[None, :, None]
    ell = loss_value(loss, y, h_bc)  # (S, T, s_y)
    if not np.all(np.isfinite(ell)):
        s, t = np.argwhere(~np.isfinite(ell))[0][:2]
        raise InnerUtilityError(
            f"loss is non-finite for target {batch.targets[int(t)].key} at draw {int(s)}"
        )
    dell_dh = loss_grad_h(loss, y, h_bc)

    scale_u = batch.likelihood_scale
    value = -(scale_u / m) * float(ell.mean(axis=(0, 2)).sum())
    grad_h = -(scale_u / m) * dell_dh.mean(axis=(0, 2))
    # d loss / d y = -d loss / d h for every difference-based family
    coef = dell_dh.mean(axis=2) / m
    grad_means, grad_log_scales = _lambda_grads(
        model, batch, coef, theta_c, dtheta, sigma, eps, scale_u
    )
    return UtilityTermEstimate(
        value=value,
        grad_means=grad_means,
        grad_log_scales=grad_log_scales,
        grad_h=grad_h,
        estimator_kind="linearized",
        s_theta=s_theta,
        s_y=s_y,
    )
