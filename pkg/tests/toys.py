"""Tiny closed-form models and integrals backing the oracle tests.

The workhorse is a conjugate 1-D Gaussian model: theta ~ N(prior_mean,
prior_scale^2) with a single observation y0 ~ N(theta, lik_scale^2).  Its
posterior is Gaussian in closed form, the ELBO under a Gaussian q is a
quadratic, and for exponentially transformed squared losses every
calibration integral is a Gaussian integral with an explicit answer.
Anything without a closed form is handled by Gauss-Hermite quadrature.
"""

import numpy as np

from lcvi.decisions import LossLike, loss_value
from lcvi.models.base import Batch, ModelSpec, Target
from lcvi.reparam import SupportTransform

_LOG_2PI = float(np.log(2.0 * np.pi))


class ConjugateNormalModel(ModelSpec):
    """theta ~ N(m0, s0^2), one observation y0 ~ N(theta, s_lik^2).

    The single prediction target is the observation cell itself; the
    predictive reparameterization is y = theta + s_lik * delta.
    """

    def __init__(self, y0=2.0, prior_mean=0.0, prior_scale=1.0, lik_scale=1.0):
        self.y0 = float(y0)
        self.m0 = float(prior_mean)
        self.s0 = float(prior_scale)
        self.s_lik = float(lik_scale)
        self.latent_dim = 1
        self.support_transforms = (SupportTransform.IDENTITY,)

    # exact posterior ----------------------------------------------------------

    @property
    def posterior_mean(self):
        prec = 1.0 / self.s0**2 + 1.0 / self.s_lik**2
        return (self.m0 / self.s0**2 + self.y0 / self.s_lik**2) / prec

    @property
    def posterior_var(self):
        return 1.0 / (1.0 / self.s0**2 + 1.0 / self.s_lik**2)

    def exact_elbo(self, mean, log_scale):
        """E_q[log p(theta, y0)] + H(q) for q = N(mean, exp(log_scale)^2)."""
        var = np.exp(2.0 * log_scale)
        e_prior = -0.5 * (_LOG_2PI + 2.0 * np.log(self.s0)) - (
            (mean - self.m0) ** 2 + var
        ) / (2.0 * self.s0**2)
        e_lik = -0.5 * (_LOG_2PI + 2.0 * np.log(self.s_lik)) - (
            (self.y0 - mean) ** 2 + var
        ) / (2.0 * self.s_lik**2)
        ent = log_scale + 0.5 * (_LOG_2PI + 1.0)
        return float(e_prior + e_lik + ent)

    # ModelSpec surface ---------------------------------------------------------

    def log_joint(self, theta, batch):
        th = theta[:, 0]
        value = (
            -0.5 * (_LOG_2PI + 2.0 * np.log(self.s0))
            - (th - self.m0) ** 2 / (2.0 * self.s0**2)
            - 0.5 * (_LOG_2PI + 2.0 * np.log(self.s_lik))
            - (self.y0 - th) ** 2 / (2.0 * self.s_lik**2)
        )
        grad = -(th - self.m0) / self.s0**2 + (self.y0 - th) / self.s_lik**2
        return value, grad[:, None]

    def pred_location(self, theta, batch):
        return np.repeat(theta[:, [0]], batch.n_targets, axis=1)

    def pred_scale(self, batch):
        return np.full(batch.n_targets, self.s_lik)

    def pred_location_grad(self, theta, batch, coef):
        return coef.sum(axis=1, keepdims=True)

    def prediction_targets(self, data):
        return [Target(key=(0,), observed=self.y0)]

    def make_batch(self, data, rows=None):
        t = self.prediction_targets(data)[0]
        return Batch(
            payload=None,
            targets=(t,),
            observed=np.array([t.observed]),
            target_ids=np.array([0]),
            likelihood_scale=1.0,
            n_targets_total=1,
        )

    def make_eval_batch(self, data):
        return self.make_batch(data)

    def n_rows(self, data):
        return 1

    def _single_target_batch(self, target):
        return self.make_batch(None)


# ---------------------------------------------------------------------------
# closed-form calibration integrals for u = exp(-gamma (h - y)^2)


def log_inner_gaussian_utility(gamma, h, loc, var):
    """log E_{y ~ N(loc, var)} exp(-gamma (h - y)^2), exactly."""
    k = 1.0 + 2.0 * gamma * var
    return -0.5 * np.log(k) - gamma * (h - loc) ** 2 / k


def exact_U_naive_exp_squared(gamma, h, mean, log_scale, lik_scale):
    """E_{theta~N(mean, sigma^2)}[ log E_{y|theta} exp(-gamma (h-y)^2) ].

    The inner log-expectation is quadratic in theta, so the outer average
    is again explicit.  Returns (value, d/dh, d/dmean, d/dlog_scale).
    """
    var = np.exp(2.0 * log_scale)
    k = 1.0 + 2.0 * gamma * lik_scale**2
    value = -0.5 * np.log(k) - gamma * ((h - mean) ** 2 + var) / k
    d_h = -2.0 * gamma * (h - mean) / k
    d_mean = 2.0 * gamma * (h - mean) / k
    d_log_scale = -2.0 * gamma * var / k
    return float(value), float(d_h), float(d_mean), float(d_log_scale)


def exact_U_linearized_squared(m, h, mean, log_scale, lik_scale):
    """-(1/m) E_q E_y (h - y)^2 and its gradients for the conjugate toy."""
    var = np.exp(2.0 * log_scale)
    value = -((h - mean) ** 2 + var + lik_scale**2) / m
    d_h = -2.0 * (h - mean) / m
    d_mean = 2.0 * (h - mean) / m
    d_log_scale = -2.0 * var / m
    return float(value), float(d_h), float(d_mean), float(d_log_scale)


# ---------------------------------------------------------------------------
# Gauss-Hermite quadrature versions (independent of the algebra above)


def _hermite_nodes(n):
    # probabilists' variant: integrates against the standard normal density
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / np.sqrt(2.0 * np.pi)


def quad_U_naive(loss: LossLike, gamma, h, mean, log_scale, lik_scale, n=96):
    """E_theta[ log E_y exp(-gamma * loss(y, h)) ] by nested quadrature."""
    x, w = _hermite_nodes(n)
    theta = mean + np.exp(log_scale) * x
    y = theta[:, None] + lik_scale * x[None, :]
    inner = np.exp(-gamma * loss_value(loss, y, h)) @ w
    return float(np.log(inner) @ w)


def quad_U_linearized(loss: LossLike, m, h, mean, log_scale, lik_scale, n=96):
    """-(1/m) E_theta E_y loss(y, h) by nested quadrature."""
    x, w = _hermite_nodes(n)
    theta = mean + np.exp(log_scale) * x
    y = theta[:, None] + lik_scale * x[None, :]
    return float(-(w @ loss_value(loss, y, h) @ w) / m)
