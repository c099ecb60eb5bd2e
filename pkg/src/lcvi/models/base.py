"""Model contract shared by every probabilistic model in the package.

A model exposes a differentiable log-joint over its *constrained* latent
vector plus a location-scale predictive reparameterization

    y = pred_location(theta)[target] + pred_scale(target) * delta,

with ``delta ~ N(0, 1)``.  Everything the estimators need is vectorized over
a stack of latent draws ``theta`` of shape (S, d); gradients flow through the
predictive location via :meth:`ModelSpec.pred_location_grad`, which
accumulates per-(draw, target) coefficients into a (S, d) latent gradient.

Scalar single-target views (:meth:`predict`, :meth:`predict_partials`) are
derived from the vectorized primitives, so contract tests on them exercise
the same code the estimators run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ..reparam import RngState, SupportTransform, constrain_with_derivative, positive_mask


@dataclass(frozen=True)
class Target:
    """One prediction instance: model-specific coordinates plus the observed value."""

    key: tuple
    observed: float


@dataclass(frozen=True)
class Batch:
    """A slice of a dataset prepared for vectorized evaluation.

    ``payload`` is model-private (precomputed index arrays and data views);
    ``likelihood_scale`` multiplies only the data log-likelihood sum inside
    ``log_joint`` (dataset rows / batch rows), and ``n_targets_total`` lets
    utility-term estimates scale batch sums back to dataset totals.
    """

    payload: Any
    targets: tuple[Target, ...]
    observed: np.ndarray
    target_ids: np.ndarray
    likelihood_scale: float
    n_targets_total: int

    @property
    def n_targets(self) -> int:
        return len(self.targets)


class ModelSpec:
    """Base class defining the model interface used by every estimator."""

    latent_dim: int
    support_transforms: tuple[SupportTransform, ...]

    # -- core vectorized surface ------------------------------------------------

    def log_joint(self, theta: np.ndarray, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        """Log p(data, theta) and its theta-gradient, for constrained theta (S, d).

        Returns ``(values (S,), grads (S, d))``.  The density is taken with
        respect to the constrained parametrization; support-transform
        Jacobians are added by the caller alongside ``constrain``.
        """
        raise NotImplementedError

    def pred_location(self, theta: np.ndarray, batch: Batch) -> np.ndarray:
        """Predictive locations, shape (S, n_targets)."""
        raise NotImplementedError

    def pred_scale(self, batch: Batch) -> np.ndarray:
        """Per-target predictive noise scales, shape (n_targets,)."""
        raise NotImplementedError

    def pred_location_grad(
        self, theta: np.ndarray, batch: Batch, coef: np.ndarray
    ) -> np.ndarray:
        """Accumulate coef[s, t] * d location_t / d theta into a (S, d) array."""
        raise NotImplementedError

    # -- dataset plumbing ---------------------------------------------------------

    def prediction_targets(self, data) -> list[Target]:
        """Training prediction instances (the ones that carry decisions)."""
        raise NotImplementedError

    def eval_targets(self, data) -> list[Target]:
        """Held-out instances used for risk evaluation (training ones by default)."""
        return self.prediction_targets(data)

    def make_batch(self, data, rows: np.ndarray | None = None) -> Batch:
        """Batch over training targets; ``rows`` selects a row minibatch."""
        raise NotImplementedError

    def make_eval_batch(self, data) -> Batch:
        """Batch over evaluation targets (likelihood fields unused)."""
        raise NotImplementedError

    def n_rows(self, data) -> int:
        """Size of the minibatching universe (1 row = the full dataset slice)."""
        raise NotImplementedError

    # -- single-target views, derived from the vectorized surface ----------------

    def predict(self, delta: float, theta: np.ndarray, target: Target) -> float:
        """Predictive draw y = g(delta, theta, target) for one latent vector."""
        batch = self._single_target_batch(target)
        loc = self.pred_location(np.asarray(theta, dtype=np.float64)[None, :], batch)
        scale = self.pred_scale(batch)
        return float(loc[0, 0] + scale[0] * delta)

    def predict_partials(
        self, delta: float, theta: np.ndarray, target: Target
    ) -> tuple[np.ndarray, float]:
        """(d g / d theta, d g / d delta) at one latent vector."""
        batch = self._single_target_batch(target)
        theta2 = np.asarray(theta, dtype=np.float64)[None, :]
        dtheta = self.pred_location_grad(theta2, batch, np.ones((1, 1)))[0]
        return dtheta, float(self.pred_scale(batch)[0])

    def _single_target_batch(self, target: Target) -> Batch:
        raise NotImplementedError


def sample_predictive(
    model: ModelSpec,
    batch: Batch,
    means: np.ndarray,
    log_scales: np.ndarray,
    s_theta: int,
    s_y: int,
    rng: RngState,
) -> np.ndarray:
    """Draw predictive outcome samples for every target in ``batch``.

    Returns an array of shape (n_targets, s_theta * s_y): for each of
    s_theta latent draws from the mean-field approximation, s_y fresh
    predictive-noise draws.  Deterministic in ``rng``.
    """
    if s_theta < 1 or s_y < 1:
        raise ValueError(f"sample counts must be positive, got {s_theta}, {s_y}")
    gen = rng.generator()
    eps = gen.standard_normal((s_theta, model.latent_dim))
    theta_u = means + np.exp(log_scales) * eps
    pos = positive_mask(model.support_transforms)
    theta_c, _, _ = constrain_with_derivative(theta_u, pos)
    loc = model.pred_location(theta_c, batch)
    scale = model.pred_scale(batch)
    delta = gen.standard_normal((s_theta, batch.n_targets, s_y))
    y = loc[:, :, None] + scale[None, :, None] * delta
    return y.transpose(1, 0, 2).reshape(batch.n_targets, s_theta * s_y)
