"""Stochastic-ascent loops for the plain and calibrated objectives.

Three regimes share one Adam implementation and one stream discipline:

* ``run_standard_vi`` maximizes the ELBO alone.
* ``run_joint_lcvi`` ascends the calibrated bound in the concatenated
  variable (lambda, h), decisions included in the same optimizer state.
* ``run_em`` alternates: one Adam epoch on lambda at fixed decisions, then
  a refit of the batch decisions (closed form where the loss has one,
  otherwise a short inner ascent).

Every epoch derives its randomness from counter lanes of the caller's
stream state — lane (epoch, 0) for the minibatch, (epoch, 1) for the ELBO,
(epoch, 2) for the utility term, (epoch, 3) for trace-time risk scoring,
(0, 4) for decision initialization, (epoch, 5) for EM refits.  Because the
lanes are disjoint, a joint run with no utility term consumes exactly the
same draws as a plain VI run and reproduces it bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .calibration import (
    calibrated_bound,
    estimate_U_linearized,
    estimate_U_naive,
    zero_utility_term,
)
from .decisions import (
    ComplementLoss,
    ExpTransform,
    LossLike,
    LossSpec,
    UtilitySpec,
    gamma_from_quantile,
    squared,
)
from .evaluate import (
    RunTrace,
    batch_optimal_decisions,
    empirical_risk,
    posterior_decisions,
)
from .meanfield import VariationalParams, estimate_elbo, init_variational_params
from .models.base import ModelSpec, sample_predictive
from .reparam import RngState

_REGIMES = ("standard_vi", "joint", "em_closed_form", "em_numerical")
_ESTIMATORS = ("naive", "linearized")


@dataclass(frozen=True)
class AdamState:
    """First/second moment accumulators for one flat parameter vector."""

    step: int
    m: np.ndarray
    v: np.ndarray
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adam(
    dim: int,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    if learning_rate <= 0:
        raise ValueError(f"learning rate must be positive, got {learning_rate}")
    return AdamState(
        step=0,
        m=np.zeros(dim),
        v=np.zeros(dim),
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(
    state: AdamState,
    params: np.ndarray,
    grad: np.ndarray,
    update_mask: Optional[np.ndarray] = None,
) -> tuple[AdamState, np.ndarray]:
    """One ascent step.  Coordinates where ``update_mask`` is False keep both
    their value and their moment estimates (lazy updates for decisions whose
    targets sat out the minibatch)."""
    if grad.shape != params.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match params {params.shape}")
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))
        raise FloatingPointError(
            f"non-finite gradient at coordinates {bad[:5].tolist()} (step {state.step + 1})"
        )
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params + state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    if update_mask is not None:
        new_params = np.where(update_mask, new_params, params)
        m = np.where(update_mask, m, state.m)
        v = np.where(update_mask, v, state.v)
    return replace(state, step=t, m=m, v=v), new_params


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs shared by all training regimes."""

    regime: str = "standard_vi"
    epochs: int = 1000
    warmstart_epochs: int = 0
    batch_rows: Optional[int] = None
    learning_rate: float = 0.01
    s_theta: int = 30
    s_y: int = 10
    estimator_kind: str = "linearized"
    trace_every: int = 100
    eval_s_theta: int = 100
    eval_s_y: int = 10
    em_inner_steps: int = 25

    def __post_init__(self):
        if self.regime not in _REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}, expected one of {_REGIMES}")
        if self.estimator_kind not in _ESTIMATORS:
            raise ValueError(
                f"unknown estimator {self.estimator_kind!r}, expected one of {_ESTIMATORS}"
            )
        for name in ("epochs", "warmstart_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.batch_rows is not None and self.batch_rows < 1:
            raise ValueError(f"batch_rows must be positive when set, got {self.batch_rows}")
        for name in ("learning_rate", "s_theta", "s_y", "trace_every", "eval_s_theta",
                     "eval_s_y", "em_inner_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class CalibratedObjective:
    """What the calibrated phase optimizes and how its decisions are scored.

    ``estimator_kind == "linearized"`` carries (loss, m); ``"naive"`` carries
    a utility whose log terms are tractable.  ``eval_loss`` is the loss that
    decisions are measured by — the loss itself, or one minus the utility
    when the objective started from a bounded utility rather than a loss.
    """

    estimator_kind: str
    eval_loss: LossLike
    utility: Optional[UtilitySpec] = None
    loss: Optional[LossLike] = None
    m: Optional[float] = None


def build_objective(
    estimator_kind: str,
    loss: Optional[LossLike] = None,
    m: Optional[float] = None,
    utility: Optional[UtilitySpec] = None,
) -> CalibratedObjective:
    if estimator_kind not in _ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator_kind!r}")
    if utility is not None:
        if loss is not None:
            raise ValueError("pass either a loss or a utility, not both")
        if estimator_kind != "naive":
            raise ValueError("a bare utility can only drive the naive estimator")
        return CalibratedObjective(
            estimator_kind="naive", eval_loss=ComplementLoss(utility), utility=utility
        )
    if loss is None:
        raise ValueError("an objective needs a loss or a utility")
    if m is None or not (np.isfinite(m) and m > 0):
        raise ValueError(f"loss-based objectives need a positive robust maximum, got {m}")
    if estimator_kind == "linearized":
        return CalibratedObjective(
            estimator_kind="linearized", eval_loss=loss, loss=loss, m=float(m)
        )
    if not isinstance(loss, LossSpec):
        raise ValueError("the naive estimator needs a plain loss to exponentiate")
    return CalibratedObjective(
        estimator_kind="naive",
        eval_loss=loss,
        utility=ExpTransform(gamma=gamma_from_quantile(float(m)), loss=loss),
        m=float(m),
    )


@dataclass(frozen=True)
class VIRunResult:
    params: VariationalParams
    trace: RunTrace


@dataclass(frozen=True)
class CalibratedRunResult:
    params: VariationalParams
    decisions: np.ndarray
    trace: RunTrace


def _draw_batch(model, data, batch_rows, rng, full):
    n = model.n_rows(data)
    if batch_rows is None or batch_rows >= n:
        return full
    rows = np.sort(rng.generator().choice(n, size=batch_rows, replace=False))
    return model.make_batch(data, rows)


def _traced(epoch: int, config: OptimizerConfig) -> bool:
    return epoch % config.trace_every == 0 or epoch == config.epochs - 1


def _trace_risk(model, eval_batch, params, loss, config, rng) -> float:
    if loss is None or eval_batch is None:
        return 0.0
    decisions = posterior_decisions(
        model,
        eval_batch,
        params.means,
        params.log_scales,
        loss,
        config.eval_s_theta,
        config.eval_s_y,
        rng,
    )
    return empirical_risk(loss, decisions, eval_batch.observed)


def run_standard_vi(
    model: ModelSpec,
    data,
    config: OptimizerConfig,
    rng: RngState,
    init: Optional[VariationalParams] = None,
    trace_loss: Optional[LossLike] = None,
) -> VIRunResult:
    """Maximize the ELBO alone; decisions never enter."""
    params = init if init is not None else init_variational_params(model.latent_dim)
    vec = params.as_vector()
    adam = init_adam(vec.size, config.learning_rate)
    full = model.make_batch(data)
    eval_batch = model.make_eval_batch(data) if trace_loss is not None else None
    trace = RunTrace()
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        batch = _draw_batch(model, data, config.batch_rows, rng.split(epoch, 0), full)
        p = VariationalParams.from_vector(vec)
        est = estimate_elbo(model, batch, p, config.s_theta, rng.split(epoch, 1))
        if _traced(epoch, config):
            risk = _trace_risk(model, eval_batch, p, trace_loss, config, rng.split(epoch, 3))
            trace.append(epoch, est.value, 0.0, risk, time.perf_counter() - t0)
        grad = np.concatenate([est.grad_means, est.grad_log_scales])
        adam, vec = adam_step(adam, vec, grad)
    return VIRunResult(params=VariationalParams.from_vector(vec), trace=trace)


def _estimate_u(objective, model, batch, p, h_batch, config, rng):
    if objective.estimator_kind == "naive":
        return estimate_U_naive(
            model, batch, p, h_batch, objective.utility, config.s_theta, config.s_y, rng
        )
    return estimate_U_linearized(
        model, batch, p, h_batch, objective.loss, objective.m,
        config.s_theta, config.s_y, rng,
    )


def run_joint_lcvi(
    model: ModelSpec,
    data,
    config: OptimizerConfig,
    objective: Optional[CalibratedObjective],
    rng: RngState,
    init: Optional[VariationalParams] = None,
    trace_loss: Optional[LossLike] = None,
) -> CalibratedRunResult:
    """Ascend ELBO + U in the concatenated (lambda, decisions) vector.

    ``objective=None`` runs the degenerate bound (U identically zero): the
    lambda trajectory then matches ``run_standard_vi`` exactly, draw for
    draw, which is the cheapest full-loop correctness check there is.
    """
    d = model.latent_dim
    params = init if init is not None else init_variational_params(d)
    n_t = len(model.prediction_targets(data))
    full = model.make_batch(data)

    h_loss = objective.eval_loss if objective is not None else (trace_loss or squared())
    h0 = posterior_decisions(
        model, full, params.means, params.log_scales, h_loss,
        config.eval_s_theta, config.eval_s_y, rng.split(0, 4),
    )
    vec = np.concatenate([params.as_vector(), h0])
    adam = init_adam(vec.size, config.learning_rate)
    risk_loss = trace_loss if trace_loss is not None else (
        objective.eval_loss if objective is not None else None
    )
    eval_batch = model.make_eval_batch(data) if risk_loss is not None else None
    trace = RunTrace()
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        batch = _draw_batch(model, data, config.batch_rows, rng.split(epoch, 0), full)
        p = VariationalParams.from_vector(vec[: 2 * d])
        elbo = estimate_elbo(model, batch, p, config.s_theta, rng.split(epoch, 1))
        if objective is None:
            u = zero_utility_term(batch.n_targets, d)
        else:
            u = _estimate_u(
                objective, model, batch, p, vec[2 * d:][batch.target_ids],
                config, rng.split(epoch, 2),
            )
        bound = calibrated_bound(elbo, u)
        if _traced(epoch, config):
            risk = _trace_risk(model, eval_batch, p, risk_loss, config, rng.split(epoch, 3))
            trace.append(epoch, elbo.value, u.value, risk, time.perf_counter() - t0)
        grad = np.zeros(vec.size)
        grad[:d] = bound.grad_means
        grad[d: 2 * d] = bound.grad_log_scales
        grad[2 * d + batch.target_ids] = bound.grad_h
        if batch.n_targets == n_t:
            mask = None
        else:
            mask = np.zeros(vec.size, dtype=bool)
            mask[: 2 * d] = True
            mask[2 * d + batch.target_ids] = True
        adam, vec = adam_step(adam, vec, grad, update_mask=mask)
    return CalibratedRunResult(
        params=VariationalParams.from_vector(vec[: 2 * d]),
        decisions=vec[2 * d:].copy(),
        trace=trace,
    )


def run_em(
    model: ModelSpec,
    data,
    config: OptimizerConfig,
    loss: LossLike,
    m: float,
    rng: RngState,
    init: Optional[VariationalParams] = None,
    trace_loss: Optional[LossLike] = None,
) -> CalibratedRunResult:
    """Alternate lambda ascent with per-epoch decision refits.

    ``em_closed_form`` refreshes the batch decisions from fresh predictive
    draws using the loss's exact minimizer; ``em_numerical`` runs a short
    inner Adam ascent on the utility term instead and works for any loss.
    """
    closed = config.regime == "em_closed_form"
    if config.regime not in ("em_closed_form", "em_numerical"):
        raise ValueError(f"run_em called with regime {config.regime!r}")
    if closed and not isinstance(loss, LossSpec):
        raise ValueError(
            "em_closed_form needs a loss with an exact minimizer; "
            "use em_numerical for transformed or complemented losses"
        )
    objective = build_objective(config.estimator_kind, loss=loss, m=m)
    d = model.latent_dim
    params = init if init is not None else init_variational_params(d)
    full = model.make_batch(data)

    h = posterior_decisions(
        model, full, params.means, params.log_scales, loss,
        config.eval_s_theta, config.eval_s_y, rng.split(0, 4),
    )
    vec = params.as_vector()
    adam = init_adam(vec.size, config.learning_rate)
    risk_loss = trace_loss if trace_loss is not None else objective.eval_loss
    eval_batch = model.make_eval_batch(data)
    trace = RunTrace()
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        batch = _draw_batch(model, data, config.batch_rows, rng.split(epoch, 0), full)
        p = VariationalParams.from_vector(vec)
        elbo = estimate_elbo(model, batch, p, config.s_theta, rng.split(epoch, 1))
        u = _estimate_u(
            objective, model, batch, p, h[batch.target_ids], config, rng.split(epoch, 2)
        )
        bound = calibrated_bound(elbo, u)
        if _traced(epoch, config):
            risk = _trace_risk(model, eval_batch, p, risk_loss, config, rng.split(epoch, 3))
            trace.append(epoch, elbo.value, u.value, risk, time.perf_counter() - t0)
        grad = np.concatenate([bound.grad_means, bound.grad_log_scales])
        adam, vec = adam_step(adam, vec, grad)

        p_new = VariationalParams.from_vector(vec)
        if closed:
            sims = sample_predictive(
                model, batch, p_new.means, p_new.log_scales,
                config.s_theta, config.s_y, rng.split(epoch, 5),
            )
            h[batch.target_ids] = batch_optimal_decisions(loss, sims)
        else:
            h_b = h[batch.target_ids].copy()
            inner = init_adam(h_b.size, config.learning_rate)
            for i in range(config.em_inner_steps):
                u_i = _estimate_u(
                    objective, model, batch, p_new, h_b, config, rng.split(epoch, 5, i)
                )
                inner, h_b = adam_step(inner, h_b, u_i.grad_h)
            h[batch.target_ids] = h_b
    return CalibratedRunResult(
        params=VariationalParams.from_vector(vec), decisions=h.copy(), trace=trace
    )
