"""Losses, Bayes-optimal decisions, and loss-to-utility transforms.

Four loss families are supported, each with a closed-form Bayes estimator
over predictive samples:

======== ============================== ===========================
family   loss(y, h)                     estimator over samples
======== ============================== ===========================
squared  (h - y)^2                      mean
absolute |h - y|                        median (lower/nearest-rank)
tilted   q|h-y| if y >= h else (1-q)|.| empirical q-quantile
linex    e^{c(h-y)} - c(h-y) - 1        -(1/c) log-mean-exp(-c y)
======== ============================== ===========================

All four are functions of (h - y), so the y-subgradient is the negated
h-subgradient; subgradients at kinks are taken as 0.

Losses convert to strictly positive utilities either by a robust-maximum
shift ``u = M - loss`` (valid only inside the linearized estimator, which
never evaluates u directly) or an exponential squash ``u = exp(-gamma *
loss)`` with ``gamma = 1 / M_q``; ``M_q`` is an empirical quantile of the
realized per-target losses of a converged standard-VI run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models.base import ModelSpec, sample_predictive
from .reparam import RngState

# ---------------------------------------------------------------------------
# losses


@dataclass(frozen=True)
class LossSpec:
    """One of the four supported loss families.

    Use the module-level constructors (:func:`squared`, :func:`absolute`,
    :func:`tilted`, :func:`linex`) rather than building instances by hand.
    """

    kind: str
    q: float | None = None
    c: float | None = None

    def __post_init__(self):
        if self.kind not in ("squared", "absolute", "tilted", "linex"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "tilted":
            if self.q is None or not (0.0 < self.q < 1.0):
                raise ValueError(f"tilted loss needs q in (0, 1), got {self.q}")
        if self.kind == "linex":
            if self.c is None or self.c == 0.0 or not math.isfinite(self.c):
                raise ValueError(f"linex loss needs finite non-zero c, got {self.c}")


def squared() -> LossSpec:
    return LossSpec("squared")


def absolute() -> LossSpec:
    return LossSpec("absolute")


def tilted(q: float) -> LossSpec:
    return LossSpec("tilted", q=q)


def linex(c: float) -> LossSpec:
    return LossSpec("linex", c=c)


def loss(spec: LossSpec, y, h):
    """Loss value, broadcasting over array-valued ``y`` and ``h``."""
    y = np.asarray(y, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    r = h - y
    if spec.kind == "squared":
        return r * r
    if spec.kind == "absolute":
        return np.abs(r)
    if spec.kind == "tilted":
        # y >= h branch carries weight q, the overshoot branch 1 - q
        return np.where(r <= 0, -spec.q * r, (1.0 - spec.q) * r)
    # linex
    e = np.exp(spec.c * r)
    return e - spec.c * r - 1.0


def loss_subgradient_h(spec: LossSpec, y, h):
    """Subgradient of the loss in the decision; 0 at non-differentiable kinks."""
    y = np.asarray(y, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    r = h - y
    if spec.kind == "squared":
        return 2.0 * r
    if spec.kind == "absolute":
        return np.sign(r)
    if spec.kind == "tilted":
        return np.where(r < 0, -spec.q, np.where(r > 0, 1.0 - spec.q, 0.0))
    return spec.c * (np.exp(spec.c * r) - 1.0)


def loss_subgradient_y(spec: LossSpec, y, h):
    """Subgradient in the outcome.

    Every supported family depends on y and h only through h - y, so this is
    exactly the negated h-subgradient (same kink convention).
    """
    return -loss_subgradient_h(spec, y, h)


def _nearest_rank_index(n: int, q: float) -> int:
    """0-based index of the ceil(q*n)-th smallest element.

    The small slack guards against fp noise in q*n pushing an exact integer
    product over the next ceiling (e.g. 0.9 * 10 -> 9.000000000000002).
    """
    k = math.ceil(q * n - 1e-9)
    return min(max(k, 1), n) - 1


def bayes_estimator(spec: LossSpec, samples) -> float:
    """Closed-form risk-minimizing decision for ``spec`` over ``samples``.

    ``absolute`` uses the nearest-rank (lower) median so that it coincides
    with ``tilted(0.5)`` for even sample counts as well.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise ValueError("bayes_estimator needs at least one predictive sample")
    if not np.all(np.isfinite(samples)):
        raise ValueError("bayes_estimator got non-finite predictive samples")
    if spec.kind == "squared":
        return float(np.mean(samples))
    if spec.kind in ("absolute", "tilted"):
        q = 0.5 if spec.kind == "absolute" else spec.q
        return float(np.sort(samples)[_nearest_rank_index(samples.size, q)])
    # linex: -(1/c) log E[exp(-c y)], evaluated with a max shift
    a = -spec.c * samples
    m = a.max()
    return float(-(m + np.log(np.mean(np.exp(a - m)))) / spec.c)


# ---------------------------------------------------------------------------
# utilities


@dataclass(frozen=True)
class RobustMax:
    """u = m - loss.  Positive only where loss < m; consumed exclusively by
    the linearized utility-term estimator, which never evaluates u."""

    m: float
    loss: LossSpec

    def __post_init__(self):
        if not (self.m > 0.0 and math.isfinite(self.m)):
            raise ValueError(f"robust maximum must be finite and positive, got {self.m}")


@dataclass(frozen=True)
class ExpTransform:
    """u = exp(-gamma * loss), mapping any loss into (0, 1]."""

    gamma: float
    loss: LossSpec

    def __post_init__(self):
        if not (self.gamma > 0.0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be finite and positive, got {self.gamma}")


@dataclass(frozen=True)
class NativeExpSquared:
    """u = exp(-(h - y)^2): a utility stated directly, with no loss behind it."""


@dataclass(frozen=True)
class AffineUtility:
    """u' = alpha * base + beta with alpha > 0, beta >= 0.

    A positive affine rescaling never changes which decision is optimal; it
    exists so the invariance of the calibrated objective under utility
    rescaling can be exercised directly.
    """

    base: "UtilitySpec"
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0.0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be finite and positive, got {self.alpha}")
        if not (self.beta >= 0.0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be finite and non-negative, got {self.beta}")


@dataclass(frozen=True)
class ConstantUtility:
    """Diagnostic stub: u = value everywhere (flat in y and h)."""

    value: float

    def __post_init__(self):
        if not (self.value > 0.0 and math.isfinite(self.value)):
            raise ValueError(f"constant utility must be positive, got {self.value}")


UtilitySpec = RobustMax | ExpTransform | NativeExpSquared | AffineUtility | ConstantUtility

# NativeExpSquared is exactly an exponential transform of the squared loss
# with gamma = 1, which is how every code path evaluates it.
_NATIVE_AS_EXP = ExpTransform(gamma=1.0, loss=squared())


def to_utility(spec: UtilitySpec, y, h):
    """Utility value, broadcasting over arrays."""
    if isinstance(spec, RobustMax):
        return spec.m - loss(spec.loss, y, h)
    if isinstance(spec, ExpTransform):
        return np.exp(-spec.gamma * loss(spec.loss, y, h))
    if isinstance(spec, NativeExpSquared):
        return to_utility(_NATIVE_AS_EXP, y, h)
    if isinstance(spec, AffineUtility):
        return spec.alpha * to_utility(spec.base, y, h) + spec.beta
    if isinstance(spec, ConstantUtility):
        y = np.asarray(y, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        return np.full(np.broadcast_shapes(y.shape, h.shape), spec.value)
    raise TypeError(f"not a utility spec: {spec!r}")


def affine_parts(spec: UtilitySpec) -> tuple[float, float, UtilitySpec]:
    """Flatten (possibly nested) affine wrappers into (alpha, beta, base)."""
    alpha, beta = 1.0, 0.0
    while isinstance(spec, AffineUtility):
        alpha, beta = alpha * spec.alpha, alpha * spec.beta + beta
        spec = spec.base
    return alpha, beta, spec


def utility_log_terms(spec: UtilitySpec, y, h):
    """Log-utility and its h/y derivatives for strictly positive base kinds.

    Returns ``(log_u, dlog_dh, dlog_dy)`` elementwise.  Working in log space
    keeps inner averages finite even when every sampled outcome sits far from
    the decision (utilities underflowing to 0 in linear space).  RobustMax is
    refused: it is not strictly positive.
    """
    if isinstance(spec, NativeExpSquared):
        spec = _NATIVE_AS_EXP
    if isinstance(spec, ExpTransform):
        lv = loss(spec.loss, y, h)
        dh = loss_subgradient_h(spec.loss, y, h)
        return -spec.gamma * lv, -spec.gamma * dh, spec.gamma * dh
    if isinstance(spec, ConstantUtility):
        y = np.asarray(y, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        shape = np.broadcast_shapes(y.shape, h.shape)
        z = np.zeros(shape)
        return np.full(shape, math.log(spec.value)), z, z
    if isinstance(spec, RobustMax):
        raise ValueError(
            "RobustMax utilities are not strictly positive and cannot enter "
            "the naive (log-of-inner-mean) estimator; use the linearized "
            "estimator with the underlying loss instead"
        )
    raise TypeError(f"not a positive base utility: {spec!r}")


# ---------------------------------------------------------------------------
# complement loss (1 - u) for utilities bounded by 1


@dataclass(frozen=True)
class ComplementLoss:
    """loss = 1 - u for a utility with sup u = 1 (exp-transformed kinds).

    This is how a natively-stated utility is handed to loss-driven machinery
    (the linearized estimator, risk evaluation); its Bayes decision has no
    closed form and is found by a deterministic 1-D grid + golden-section
    minimization of the sample-average loss.
    """

    utility: UtilitySpec

    def __post_init__(self):
        a, b, base = affine_parts(self.utility)
        if not isinstance(base, (ExpTransform, NativeExpSquared)):
            raise ValueError(
                "complement loss needs a utility bounded by 1 "
                f"(exp-transformed), got {base!r}"
            )
        if a > 1.0 or b > 0.0:
            raise ValueError("complement of an affinely inflated utility can go negative")


LossLike = LossSpec | ComplementLoss


def loss_value(l: LossLike, y, h):
    if isinstance(l, LossSpec):
        return loss(l, y, h)
    return 1.0 - to_utility(l.utility, y, h)


def loss_grad_h(l: LossLike, y, h):
    if isinstance(l, LossSpec):
        return loss_subgradient_h(l, y, h)
    logu, dh, _ = utility_log_terms(l.utility, y, h)
    return -np.exp(logu) * dh


def loss_grad_y(l: LossLike, y, h):
    # all supported families (and 1 - u over them) depend on h - y only
    return -loss_grad_h(l, y, h)


def _golden_refine(fn, a: float, b: float, iters: int = 60) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def optimal_decision(l: LossLike, samples) -> float:
    """Risk-minimizing decision over predictive ``samples`` for any LossLike."""
    if isinstance(l, LossSpec):
        return bayes_estimator(l, samples)
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise ValueError("optimal_decision needs at least one predictive sample")
    lo, hi = samples.min() - 1.0, samples.max() + 1.0

    def mean_loss(h):
        return float(np.mean(loss_value(l, samples, h)))

    grid = np.linspace(lo, hi, 129)
    risks = np.array([mean_loss(h) for h in grid])
    i = int(np.argmin(risks))
    a, b = grid[max(0, i - 1)], grid[min(grid.size - 1, i + 1)]
    return float(_golden_refine(mean_loss, a, b))


# ---------------------------------------------------------------------------
# robust-maximum calibration


def gamma_from_quantile(m_q: float) -> float:
    """Exponential-transform rate from a calibrated robust maximum: 1 / M_q."""
    if not (m_q > 0.0 and math.isfinite(m_q)):
        raise ValueError(f"robust maximum must be finite and positive, got {m_q}")
    return 1.0 / m_q


def empirical_quantile_M(losses, q: float) -> float:
    """Nearest-rank quantile: the ceil(q*N)-th smallest realized loss."""
    if not (0.0 < q <= 1.0):
        raise ValueError(f"quantile must lie in (0, 1], got {q}")
    losses = np.asarray(losses, dtype=np.float64).ravel()
    if losses.size == 0:
        raise ValueError("quantile of an empty loss collection")
    if not np.all(np.isfinite(losses)):
        raise ValueError("non-finite realized losses")
    return float(np.sort(losses)[_nearest_rank_index(losses.size, q)])


def vi_target_losses(
    model: ModelSpec,
    data,
    means: np.ndarray,
    log_scales: np.ndarray,
    l: LossLike,
    s_theta: int,
    s_y: int,
    rng: RngState,
) -> tuple[np.ndarray, np.ndarray]:
    """Realized per-training-target losses of a converged approximation.

    For every training target, draws s_theta * s_y predictive samples,
    takes the loss-optimal decision, and scores it against the observed
    value.  Returns ``(losses, decisions)`` aligned with the training
    target list.
    """
    batch = model.make_batch(data)
    sims = sample_predictive(model, batch, means, log_scales, s_theta, s_y, rng)
    decisions = np.array([optimal_decision(l, sims[t]) for t in range(sims.shape[0])])
    losses = np.asarray(loss_value(l, batch.observed, decisions), dtype=np.float64)
    return losses, decisions


def calibrate_M(
    model: ModelSpec,
    data,
    means: np.ndarray,
    log_scales: np.ndarray,
    l: LossLike,
    quantile: float,
    s_theta: int,
    s_y: int,
    rng: RngState,
) -> float:
    """Robust maximum M_q: the q-th nearest-rank quantile of the realized
    per-target losses under the given (converged standard-VI) approximation.
    """
    losses, _ = vi_target_losses(model, data, means, log_scales, l, s_theta, s_y, rng)
    m = empirical_quantile_M(losses, quantile)
    if m <= 0.0:
        raise ValueError(
            f"calibrated robust maximum is not positive (M={m}); the loss "
            "distribution is degenerate at this quantile — raise the quantile "
            "or check the converged run"
        )
    return m
