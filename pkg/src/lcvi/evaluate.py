"""Empirical-risk evaluation, optimization traces, and their CSV form.

Risk here is always the realized average loss of concrete point decisions
against observed values; "decisions" means the per-target minimizers of
expected loss under whatever posterior predictive is being evaluated.  The
same machinery scores a converged run and a mid-run trace row.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .decisions import (
    LossLike,
    LossSpec,
    _nearest_rank_index,
    loss_value,
    optimal_decision,
)
from .models.base import Batch, ModelSpec, sample_predictive
from .reparam import RngState

TRACE_COLUMNS = ("epoch", "elbo", "u_term", "empirical_risk", "wall_seconds")


@dataclass
class RunTrace:
    """Optimization trace: one row per recorded epoch."""

    epochs: list = field(default_factory=list)
    elbo: list = field(default_factory=list)
    u_term: list = field(default_factory=list)
    risk: list = field(default_factory=list)
    wall: list = field(default_factory=list)

    def append(self, epoch: int, elbo: float, u_term: float, risk: float, wall: float):
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValueError(
                f"trace epochs must increase, got {epoch} after {self.epochs[-1]}"
            )
        row = (elbo, u_term, risk, wall)
        if not all(np.isfinite(v) for v in row):
            raise ValueError(f"trace row for epoch {epoch} has non-finite entries: {row}")
        self.epochs.append(int(epoch))
        self.elbo.append(float(elbo))
        self.u_term.append(float(u_term))
        self.risk.append(float(risk))
        self.wall.append(float(wall))

    @property
    def n_rows(self) -> int:
        return len(self.epochs)

    def extend_shifted(self, other: "RunTrace", epoch_offset: int) -> "RunTrace":
        """Concatenate another trace after this one, shifting its epochs."""
        out = RunTrace(
            epochs=list(self.epochs),
            elbo=list(self.elbo),
            u_term=list(self.u_term),
            risk=list(self.risk),
            wall=list(self.wall),
        )
        for i in range(other.n_rows):
            out.append(
                other.epochs[i] + epoch_offset,
                other.elbo[i],
                other.u_term[i],
                other.risk[i],
                other.wall[i],
            )
        return out


def write_trace_csv(trace: RunTrace, path, comments=(), zero_wall: bool = False):
    """Write a trace as CSV with leading ``#`` comment lines.

    ``zero_wall`` replaces the wall-clock column with 0.0 so that reruns of
    the same configuration produce byte-identical files.
    """
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for i in range(trace.n_rows):
            wall = 0.0 if zero_wall else trace.wall[i]
            writer.writerow(
                [
                    trace.epochs[i],
                    repr(trace.elbo[i]),
                    repr(trace.u_term[i]),
                    repr(trace.risk[i]),
                    repr(wall),
                ]
            )


def read_trace_csv(path) -> RunTrace:
    trace = RunTrace()
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise ValueError(f"{path}: not a trace file (header {rows[0] if rows else 'missing'})")
    for r in rows[1:]:
        trace.append(int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]))
    return trace


def batch_optimal_decisions(loss: LossLike, sims: np.ndarray) -> np.ndarray:
    """Row-wise optimal decisions for a (n_targets, n_samples) sample matrix.

    Closed-form losses are vectorized over rows; anything else falls back to
    the scalar per-target search.
    """
    sims = np.asarray(sims, dtype=np.float64)
    if sims.ndim != 2 or sims.shape[1] == 0:
        raise ValueError(f"expected a (targets, samples) matrix, got shape {sims.shape}")
    if isinstance(loss, LossSpec):
        n = sims.shape[1]
        if loss.kind == "squared":
            return sims.mean(axis=1)
        if loss.kind in ("absolute", "tilted"):
            q = 0.5 if loss.kind == "absolute" else loss.q
            k = _nearest_rank_index(n, q)
            return np.sort(sims, axis=1)[:, k]
        if loss.kind == "linex":
            a = -loss.c * sims
            peak = a.max(axis=1)
            lme = peak + np.log(np.exp(a - peak[:, None]).mean(axis=1))
            return -lme / loss.c
        raise ValueError(f"unknown loss kind {loss.kind!r}")
    return np.array([optimal_decision(loss, row) for row in sims])


def posterior_decisions(
    model: ModelSpec,
    batch: Batch,
    means: np.ndarray,
    log_scales: np.ndarray,
    loss: LossLike,
    s_theta: int,
    s_y: int,
    rng: RngState,
) -> np.ndarray:
    """Optimal decision per batch target under the fitted posterior predictive."""
    sims = sample_predictive(model, batch, means, log_scales, s_theta, s_y, rng)
    return batch_optimal_decisions(loss, sims)


def per_target_losses(loss: LossLike, decisions: np.ndarray, observed: np.ndarray) -> np.ndarray:
    decisions = np.asarray(decisions, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if decisions.shape != observed.shape or decisions.ndim != 1 or decisions.size == 0:
        raise ValueError(
            f"decisions {decisions.shape} and observations {observed.shape} must be "
            "matching non-empty vectors"
        )
    return loss_value(loss, observed, decisions)


def empirical_risk(loss: LossLike, decisions: np.ndarray, observed: np.ndarray) -> float:
    """Average realized loss of the decisions against what was observed."""
    return float(per_target_losses(loss, decisions, observed).mean())


def risk_reduction(er_vi: float, er_lcvi: float) -> float:
    """Relative improvement of the calibrated run over the plain one."""
    if not (np.isfinite(er_vi) and np.isfinite(er_lcvi)):
        raise ValueError(f"risks must be finite, got {er_vi} and {er_lcvi}")
    if er_vi <= 0:
        raise ValueError(f"baseline risk must be positive to report a reduction, got {er_vi}")
    return (er_vi - er_lcvi) / er_vi


@dataclass(frozen=True)
class RiskReport:
    """Final comparison between the plain and calibrated posteriors."""

    er_vi: float
    er_lcvi: float
    improvement: float
    per_target_losses_vi: np.ndarray
    per_target_losses_lcvi: np.ndarray

    def to_dict(self) -> dict:
        return {
            "er_vi": self.er_vi,
            "er_lcvi": self.er_lcvi,
            "improvement": self.improvement,
            "per_target_losses_vi": [float(v) for v in self.per_target_losses_vi],
            "per_target_losses_lcvi": [float(v) for v in self.per_target_losses_lcvi],
        }
