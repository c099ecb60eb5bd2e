"""Hierarchical normal model for the eight-schools study.

Latent vector (unconstrained order): ``[mu, log tau, theta_1 .. theta_J]``.

    mu      ~ N(0, 5^2)
    tau     ~ half-Cauchy(0, 5)         (sampled as log tau, ExpPositive)
    theta_j ~ N(mu, tau^2)
    y_j     ~ N(theta_j, sigma_j^2)     sigma_j known per school

The predictive for school j re-observes it: y = theta_j + sigma_j * delta.
Decisions are evaluated against the training observations themselves.
"""

from __future__ import annotations

import csv
import importlib.resources
from dataclasses import dataclass

import numpy as np

from ..reparam import SupportTransform
from .base import Batch, ModelSpec, Target

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class EightSchoolsData:
    """Observed effects and their known standard errors."""

    y: np.ndarray
    sigma: np.ndarray
    school: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.float64))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=np.float64))
        if self.y.shape != self.sigma.shape or self.y.ndim != 1 or self.y.size == 0:
            raise ValueError("y and sigma must be matching non-empty vectors")
        if not np.all(self.sigma > 0):
            raise ValueError("every school standard error must be positive")

    @property
    def n_schools(self) -> int:
        return self.y.size


def load_eight_schools(path: str | None = None) -> EightSchoolsData:
    """Load a ``school,y,sigma`` CSV; the bundled canonical data by default."""
    if path is None:
        ref = importlib.resources.files("lcvi").joinpath("data/eight_schools.csv")
        with ref.open("r", encoding="utf-8") as fh:
            return _parse_schools_csv(fh)
    with open(path, "r", encoding="utf-8") as fh:
        return _parse_schools_csv(fh)


def _parse_schools_csv(fh) -> EightSchoolsData:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or [c.strip() for c in header] != ["school", "y", "sigma"]:
        raise ValueError(f"expected header 'school,y,sigma', got {header}")
    names, ys, sigmas = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ValueError(f"line {lineno}: expected 3 fields, got {len(row)}")
        try:
            names.append(row[0].strip())
            ys.append(float(row[1]))
            sigmas.append(float(row[2]))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return EightSchoolsData(y=np.array(ys), sigma=np.array(sigmas), school=tuple(names))


@dataclass(frozen=True)
class _SchoolsPayload:
    y: np.ndarray
    sigma: np.ndarray
    coord: np.ndarray  # latent coordinate of theta_j for each batch target


class EightSchoolsModel(ModelSpec):
    def __init__(self, data: EightSchoolsData):
        self.data = data
        j = data.n_schools
        self.latent_dim = 2 + j
        self.support_transforms = (
            SupportTransform.IDENTITY,
            SupportTransform.EXP_POSITIVE,
        ) + (SupportTransform.IDENTITY,) * j
        # fixed hyperpriors
        self.mu_scale = 5.0
        self.tau_scale = 5.0

    # -- log joint ---------------------------------------------------------------

    def log_joint(self, theta: np.ndarray, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        p: _SchoolsPayload = batch.payload
        y, sigma = p.y, p.sigma
        j = y.size
        mu = theta[:, 0]
        tau = theta[:, 1]
        th = theta[:, 2:]
        s = batch.likelihood_scale

        resid_y = (y[None, :] - th) / sigma[None, :] ** 2
        loglik = -0.5 * np.sum(
            _LOG_2PI + 2.0 * np.log(sigma)[None, :] + ((y[None, :] - th) / sigma[None, :]) ** 2,
            axis=1,
        )
        dev = th - mu[:, None]
        lp_theta = -0.5 * j * _LOG_2PI - j * np.log(tau) - np.sum(dev**2, axis=1) / (
            2.0 * tau**2
        )
        lp_mu = -0.5 * (_LOG_2PI + 2.0 * np.log(self.mu_scale)) - mu**2 / (
            2.0 * self.mu_scale**2
        )
        lp_tau = np.log(2.0 / (np.pi * self.tau_scale)) - np.log1p((tau / self.tau_scale) ** 2)

        value = s * loglik + lp_theta + lp_mu + lp_tau

        grads = np.zeros_like(theta)
        grads[:, 0] = np.sum(dev, axis=1) / tau**2 - mu / self.mu_scale**2
        grads[:, 1] = (
            -j / tau
            + np.sum(dev**2, axis=1) / tau**3
            - 2.0 * tau / (self.tau_scale**2 + tau**2)
        )
        grads[:, 2:] = s * resid_y - dev / tau[:, None] ** 2
        return value, grads

    # -- predictive --------------------------------------------------------------

    def pred_location(self, theta: np.ndarray, batch: Batch) -> np.ndarray:
        return theta[:, batch.payload.coord]

    def pred_scale(self, batch: Batch) -> np.ndarray:
        return batch.payload.sigma

    def pred_location_grad(
        self, theta: np.ndarray, batch: Batch, coef: np.ndarray
    ) -> np.ndarray:
        g_t = np.zeros((self.latent_dim, theta.shape[0]))
        np.add.at(g_t, batch.payload.coord, coef.T)
        return g_t.T

    # -- dataset plumbing ----------------------------------------------------------

    def prediction_targets(self, data: EightSchoolsData) -> list[Target]:
        return [Target(key=(i,), observed=float(data.y[i])) for i in range(data.n_schools)]

    def make_batch(self, data: EightSchoolsData, rows: np.ndarray | None = None) -> Batch:
        # the study is always full-batch: rows are ignored by construction
        idx = np.arange(data.n_schools)
        return self._batch_for(data, idx)

    def make_eval_batch(self, data: EightSchoolsData) -> Batch:
        return self.make_batch(data)

    def n_rows(self, data: EightSchoolsData) -> int:
        return data.n_schools

    def _batch_for(self, data: EightSchoolsData, idx: np.ndarray) -> Batch:
        targets = tuple(Target(key=(int(i),), observed=float(data.y[i])) for i in idx)
        payload = _SchoolsPayload(y=data.y[idx], sigma=data.sigma[idx], coord=idx + 2)
        return Batch(
            payload=payload,
            targets=targets,
            observed=data.y[idx].copy(),
            target_ids=idx.copy(),
            likelihood_scale=1.0,
            n_targets_total=data.n_schools,
        )

    def _single_target_batch(self, target: Target) -> Batch:
        return self._batch_for(self.data, np.array([target.key[0]]))
