"""Probabilistic matrix factorization with Gaussian factors and noise.

Latents are every entry of the user matrix Z (n_users x k) and the item
matrix W (k x n_items), flattened as ``[Z.ravel(), W.ravel()]`` — all
identity-supported.

    Z_ul ~ N(0, sigma_z^2)     W_lv ~ N(0, sigma_w^2)
    Y_uv ~ N((Z W)_uv, sigma_y^2)   on observed (training) cells

Prediction targets are matrix cells; the predictive for cell (u, v) is
``(Z W)_uv + sigma_y * delta``.  Minibatching is by user rows: the batch
log-likelihood sum is scaled by n_users / batch_rows, priors stay whole.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..reparam import RngState, SupportTransform, seed_rng
from .base import Batch, ModelSpec, Target

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class MatrixData:
    """Dense value matrix with disjoint boolean train/test cell masks."""

    values: np.ndarray
    train_mask: np.ndarray
    test_mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "train_mask", np.asarray(self.train_mask, dtype=bool))
        object.__setattr__(self, "test_mask", np.asarray(self.test_mask, dtype=bool))
        if not (self.values.shape == self.train_mask.shape == self.test_mask.shape):
            raise ValueError("values and masks must share one shape")
        if self.values.ndim != 2 or self.values.size == 0:
            raise ValueError("matrix data must be a non-empty 2-D array")
        if np.any(self.train_mask & self.test_mask):
            raise ValueError("train and test masks overlap")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def generate_synthetic_matrix(
    n_users: int,
    n_items: int,
    k_true: int,
    sigma_y: float,
    seed: int,
    sigma_z: float = 10.0,
    sigma_w: float = 10.0,
    train_fraction: float = 0.5,
) -> MatrixData:
    """Draw factor matrices from the model priors and split cells at random.

    Every cell lands in exactly one of train/test; the split and the data are
    fully determined by ``seed``.
    """
    if min(n_users, n_items, k_true) < 1:
        raise ValueError("matrix and rank dimensions must be positive")
    if sigma_y <= 0 or sigma_z <= 0 or sigma_w <= 0:
        raise ValueError("noise and prior scales must be positive")
    gen = seed_rng(seed).fork(0x5D47A).generator()
    z = sigma_z * gen.standard_normal((n_users, k_true))
    w = sigma_w * gen.standard_normal((k_true, n_items))
    values = z @ w + sigma_y * gen.standard_normal((n_users, n_items))
    train = gen.random((n_users, n_items)) < train_fraction
    return MatrixData(values=values, train_mask=train, test_mask=~train)


@dataclass(frozen=True)
class _PmfPayload:
    rows: np.ndarray        # user rows in this batch
    y_rows: np.ndarray      # (B, n_items) value slice
    mask_rows: np.ndarray   # (B, n_items) float 0/1 training mask slice
    n_cells: int            # training cells inside the slice
    t_rows: np.ndarray      # per-target user index
    t_cols: np.ndarray      # per-target item index


class PmfModel(ModelSpec):
    def __init__(
        self,
        n_users: int,
        n_items: int,
        k: int,
        sigma_y: float = 10.0,
        sigma_z: float = 10.0,
        sigma_w: float = 10.0,
    ):
        if min(n_users, n_items, k) < 1:
            raise ValueError("matrix and rank dimensions must be positive")
        if sigma_y <= 0 or sigma_z <= 0 or sigma_w <= 0:
            raise ValueError("noise and prior scales must be positive")
        self.n_users = n_users
        self.n_items = n_items
        self.k = k
        self.sigma_y = float(sigma_y)
        self.sigma_z = float(sigma_z)
        self.sigma_w = float(sigma_w)
        self.nz = n_users * k
        self.latent_dim = n_users * k + k * n_items
        self.support_transforms = (SupportTransform.IDENTITY,) * self.latent_dim

    def _factors(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s = theta.shape[0]
        z = theta[:, : self.nz].reshape(s, self.n_users, self.k)
        w = theta[:, self.nz :].reshape(s, self.k, self.n_items)
        return z, w

    # -- log joint ---------------------------------------------------------------

    def log_joint(self, theta: np.ndarray, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        p: _PmfPayload = batch.payload
        z, w = self._factors(theta)
        zb = z[:, p.rows, :]
        m = np.einsum("sbk,ski->sbi", zb, w)
        resid = p.mask_rows[None, :, :] * (p.y_rows[None, :, :] - m)
        sc = batch.likelihood_scale

        loglik = -0.5 * p.n_cells * (_LOG_2PI + 2.0 * np.log(self.sigma_y)) - np.sum(
            resid**2, axis=(1, 2)
        ) / (2.0 * self.sigma_y**2)
        lp_z = -0.5 * self.nz * (_LOG_2PI + 2.0 * np.log(self.sigma_z)) - np.sum(
            z**2, axis=(1, 2)
        ) / (2.0 * self.sigma_z**2)
        lp_w = -0.5 * (self.latent_dim - self.nz) * (
            _LOG_2PI + 2.0 * np.log(self.sigma_w)
        ) - np.sum(w**2, axis=(1, 2)) / (2.0 * self.sigma_w**2)
        value = sc * loglik + lp_z + lp_w

        gz = -z / self.sigma_z**2
        gz[:, p.rows, :] += sc * np.einsum("sbi,ski->sbk", resid, w) / self.sigma_y**2
        gw = sc * np.einsum("sbk,sbi->ski", zb, resid) / self.sigma_y**2 - w / self.sigma_w**2
        s = theta.shape[0]
        return value, np.concatenate([gz.reshape(s, -1), gw.reshape(s, -1)], axis=1)

    # -- predictive --------------------------------------------------------------

    def pred_location(self, theta: np.ndarray, batch: Batch) -> np.ndarray:
        p: _PmfPayload = batch.payload
        z, w = self._factors(theta)
        return np.einsum("stk,skt->st", z[:, p.t_rows, :], w[:, :, p.t_cols])

    def pred_scale(self, batch: Batch) -> np.ndarray:
        return np.full(batch.n_targets, self.sigma_y)

    def pred_location_grad(
        self, theta: np.ndarray, batch: Batch, coef: np.ndarray
    ) -> np.ndarray:
        p: _PmfPayload = batch.payload
        z, w = self._factors(theta)
        s = theta.shape[0]
        tmp_z = coef[:, :, None] * np.swapaxes(w[:, :, p.t_cols], 1, 2)  # (S,T,K)
        gz_t = np.zeros((self.n_users, s, self.k))
        np.add.at(gz_t, p.t_rows, np.swapaxes(tmp_z, 0, 1))
        tmp_w = coef[:, :, None] * z[:, p.t_rows, :]  # (S,T,K)
        gw_t = np.zeros((self.n_items, s, self.k))
        np.add.at(gw_t, p.t_cols, np.swapaxes(tmp_w, 0, 1))
        gz = gz_t.transpose(1, 0, 2).reshape(s, -1)
        gw = gw_t.transpose(1, 2, 0).reshape(s, -1)
        return np.concatenate([gz, gw], axis=1)

    # -- dataset plumbing ----------------------------------------------------------

    def _check(self, data: MatrixData):
        if data.shape != (self.n_users, self.n_items):
            raise ValueError(
                f"data shape {data.shape} does not match model "
                f"({self.n_users}, {self.n_items})"
            )

    def prediction_targets(self, data: MatrixData) -> list[Target]:
        self._check(data)
        rows, cols = np.nonzero(data.train_mask)
        return [
            Target(key=(int(r), int(c)), observed=float(data.values[r, c]))
            for r, c in zip(rows, cols)
        ]

    def eval_targets(self, data: MatrixData) -> list[Target]:
        self._check(data)
        rows, cols = np.nonzero(data.test_mask)
        return [
            Target(key=(int(r), int(c)), observed=float(data.values[r, c]))
            for r, c in zip(rows, cols)
        ]

    def make_batch(self, data: MatrixData, rows: np.ndarray | None = None) -> Batch:
        self._check(data)
        if rows is None:
            rows = np.arange(self.n_users)
        rows = np.asarray(rows, dtype=np.intp)
        in_rows = np.zeros(self.n_users, dtype=bool)
        in_rows[rows] = True
        t_rows, t_cols = np.nonzero(data.train_mask & in_rows[:, None])
        n_total = int(data.train_mask.sum())
        # positions of the batch cells inside the dataset-wide training list
        # (both orderings are row-major, so searchsorted aligns them)
        all_train_flat = np.flatnonzero(data.train_mask)
        batch_flat = t_rows * self.n_items + t_cols
        target_ids = np.searchsorted(all_train_flat, batch_flat)
        return Batch(
            payload=_PmfPayload(
                rows=rows,
                y_rows=data.values[rows],
                mask_rows=data.train_mask[rows].astype(np.float64),
                n_cells=int(data.train_mask[rows].sum()),
                t_rows=t_rows,
                t_cols=t_cols,
            ),
            targets=tuple(
                Target(key=(int(r), int(c)), observed=float(data.values[r, c]))
                for r, c in zip(t_rows, t_cols)
            ),
            observed=data.values[t_rows, t_cols].copy(),
            target_ids=target_ids,
            likelihood_scale=self.n_users / len(rows),
            n_targets_total=n_total,
        )

    def make_eval_batch(self, data: MatrixData) -> Batch:
        self._check(data)
        t_rows, t_cols = np.nonzero(data.test_mask)
        return Batch(
            payload=_PmfPayload(
                rows=np.arange(self.n_users),
                y_rows=data.values,
                mask_rows=data.train_mask.astype(np.float64),
                n_cells=int(data.train_mask.sum()),
                t_rows=t_rows,
                t_cols=t_cols,
            ),
            targets=tuple(
                Target(key=(int(r), int(c)), observed=float(data.values[r, c]))
                for r, c in zip(t_rows, t_cols)
            ),
            observed=data.values[t_rows, t_cols].copy(),
            target_ids=np.arange(t_rows.size),
            likelihood_scale=1.0,
            n_targets_total=max(int(t_rows.size), 1),
        )

    def n_rows(self, data: MatrixData) -> int:
        return self.n_users

    def _single_target_batch(self, target: Target) -> Batch:
        r, c = target.key
        return Batch(
            payload=_PmfPayload(
                rows=np.array([r], dtype=np.intp),
                y_rows=np.zeros((1, self.n_items)),
                mask_rows=np.zeros((1, self.n_items)),
                n_cells=0,
                t_rows=np.array([r], dtype=np.intp),
                t_cols=np.array([c], dtype=np.intp),
            ),
            targets=(target,),
            observed=np.array([target.observed]),
            target_ids=np.array([0]),
            likelihood_scale=1.0,
            n_targets_total=1,
        )
