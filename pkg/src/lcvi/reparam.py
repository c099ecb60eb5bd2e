"""Reparameterization core: seeded noise streams and support transforms.

All randomness in the package flows through :class:`RngState`, a thin frozen
wrapper around numpy's counter-based Philox generator.  A state is a pure
value: every call that receives one derives the same draws, which is what
makes common-random-number finite-difference checks and bit-identical reruns
possible.  Streams are split two ways:

* ``fork(tag, ...)`` derives a new independent key (splitmix64 of the old key
  and the tags) — used for coarse, run-level separation (VI phase vs
  calibration phase vs evaluation).
* ``split(lane, ...)`` sets Philox counter lanes — used for fine, structured
  separation inside a loop (epoch index, purpose index, replicate index).

Distinct keys or distinct counter lanes give non-overlapping streams by the
Philox construction; no sequential draw coupling exists between substreams.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

_MASK64 = (1 << 64) - 1
# Second Philox key word, fixed for the package so user seeds only span lane 0.
_STREAM_SALT = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    """One splitmix64 step; a cheap, well-mixed 64-bit hash."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass(frozen=True)
class RngState:
    """Immutable handle on a Philox substream (key + up to 3 counter lanes)."""

    key: int
    lanes: tuple[int, ...] = ()

    def fork(self, *tags: int) -> "RngState":
        """Derive an independent stream keyed by ``tags`` (lanes reset)."""
        key = self.key
        for t in tags:
            key = _splitmix64(key ^ _splitmix64(int(t) & _MASK64))
        return RngState(key=key)

    def split(self, *lanes: int) -> "RngState":
        """Derive a substream by fixing additional counter lanes."""
        new = self.lanes + tuple(int(v) & _MASK64 for v in lanes)
        if len(new) > 3:
            raise ValueError(
                f"at most 3 counter lanes are available, got {len(new)}; "
                "use fork() for deeper separation"
            )
        return RngState(key=self.key, lanes=new)

    def generator(self) -> np.random.Generator:
        """Fresh numpy Generator positioned at this substream's origin."""
        counter = np.zeros(4, dtype=np.uint64)
        for i, lane in enumerate(self.lanes):
            counter[i + 1] = lane
        key = np.array([self.key, _STREAM_SALT], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=key))

    def normal(self, shape) -> np.ndarray:
        """Standard-normal draws; identical on every call with this state."""
        return self.generator().standard_normal(shape)


def seed_rng(seed: int) -> RngState:
    """Root stream for an integer seed (any Python int; reduced mod 2^64)."""
    return RngState(key=int(seed) & _MASK64)


def standard_normal(state: RngState, n: int) -> np.ndarray:
    """Draw an n-vector of N(0,1) noise from ``state``."""
    if n < 0:
        raise ValueError(f"draw count must be non-negative, got {n}")
    return state.normal(n)


class SupportTransform(Enum):
    """Per-coordinate map from unconstrained space to the model's support."""

    IDENTITY = "identity"
    EXP_POSITIVE = "exp_positive"


def reparameterize(eps: np.ndarray, means: np.ndarray, log_scales: np.ndarray) -> np.ndarray:
    """Location-scale map ``theta = means + exp(log_scales) * eps``.

    Broadcasts over leading sample axes of ``eps``; the trailing axis must
    match the parameter dimension.
    """
    eps = np.asarray(eps, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    log_scales = np.asarray(log_scales, dtype=np.float64)
    if means.shape != log_scales.shape:
        raise ValueError(
            f"means and log_scales disagree: {means.shape} vs {log_scales.shape}"
        )
    if eps.shape[-1:] != means.shape:
        raise ValueError(
            f"noise dimension {eps.shape} does not match parameter dimension {means.shape}"
        )
    return means + np.exp(log_scales) * eps


def constrain(
    theta_u: np.ndarray, transforms: tuple[SupportTransform, ...]
) -> tuple[np.ndarray, float | np.ndarray]:
    """Apply per-coordinate support transforms.

    Returns ``(theta_constrained, log_jacobian)`` where the log-Jacobian is
    the log absolute determinant of the map, summed over coordinates
    (``v`` itself for each EXP_POSITIVE coordinate, 0 for IDENTITY).  Accepts
    a single parameter vector ``(d,)`` or a stack ``(S, d)``; the Jacobian is
    scalar or ``(S,)`` accordingly.
    """
    theta_u = np.asarray(theta_u, dtype=np.float64)
    if theta_u.shape[-1] != len(transforms):
        raise ValueError(
            f"parameter dimension {theta_u.shape[-1]} does not match "
            f"{len(transforms)} transforms"
        )
    pos = positive_mask(transforms)
    theta_c = theta_u.copy()
    if pos.any():
        theta_c[..., pos] = np.exp(theta_u[..., pos])
        log_jac = theta_u[..., pos].sum(axis=-1)
    else:
        log_jac = np.zeros(theta_u.shape[:-1])
    if theta_u.ndim == 1:
        return theta_c, float(log_jac)
    return theta_c, log_jac


def positive_mask(transforms: tuple[SupportTransform, ...]) -> np.ndarray:
    """Boolean mask of EXP_POSITIVE coordinates."""
    return np.array([t is SupportTransform.EXP_POSITIVE for t in transforms], dtype=bool)


def constrain_with_derivative(
    theta_u: np.ndarray, pos: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized constrain for estimators.

    Parameters
    ----------
    theta_u : (S, d) unconstrained draws.
    pos : (d,) boolean mask of EXP_POSITIVE coordinates.

    Returns
    -------
    theta_c : (S, d) constrained draws.
    dtheta : (S, d) elementwise derivative d theta_c / d theta_u.
    log_jac : (S,) summed log-Jacobian per draw.
    """
    theta_c = theta_u.copy()
    dtheta = np.ones_like(theta_u)
    if pos.any():
        e = np.exp(theta_u[:, pos])
        theta_c[:, pos] = e
        dtheta[:, pos] = e
        log_jac = theta_u[:, pos].sum(axis=1)
    else:
        log_jac = np.zeros(theta_u.shape[0])
    return theta_c, dtheta, log_jac
