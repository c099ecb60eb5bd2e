"""Shared finite-difference machinery for gradient tests.

Every estimator in the package draws its noise from an explicit RngState,
so a common-random-number check needs no plumbing: re-evaluating at a
perturbed input with the *same* state reuses the same noise, and the
difference quotient converges to the analytic gradient of the realized
(noisy) objective, not just of its expectation.
"""

import numpy as np


def central_difference(f, x, step=1e-5):
    """Per-coordinate central differences of a scalar function at ``x``.

    ``f`` must be deterministic (fix the RngState in the closure).
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return g


def relative_error(analytic, numeric):
    """Norm-relative deviation, guarded for small gradients.

    ||a - n|| / max(||a||, ||n||, 1e-8); two exact zeros compare as 0.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / denom)


def assert_gradients_match(f, x, analytic, step=1e-5, tol=1e-4, label=""):
    numeric = central_difference(f, x, step=step)
    err = relative_error(analytic, numeric)
    assert err < tol, (
        f"{label or 'gradient'} check failed: relative error {err:.3e} >= {tol:.0e}\n"
        f"analytic: {np.asarray(analytic).ravel()[:8]}\n"
        f"numeric:  {numeric.ravel()[:8]}"
    )
