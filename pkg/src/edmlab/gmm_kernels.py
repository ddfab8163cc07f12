"""EM inner loops for the 1-D Gaussian mixture, in two interchangeable forms.

The compiled path wraps the iteration in a numba ``@njit`` kernel; the
fallback is vectorized numpy.  Both start from the same deterministic
initial parameters (computed on the numpy side) and run the same update
equations:

* E-step in log space: per-sample, per-component log densities, a row-wise
  log-sum-exp for the likelihood, and normalized responsibilities.
* M-step: closed-form weight/mean/variance updates, variances floored;
  components whose responsibility mass vanishes keep their old mean and
  variance instead of dividing by ~0.

Path selection happens at call time: numba is used when it imported
successfully and the environment variable ``EDM_NO_NUMBA`` is unset/empty.
``benchmarks/bench_gmm.py`` compares the two.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


_LOG_2PI = float(np.log(2.0 * np.pi))
_WEIGHT_FLOOR = 1e-300
_DEAD_MASS = 1e-12


def use_compiled_kernel() -> bool:
    """True when the numba path is active for this call."""
    return HAVE_NUMBA and not os.environ.get("EDM_NO_NUMBA")


def init_params(x: np.ndarray, num_components: int,
                variance_floor: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic starting point shared by both kernel paths.

    Means sit at the ``num_components`` evenly spaced quantiles (midpoints
    of equal probability bands), variances all start at the data variance
    split across components (floored), weights uniform.
    """
    psi = num_components
    qs = (np.arange(psi, dtype=np.float64) + 0.5) / psi
    means = np.quantile(x, qs)
    var0 = max(float(x.var()) / psi, variance_floor)
    variances = np.full(psi, var0, dtype=np.float64)
    weights = np.full(psi, 1.0 / psi, dtype=np.float64)
    return weights, means, variances


def _loglik_resp_numpy(x, weights, means, variances):
    # per-component constants are hoisted out of the per-sample work
    log_const = (np.log(np.maximum(weights, _WEIGHT_FLOOR))
                 - 0.5 * (_LOG_2PI + np.log(variances)))
    inv_two_var = 0.5 / variances
    logp = log_const[None, :] \
        - (x[:, None] - means[None, :]) ** 2 * inv_two_var[None, :]
    top = logp.max(axis=1, keepdims=True)
    resp = np.exp(logp - top)
    norm = resp.sum(axis=1)
    ll = float((top[:, 0] + np.log(norm)).sum())
    resp /= norm[:, None]
    return ll, resp


def em_numpy(x, weights, means, variances, max_iters, tol, variance_floor):
    """Vectorized numpy EM; returns (weights, means, variances, trace)."""
    n = x.shape[0]
    weights = weights.copy()
    means = means.copy()
    variances = variances.copy()
    ll, resp = _loglik_resp_numpy(x, weights, means, variances)
    trace = [ll]
    for _ in range(max_iters):
        nk = resp.sum(axis=0)
        alive = nk > _DEAD_MASS
        new_means = means.copy()
        new_vars = variances.copy()
        safe_nk = np.where(alive, nk, 1.0)
        new_means[alive] = ((resp * x[:, None]).sum(axis=0) / safe_nk)[alive]
        sq = (resp * (x[:, None] - new_means[None, :]) ** 2).sum(axis=0) / safe_nk
        new_vars[alive] = np.maximum(sq, variance_floor)[alive]
        weights = nk / n
        means = new_means
        variances = new_vars

        ll, resp = _loglik_resp_numpy(x, weights, means, variances)
        trace.append(ll)
        if ll - trace[-2] < tol:
            break
    return weights, means, variances, np.asarray(trace, dtype=np.float64)


@njit(cache=True)
def _estep_numba(x, weights, means, variances, resp,
                 log_const, inv_two_var, t):  # pragma: no cover - compiled
    """Fill ``resp`` in place; return the data log-likelihood."""
    n = x.shape[0]
    psi = means.shape[0]
    for k in range(psi):
        w = weights[k]
        if w < _WEIGHT_FLOOR:
            w = _WEIGHT_FLOOR
        log_const[k] = np.log(w) - 0.5 * (_LOG_2PI + np.log(variances[k]))
        inv_two_var[k] = 0.5 / variances[k]
    ll = 0.0
    for i in range(n):
        top = -1e308
        for k in range(psi):
            d = x[i] - means[k]
            t[k] = log_const[k] - d * d * inv_two_var[k]
            if t[k] > top:
                top = t[k]
        s = 0.0
        for k in range(psi):
            t[k] = np.exp(t[k] - top)
            s += t[k]
        ll += top + np.log(s)
        for k in range(psi):
            resp[i, k] = t[k] / s
    return ll


@njit(cache=True)
def _em_numba_kernel(x, weights, means, variances, max_iters, tol,
                     variance_floor):  # pragma: no cover - measured via wrapper
    n = x.shape[0]
    psi = means.shape[0]
    resp = np.empty((n, psi))
    log_const = np.empty(psi)
    inv_two_var = np.empty(psi)
    t = np.empty(psi)
    trace = np.empty(max_iters + 1)

    trace[0] = _estep_numba(x, weights, means, variances, resp,
                            log_const, inv_two_var, t)
    steps = 0
    nk = np.empty(psi)
    sx = np.empty(psi)
    sq = np.empty(psi)
    for it in range(max_iters):
        # M-step: accumulate in sample-major order for contiguous access
        for k in range(psi):
            nk[k] = 0.0
            sx[k] = 0.0
            sq[k] = 0.0
        for i in range(n):
            for k in range(psi):
                nk[k] += resp[i, k]
                sx[k] += resp[i, k] * x[i]
        for k in range(psi):
            if nk[k] > _DEAD_MASS:
                means[k] = sx[k] / nk[k]
        for i in range(n):
            for k in range(psi):
                d = x[i] - means[k]
                sq[k] += resp[i, k] * d * d
        for k in range(psi):
            if nk[k] > _DEAD_MASS:
                var = sq[k] / nk[k]
                if var < variance_floor:
                    var = variance_floor
                variances[k] = var
            weights[k] = nk[k] / n

        steps = it + 1
        trace[steps] = _estep_numba(x, weights, means, variances, resp,
                                    log_const, inv_two_var, t)
        if trace[steps] - trace[steps - 1] < tol:
            break
    return weights, means, variances, trace[:steps + 1]


def em_numba(x, weights, means, variances, max_iters, tol, variance_floor):
    """Compiled EM; same contract as :func:`em_numpy`."""
    return _em_numba_kernel(x, weights.copy(), means.copy(), variances.copy(),
                            max_iters, tol, variance_floor)


def run_em(x, num_components, max_iters, tol, variance_floor):
    """Initialize deterministically, then run the selected kernel path."""
    weights, means, variances = init_params(x, num_components, variance_floor)
    kernel = em_numba if use_compiled_kernel() else em_numpy
    return kernel(x, weights, means, variances, max_iters, tol, variance_floor)
