"""Independent oracles used to pin expected values in the tests.

These deliberately avoid the production code paths: entries of the
asymptotic covariance are rebuilt as an explicit lag-weighted double sum,
the variance contraction is a second literal transcription with its own
realized covariance, classic Holm works on p-values, and the normal
quantile comes from mpmath's inverse error function.
"""

import math

import numpy as np


def lag_weight_matrix(n):
    """Weights rho(|h - h'|) with rho(0)=1, rho(1)=-1/2, rho(>=2)=0."""
    w = np.zeros((n, n))
    for h in range(n):
        for hp in range(n):
            lag = abs(h - hp)
            if lag == 0:
                w[h, hp] = 1.0
            elif lag == 1:
                w[h, hp] = -0.5
    return w


def chat_brute(dy, ij, kl, w=None):
    """Brute-force double sum n * sum_{h,h'} rho(|h-h'|) x_h y_h'."""
    n = dy.shape[1]
    if w is None:
        w = lag_weight_matrix(n)
    x = dy[ij[0]] * dy[ij[1]]
    y = dy[kl[0]] * dy[kl[1]]
    return n * float(x @ w @ y)


def chat_brute_scalar(dy, ij, kl):
    """Fully scalar variant of :func:`chat_brute` (no linear algebra at all)."""
    n = dy.shape[1]
    total = 0.0
    for h in range(n):
        for hp in range(n):
            lag = abs(h - hp)
            if lag > 1:
                continue
            weight = 1.0 if lag == 0 else -0.5
            total += weight * dy[ij[0], h] * dy[ij[1], h] * dy[kl[0], hp] * dy[kl[1], hp]
    return n * total


def vhat_transcription(dy, i, j):
    """Literal term-by-term transcription of the 10-term variance display.

    Uses its own realized covariance and brute-force covariance entries,
    fully independent of the estimators module.
    """
    rc = dy @ dy.T
    f = dy.shape[0] - 1
    w = lag_weight_matrix(dy.shape[1])

    def c(p, q):
        return chat_brute(dy, p, q, w)

    return (
        rc[j, f] ** 2 * c((i, f), (i, f))
        + rc[i, f] ** 2 * c((j, f), (j, f))
        + rc[i, j] ** 2 * c((f, f), (f, f))
        + rc[f, f] ** 2 * c((i, j), (i, j))
        + 2.0 * rc[f, f] * rc[i, j] * c((i, j), (f, f))
        + 2.0 * rc[i, f] * rc[j, f] * c((i, f), (j, f))
        - 2.0 * rc[i, f] * rc[f, f] * c((i, j), (j, f))
        - 2.0 * rc[j, f] * rc[f, f] * c((i, j), (i, f))
        - 2.0 * rc[i, j] * rc[i, f] * c((j, f), (f, f))
        - 2.0 * rc[i, j] * rc[j, f] * c((i, f), (f, f))
    )


def classic_holm(pvals, alpha):
    """Textbook Holm step-down on p-values; returns the rejection mask."""
    pvals = np.asarray(pvals, dtype=float)
    m = pvals.size
    order = np.argsort(pvals, kind="stable")
    rejected = np.zeros(m, dtype=bool)
    for k, idx in enumerate(order):
        if pvals[idx] <= alpha / (m - k):
            rejected[idx] = True
        else:
            break
    return rejected


def two_sided_p(stat):
    """Two-sided standard normal p-value via erfc (no scipy)."""
    return math.erfc(abs(stat) / math.sqrt(2.0))


def normal_quantile_mp(p, dps=50):
    """High-precision standard normal quantile via mpmath's inverse erf."""
    import mpmath

    with mpmath.workdps(dps):
        return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(p) - 1))


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)
