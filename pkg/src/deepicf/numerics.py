"""Deterministic numeric kernels: stable sigmoid and log loss, the
beta-smoothed softmax used by attention pooling, seeded RNG plumbing, and
a central finite-difference helper that serves as the gradient oracle in
the test suite.

Everything here is a pure function of its inputs; all arithmetic is done
in 64-bit floats.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

__all__ = [
    "sigmoid",
    "bce_from_logit",
    "softmax_beta",
    "softmax_beta_vjp",
    "relu",
    "finite_diff_grad",
    "rng_from_seed",
]

# exp() saturation bounds for float64: exp(710) overflows, exp(-746) is 0.0
_LOG_HUGE = 709.0
_LOG_TINY = -745.0

# nearest representable neighbours of the open interval (0, 1)
_SIGMOID_LO = float(np.nextafter(0.0, 1.0))
_SIGMOID_HI = float(np.nextafter(1.0, 0.0))

# threshold below which exp(scores) is evaluated directly; see softmax_beta
_DIRECT_SCORE_BOUND = 30.0

_MASK64 = (1 << 64) - 1


def sigmoid(x):
    """Numerically stable logistic function with values in the open (0, 1).

    Only exp(-|x|) is ever evaluated, so no overflow occurs for any finite
    input. Results that would round to exactly 0.0 or 1.0 are nudged to the
    nearest representable neighbour so that downstream logarithms stay
    finite. Accepts scalars or arrays.
    """
    arr = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(arr))
    out = np.where(arr >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))
    out = np.clip(out, _SIGMOID_LO, _SIGMOID_HI)
    if arr.ndim == 0:
        return float(out)
    return out


def bce_from_logit(logit, label):
    """Binary cross-entropy of a raw logit against a 0/1 label.

    Returns ``(loss, dloss_dlogit)``. The loss uses the stable form
    ``max(x, 0) - x*y + log1p(exp(-|x|))`` and the gradient is exactly
    ``sigmoid(logit) - label``.
    """
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    x = float(logit)
    if not math.isfinite(x):
        raise ValueError(f"logit must be finite, got {x!r}")
    loss = max(x, 0.0) - x * label + math.log1p(math.exp(-abs(x)))
    return loss, sigmoid(x) - label


def softmax_beta(scores, beta):
    """Softmax variant whose denominator is raised to ``beta`` in [0, 1].

    Computes ``w_t = exp(s_t) / (sum_u exp(s_u)) ** beta``. With beta=1
    this is the standard softmax (evaluated with the usual max-shift, which
    is exact there); with beta=0 the denominator is exactly 1 and the
    result is elementwise exp.

    For beta < 1 the max-shift trick is *not* an identity, so the exact
    convention is: when max|s| <= 30 the formula is evaluated directly in
    float64 (no shift, no bias); for larger scores it falls back to the
    log-domain form ``exp(s_t - beta * logsumexp(s))``, which is the
    shift-consistent rewrite of the same quantity, with the final exponent
    clamped to the float64-representable range so the output stays finite
    (the clamp only engages where the true value over- or underflows).
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("scores must be a non-empty 1-D array")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta!r}")
    if beta == 1.0:
        e = np.exp(s - s.max())
        return e / e.sum()
    if np.abs(s).max() <= _DIRECT_SCORE_BOUND:
        e = np.exp(s)
        return e / e.sum() ** beta
    m = s.max()
    lse = m + math.log(np.exp(s - m).sum())
    return np.exp(np.clip(s - beta * lse, _LOG_TINY, _LOG_HUGE))


def softmax_beta_vjp(scores, beta, d_weights):
    """Vector-Jacobian product of :func:`softmax_beta` at ``scores``.

    With ``w = softmax_beta(s, beta)`` and ``g = softmax(s)`` the Jacobian
    is ``dw_t/ds_r = w_t * (delta_tr - beta * g_r)``: the beta exponent on
    the shared denominator couples every weight to every score. Returns
    the gradient with respect to the scores given a cotangent on the
    weights.
    """
    s = np.asarray(scores, dtype=np.float64)
    d = np.asarray(d_weights, dtype=np.float64)
    w = softmax_beta(s, beta)
    e = np.exp(s - s.max())
    g = e / e.sum()
    return w * d - beta * g * float(np.dot(d, w))


def relu(x):
    """Rectifier max(x, 0). The derivative at 0 is taken to be 0."""
    return np.maximum(x, 0.0)


def finite_diff_grad(f, theta, h=1e-5):
    """Central-difference gradient of a scalar function of a 1-D vector.

    Evaluates ``(f(theta + h*e_t) - f(theta - h*e_t)) / (2h)`` one
    coordinate at a time. Raises if any function value is non-finite.
    Intended as an independent oracle for analytic gradients in tests.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise ValueError("theta must be a 1-D vector")
    if not h > 0:
        raise ValueError(f"h must be positive, got {h!r}")
    work = theta.copy()
    grad = np.empty_like(work)
    for t in range(work.size):
        orig = work[t]
        work[t] = orig + h
        fp = float(f(work))
        work[t] = orig - h
        fm = float(f(work))
        work[t] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError(f"f is non-finite near coordinate {t}")
        grad[t] = (fp - fm) / (2.0 * h)
    return grad


def _label_entropy(label):
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK64
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_from_seed(seed, *labels):
    """Deterministic generator for ``seed`` plus an optional substream label.

    The same (seed, labels) pair always yields an identical stream;
    distinct labels give independent substreams, which is how the split,
    initialization, and per-epoch shuffles stay decoupled.
    """
    entropy = [int(seed) & _MASK64] + [_label_entropy(lab) for lab in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))
