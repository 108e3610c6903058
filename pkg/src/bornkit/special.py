"""Real-argument Bessel functions J0, J1, Y0, Y1 and Hankel functions H0(1), H1(1).

Three evaluation regimes are used, all vectorized over numpy arrays:

* ``x <= 4``: ascending power series.
* ``4 < x < 25``: Miller backward recurrence for J_k, normalized with
  ``J0 + 2*sum(J_2k) = 1``; Y0 and Y1 follow from Neumann series in the
  same recurrence values.
* ``x >= 25``: Hankel asymptotic expansion with 20 terms in each of P and Q.
"""

import math

import numpy as np

EULER_GAMMA = 0.57721566490153286061
TWO_OVER_PI = 2.0 / math.pi
_TWO_OVER_PI_LO = -3.935735335036497e-17  # 2/pi - TWO_OVER_PI
_SPLITTER = 134217729.0  # 2^27 + 1

_SERIES_MAX = 4.0
_ASYMPTOTIC_MIN = 25.0
_SERIES_TERMS = 30
_ASYMPTOTIC_TERMS = 20


def _asymptotic_coeffs(order, nterms):
    mu = 4.0 * order * order
    coeffs = [1.0]
    for k in range(1, 2 * nterms):
        coeffs.append(coeffs[-1] * (mu - (2 * k - 1) ** 2) / (k * 8.0))
    return np.array(coeffs)


_A0 = _asymptotic_coeffs(0, _ASYMPTOTIC_TERMS)
_A1 = _asymptotic_coeffs(1, _ASYMPTOTIC_TERMS)


def _two_prod(a, b):
    """``a*b`` as an unevaluated sum ``p + err`` (Dekker's product)."""
    p = a * b
    ca = _SPLITTER * a
    a_hi = ca - (ca - a)
    a_lo = a - a_hi
    cb = _SPLITTER * b
    b_hi = cb - (cb - b)
    b_lo = b - b_hi
    err = ((a_hi * b_hi - p) + a_hi * b_lo + a_lo * b_hi) + a_lo * b_lo
    return p, err


def _two_over_pi_x(x):
    """``2/(pi x)`` in double-double, so the dominant Y1 term near 0 rounds once."""
    q = TWO_OVER_PI / x
    p, err = _two_prod(q, x)
    return q, ((TWO_OVER_PI - p) - err + _TWO_OVER_PI_LO) / x


def _series(x):
    t = 0.25 * x * x
    # term_k = (-t)^k / (k! k!), and the J1 analogue / (k! (k+1)!)
    term0 = np.ones_like(x)
    term1 = np.ones_like(x)
    j0 = term0.copy()
    j1s = term1.copy()
    y0s = np.zeros_like(x)
    harmonic = 0.0
    # psi(k+1) + psi(k+2) = 2 H_k + 1/(k+1) - 2 gamma
    y1s = (1.0 - 2.0 * EULER_GAMMA) * term1
    for k in range(1, _SERIES_TERMS):
        term0 = term0 * (-t) / (k * k)
        term1 = term1 * (-t) / (k * (k + 1))
        harmonic += 1.0 / k
        j0 += term0
        j1s += term1
        y0s -= harmonic * term0
        y1s += (2.0 * harmonic + 1.0 / (k + 1) - 2.0 * EULER_GAMMA) * term1
    half = 0.5 * x
    log_half = np.log(half)
    j1 = half * j1s
    y0 = TWO_OVER_PI * ((log_half + EULER_GAMMA) * j0 + y0s)
    lead, lead_lo = _two_over_pi_x(x)
    y1 = -lead + ((TWO_OVER_PI * log_half * j1 - half * y1s / math.pi) - lead_lo)
    return j0, j1, y0, y1


def _miller(x):
    # fixed start (enough for x < 25) so results do not depend on the batch
    start = 2 * int((_ASYMPTOTIC_MIN + 45.0) / 2.0)
    jk_next = np.zeros_like(x)  # J_{k+1}
    jk = np.full_like(x, 1e-30)  # J_k at k = start
    norm = np.zeros_like(x)
    sum_y0 = np.zeros_like(x)
    sum_y1 = np.zeros_like(x)
    j1 = None
    for k in range(start, 0, -1):
        j_above2 = jk_next
        jk_next, jk = jk, (2.0 * k / x) * jk - jk_next
        m = k - 1  # jk = J_m, jk_next = J_{m+1}, j_above2 = J_{m+2}
        if m % 2:
            half = (m + 1) // 2
            sign = -1.0 if half % 2 else 1.0
            sum_y1 += sign * (jk - j_above2) / half
            if m == 1:
                j1 = jk
        elif m:
            half = m // 2
            sign = -1.0 if half % 2 else 1.0
            norm += 2.0 * jk
            sum_y0 += sign * jk / half
    j0 = jk
    norm += j0
    j0 = j0 / norm
    j1 = j1 / norm
    sum_y0 = sum_y0 / norm
    sum_y1 = sum_y1 / norm
    log_term = np.log(0.5 * x) + EULER_GAMMA
    y0 = TWO_OVER_PI * log_term * j0 - 2.0 * TWO_OVER_PI * sum_y0
    y1 = TWO_OVER_PI * log_term * j1 - TWO_OVER_PI * j0 / x + TWO_OVER_PI * sum_y1
    return j0, j1, y0, y1


def _pq(coeffs, x):
    inv2 = 1.0 / (x * x)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for k in range(_ASYMPTOTIC_TERMS - 1, -1, -1):
        sign = -1.0 if k % 2 else 1.0
        p = p * inv2 + sign * coeffs[2 * k]
        q = q * inv2 + sign * coeffs[2 * k + 1]
    return p, q / x


def _asymptotic(x):
    amp = np.sqrt(TWO_OVER_PI / x)
    c = np.cos(x)
    s = np.sin(x)
    r = math.sqrt(0.5)
    p0, q0 = _pq(_A0, x)
    p1, q1 = _pq(_A1, x)
    # phase x - pi/4 for order 0, x - 3pi/4 for order 1
    cos0, sin0 = r * (c + s), r * (s - c)
    cos1, sin1 = r * (s - c), -r * (s + c)
    j0 = amp * (p0 * cos0 - q0 * sin0)
    y0 = amp * (p0 * sin0 + q0 * cos0)
    j1 = amp * (p1 * cos1 - q1 * sin1)
    y1 = amp * (p1 * sin1 + q1 * cos1)
    return j0, j1, y0, y1


def bessel_all(x):
    """Return ``(J0, J1, Y0, Y1)`` at positive ``x``.

    ``x`` may be a scalar or an array; all results share its shape.
    Y values at ``x == 0`` are ``-inf``; callers that need a domain check
    should use :func:`bessel_y` or :func:`hankel1`.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("Bessel argument must be finite")
    if np.any(x < 0):
        raise ValueError("Bessel argument must be nonnegative")
    flat = x.ravel()
    out = [np.empty_like(flat) for _ in range(4)]
    zero = flat == 0
    small = (flat <= _SERIES_MAX) & ~zero
    large = flat >= _ASYMPTOTIC_MIN
    mid = ~(zero | small | large)
    for mask, fn in ((small, _series), (mid, _miller), (large, _asymptotic)):
        if np.any(mask):
            for dst, val in zip(out, fn(flat[mask])):
                dst[mask] = val
    if np.any(zero):
        out[0][zero] = 1.0
        out[1][zero] = 0.0
        out[2][zero] = -np.inf
        out[3][zero] = -np.inf
    return tuple(o.reshape(x.shape) if x.ndim else o[0] for o in out)


def _check_order(order):
    if order not in (0, 1):
        raise ValueError(f"only orders 0 and 1 are supported, got {order!r}")


def bessel_j(order, x):
    """Bessel function of the first kind J_order(x) for x >= 0."""
    _check_order(order)
    return bessel_all(x)[order]


def bessel_y(order, x):
    """Bessel function of the second kind Y_order(x) for x > 0."""
    _check_order(order)
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("Y_n(x) is singular for x <= 0")
    return bessel_all(x)[2 + order]


def hankel1(order, x):
    """Hankel function of the first kind H_order^(1)(x) = J + jY for x > 0."""
    _check_order(order)
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("H_n^(1)(x) is singular for x <= 0")
    vals = bessel_all(x)
    return vals[order] + 1j * vals[2 + order]
