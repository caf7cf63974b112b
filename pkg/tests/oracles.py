"""Independent reference implementations used only by the tests.

Nothing here imports the package's numerical code paths.
"""

import math

import mpmath


def matmul_loop(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    out = [[0.0] * cols for _ in range(rows)]
    for i in range(rows):
        for j in range(cols):
            s = 0.0
            for k in range(inner):
                s += float(a[i][k]) * float(b[k][j])
            out[i][j] = s
    return out


def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def lstm_cell_scalar(x, h, c, W, U, b):
    """One LSTM step with explicit loops.

    ``W`` is ``(input, 4*hidden)``, ``U`` is ``(hidden, 4*hidden)`` and ``b`` is
    ``(4*hidden,)`` in gate order i, f, g, o.
    """
    n = len(h)
    pre = []
    for j in range(4 * n):
        s = float(b[j])
        for k in range(len(x)):
            s += float(x[k]) * float(W[k][j])
        for k in range(n):
            s += float(h[k]) * float(U[k][j])
        pre.append(s)
    h_new, c_new = [], []
    for j in range(n):
        i = _sigmoid(pre[j])
        f = _sigmoid(pre[n + j])
        g = math.tanh(pre[2 * n + j])
        o = _sigmoid(pre[3 * n + j])
        cj = f * float(c[j]) + i * g
        c_new.append(cj)
        h_new.append(o * math.tanh(cj))
    return h_new, c_new


def errors_streaming(pred, truth):
    """Single-pass RMSE, MAE and MAPE (percent, zero truth skipped)."""
    sq = ab = ap = 0.0
    n = m = 0
    for p, t in zip(pred, truth):
        e = float(p) - float(t)
        sq += e * e
        ab += abs(e)
        n += 1
        if t != 0:
            ap += abs(e) / abs(float(t))
            m += 1
    return math.sqrt(sq / n), ab / n, 100.0 * ap / m


def rmse_two_pass(pred, truth):
    diffs = [float(p) - float(t) for p, t in zip(pred, truth)]
    return math.sqrt(math.fsum(d * d for d in diffs) / len(diffs))


def t_quantile(p, df, dps=40):
    """Student-t quantile by bisection on the regularized incomplete beta CDF."""
    mpmath.mp.dps = dps
    p = mpmath.mpf(p)
    nu = mpmath.mpf(df)

    def cdf(t):
        x = nu / (nu + t * t)
        tail = mpmath.betainc(nu / 2, mpmath.mpf(1) / 2, 0, x, regularized=True) / 2
        return 1 - tail if t > 0 else tail

    lo, hi = mpmath.mpf(-50), mpmath.mpf(50)
    for _ in range(200):
        mid = (lo + hi) / 2
        if cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return float((lo + hi) / 2)


def z_quantile(p, dps=40):
    mpmath.mp.dps = dps
    return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(p) - 1))
