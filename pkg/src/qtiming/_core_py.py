"""Pure-Python implementation of the estimation kernels.

Mirrors ``_core.pyx`` operation for operation; it is what runs when the
compiled extension is unavailable and the reference the extension is
tested against.

Forward models (``forward``): 0 exact overlaps with a real 4x4 projector
matrix, 1 ten-term response polynomial (4x10 coefficients).
Losses (``loss``): 0 multinomial deviance over five outcomes, 1 binomial
deviance per channel (sequential counting, ``data[4]`` trials each),
2 weighted least squares ``sum w_k (o_k - p_k)^2``.
"""
import math

PENALTY = 1e300

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT3 = 1.0 / math.sqrt(3.0)


def _tail4(x):
    # 1 - exp(-x) (1 + x + x^2/2 + x^3/6), accurate for small x
    if x < 1.0:
        term = math.exp(-x) * x * x * x * x / 24.0
        total = 0.0
        n = 4
        while term > 1e-18 * total and n < 60:
            total += term
            n += 1
            term *= x / n
        return total + term
    return 1.0 - math.exp(-x) * (1.0 + x + 0.5 * x * x + x * x * x / 6.0)


def probabilities(theta, forward, fparams, eta, complete):
    """Five outcome probabilities (sink last) at dimensionless ``theta``."""
    t0, tau, q = theta[0], theta[1], theta[2]
    out = [0.0] * 5
    if forward == 0:
        da = 0.5 * (t0 - 0.5 * tau)
        db = 0.5 * (t0 + 0.5 * tau)
        a0 = math.exp(-0.5 * da * da)
        a1 = a0 * da
        a2 = a1 * da * _INV_SQRT2
        a3 = a2 * da * _INV_SQRT3
        b0 = math.exp(-0.5 * db * db)
        b1 = b0 * db
        b2 = b1 * db * _INV_SQRT2
        b3 = b2 * db * _INV_SQRT3
        total = 0.0
        for j in range(4):
            row = fparams[j]
            alpha = row[0] * a0 + row[1] * a1 + row[2] * a2 + row[3] * a3
            beta = row[0] * b0 + row[1] * b1 + row[2] * b2 + row[3] * b3
            pj = eta * (q * alpha * alpha + (1.0 - q) * beta * beta)
            out[j] = pj
            total += pj
        if complete:
            out[4] = (1.0 - eta) + eta * (q * _tail4(da * da) + (1.0 - q) * _tail4(db * db))
        else:
            out[4] = 1.0 - total
    else:
        f = (1.0, t0, tau, q, t0 * t0, t0 * tau, t0 * q, tau * tau, tau * q, t0 * tau * q)
        total = 0.0
        for j in range(4):
            row = fparams[j]
            pj = 0.0
            for k in range(10):
                pj += row[k] * f[k]
            out[j] = pj
            total += pj
        out[4] = 1.0 - total
    return out


def objective(theta, forward, fparams, eta, complete, loss, data, weights):
    p = probabilities(theta, forward, fparams, eta, complete)
    value = 0.0
    if loss == 0:
        n_tot = data[0] + data[1] + data[2] + data[3] + data[4]
        for k in range(5):
            n = data[k]
            if n > 0:
                if p[k] <= 0.0:
                    return PENALTY
                value += n * math.log(n / (n_tot * p[k]))
    elif loss == 1:
        m = data[4]
        for k in range(4):
            n = data[k]
            pk = p[k]
            if n > 0:
                if pk <= 0.0:
                    return PENALTY
                value += n * math.log(n / (m * pk))
            if m - n > 0:
                if pk >= 1.0:
                    return PENALTY
                value += (m - n) * math.log((m - n) / (m * (1.0 - pk)))
    else:
        for k in range(5):
            r = data[k] - p[k]
            value += weights[k] * r * r
    return value


def evaluate_many(points, forward, fparams, eta, complete, loss, data, weights):
    return [objective(pt, forward, fparams, eta, complete, loss, data, weights) for pt in points]


def _clip(x, lo, hi):
    return [min(max(v, a), b) for v, a, b in zip(x, lo, hi)]


def nelder_mead(fun, x0, lo, hi, max_iter=500, xtol=1e-10, ftol=1e-12):
    """Box-projected Nelder-Mead on three variables.

    Every trial point is clipped into ``[lo, hi]``. The initial simplex steps
    5 % of the box width along each axis (inwards at an upper bound). Stops
    when both the spread of function values
    (``<= ftol * (1 + |f_best|)``) and the simplex diameter (``<= xtol``)
    are small. Returns ``(x, f, iterations, converged)``.
    """
    n = len(x0)
    x0 = _clip(list(x0), lo, hi)
    simplex = [x0]
    for i in range(n):
        step = 0.05 * (hi[i] - lo[i])
        if step == 0.0:
            step = 1e-3
        y = list(x0)
        y[i] = y[i] + step if y[i] + step <= hi[i] else y[i] - step
        simplex.append(_clip(y, lo, hi))
    values = [fun(v) for v in simplex]

    it = 0
    converged = False
    while it < max_iter:
        order = sorted(range(n + 1), key=lambda k: values[k])
        simplex = [simplex[k] for k in order]
        values = [values[k] for k in order]
        f_best = values[0]
        spread = values[-1] - f_best
        diam = 0.0
        for k in range(1, n + 1):
            for i in range(n):
                diam = max(diam, abs(simplex[k][i] - simplex[0][i]))
        if spread <= ftol * (1.0 + abs(f_best)) and diam <= xtol:
            converged = True
            break
        it += 1

        centroid = [sum(simplex[k][i] for k in range(n)) / n for i in range(n)]
        worst = simplex[n]
        xr = _clip([2.0 * centroid[i] - worst[i] for i in range(n)], lo, hi)
        fr = fun(xr)
        if fr < values[0]:
            xe = _clip([3.0 * centroid[i] - 2.0 * worst[i] for i in range(n)], lo, hi)
            fe = fun(xe)
            if fe < fr:
                simplex[n], values[n] = xe, fe
            else:
                simplex[n], values[n] = xr, fr
            continue
        if fr < values[n - 1]:
            simplex[n], values[n] = xr, fr
            continue
        if fr < values[n]:
            xc = _clip([centroid[i] + 0.5 * (xr[i] - centroid[i]) for i in range(n)], lo, hi)
            fc = fun(xc)
            if fc <= fr:
                simplex[n], values[n] = xc, fc
                continue
        else:
            xc = _clip([centroid[i] + 0.5 * (worst[i] - centroid[i]) for i in range(n)], lo, hi)
            fc = fun(xc)
            if fc < values[n]:
                simplex[n], values[n] = xc, fc
                continue
        best = simplex[0]
        for k in range(1, n + 1):
            simplex[k] = [best[i] + 0.5 * (simplex[k][i] - best[i]) for i in range(n)]
            values[k] = fun(simplex[k])

    k = min(range(n + 1), key=lambda j: values[j])
    return simplex[k], values[k], it, converged


def minimize(starts, lo, hi, forward, fparams, eta, complete, loss, data, weights,
             n_local=3, max_iter=500, xtol=1e-10, ftol=1e-12):
    """Multi-start search: rank ``starts``, refine the best ``n_local``.

    Ties in the start ranking are broken by start index, which keeps the
    result independent of anything but the inputs.
    """
    fparams = [[float(v) for v in r] for r in fparams]
    data = [float(v) for v in data]
    weights = [float(v) for v in weights]
    lo, hi = [float(v) for v in lo], [float(v) for v in hi]

    def fun(x):
        return objective(x, forward, fparams, eta, complete, loss, data, weights)

    starts = [[float(v) for v in s] for s in starts]
    start_values = [fun(s) for s in starts]
    ranked = sorted(range(len(starts)), key=lambda k: (start_values[k], k))[:n_local]
    best = None
    total_iter = 0
    for k in ranked:
        x, f, it, conv = nelder_mead(fun, starts[k], lo, hi, max_iter, xtol, ftol)
        total_iter += it
        if best is None or f < best[1]:
            best = (x, f, conv)
    return list(best[0]), best[1], total_iter, best[2]
