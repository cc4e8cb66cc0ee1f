"""Calibration of the response polynomial and parameter estimation from counts.

Three estimators share one constrained optimiser:

* :func:`fit_response_model` -- per-channel GLS fit of the ten-term
  polynomial to calibration frequencies;
* :func:`invert_gls` -- constrained GLS inversion of a forward model for one
  set of observed frequencies;
* :func:`ml_estimate` -- constrained multinomial (or per-channel binomial)
  maximum likelihood.

Optimiser
---------
The objective is evaluated on a cell-centred 5x5x5 grid over the parameter
box, Nelder-Mead (box-projected, 500 iterations max) is run from the three
best grid points, and the best result is refined by projected steps on a
local quadratic model (Fisher scoring for likelihoods, Gauss-Newton for
least squares; finite differences for generic callables). Coordinates
within 1e-3 of the box width from a bound
are moved onto it when that does not increase the objective beyond its
rounding level. Every step is deterministic.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _core_py, kernels
from .measurement import (
    N_CHANNELS,
    PARAM_NAMES,
    DomainError,
    ExactForward,
    ResponseModel,
    response_features,
)
from .pulse_modes import PulseParams, PulseShape

#: Default search box (dimensionless) for the exact forward model.
DEFAULT_BOUNDS = ((-1.0, 1.0), (0.0, 3.0), (0.0, 1.0))
START_GRID = 5
N_LOCAL = 3
MAX_ITER = 500
NEWTON_STEPS = 8
FD_STEP = 1e-4
SNAP_WINDOW = 1e-3
NOISE_RTOL = 1e-12
COND_LIMIT = 1e12
#: Newton-decrement threshold for declaring a stationary point.
STATIONARY_TOL = 1e-6

DEFAULT_CAL_TAUS = tuple(np.linspace(0.0, 2.0, 10))
DEFAULT_CAL_QS = (0.125, 0.2, 0.3, 0.45, 0.6, 0.75)
DEFAULT_CAL_TAU0S = (-0.25, 0.0, 0.25)
DEFAULT_CAL_COUNTS = 23_000_000

_BOUND_LABELS = (("tau0_lower", "tau0_upper"), ("tau_lower", "tau_upper"), ("q_lower", "q_upper"))


class RankDeficientError(ValueError):
    pass


class CalibrationError(ValueError):
    pass


@dataclass
class CalibrationSet:
    """Calibration grid in dimensionless parameters.

    ``theta`` has one row ``(tau0, tau, q)`` per point, ``frequencies`` the
    four averaged channel frequencies and ``counts`` the number of detection
    trials behind them.
    """

    theta: np.ndarray
    frequencies: np.ndarray
    counts: np.ndarray
    shape: PulseShape = field(default_factory=PulseShape)

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        self.frequencies = np.atleast_2d(np.asarray(self.frequencies, dtype=float))
        self.counts = np.asarray(self.counts, dtype=float).reshape(-1)
        m = len(self.theta)
        if self.theta.shape != (m, 3) or self.frequencies.shape != (m, N_CHANNELS) or self.counts.shape != (m,):
            raise CalibrationError("inconsistent calibration array shapes")
        if np.any(self.counts <= 0):
            raise CalibrationError("every calibration point needs a positive count")
        if np.any(self.frequencies.sum(axis=1) > 1 + 1e-9) or np.any(self.frequencies < 0):
            raise CalibrationError("calibration frequencies must be non-negative and sum to <= 1")

    def __len__(self):
        return len(self.theta)

    def params(self) -> list[PulseParams]:
        return [PulseParams.from_dimensionless(t, self.shape) for t in self.theta]

    def to_csv(self, path) -> None:
        s = self.shape.sigma
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tau0", "tau", "q", "sigma", "f0", "f1", "f2", "f3", "counts"])
            for th, f, n in zip(self.theta, self.frequencies, self.counts):
                w.writerow([repr(float(th[0] * s)), repr(float(th[1] * s)), repr(float(th[2])), repr(s), *map(repr, map(float, f)), repr(float(n))])

    @classmethod
    def from_csv(cls, path) -> "CalibrationSet":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise CalibrationError(f"{path}: no calibration rows")
        sigmas = {float(r["sigma"]) for r in rows}
        if len(sigmas) != 1:
            raise CalibrationError("mixed pulse widths in one calibration set")
        s = sigmas.pop()
        theta = [[float(r["tau0"]) / s, float(r["tau"]) / s, float(r["q"])] for r in rows]
        freqs = [[float(r[f"f{j}"]) for j in range(N_CHANNELS)] for r in rows]
        counts = [float(r["counts"]) for r in rows]
        return cls(np.array(theta), np.array(freqs), np.array(counts), PulseShape(s))


def default_calibration_grid(taus=DEFAULT_CAL_TAUS, qs=DEFAULT_CAL_QS, tau0s=DEFAULT_CAL_TAU0S) -> np.ndarray:
    """Dimensionless ``(tau0, tau, q)`` rows, tau0 outermost."""
    return np.array([(t0, t, q) for t0 in tau0s for t in taus for q in qs], dtype=float)


def simulate_calibration(grid, total_counts: float = DEFAULT_CAL_COUNTS, rng=None,
                         forward: ExactForward | None = None, shape: PulseShape | None = None) -> CalibrationSet:
    """Calibration frequencies on ``grid``.

    ``total_counts`` is split evenly over the grid points. Without ``rng`` the
    exact probabilities are used (noiseless calibration); with a numpy
    ``Generator`` the counts are multinomial draws.
    """
    forward = forward or ExactForward()
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    n_point = float(total_counts) / len(grid)
    probs = np.array([forward.probabilities(th) for th in grid])
    if rng is None:
        freqs = probs[:, :N_CHANNELS]
    else:
        n_int = int(round(n_point))
        p = np.clip(probs, 0.0, None)
        p /= p.sum(axis=1, keepdims=True)
        freqs = np.array([rng.multinomial(n_int, row)[:N_CHANNELS] for row in p]) / n_int
        n_point = float(n_int)
    return CalibrationSet(grid, freqs, np.full(len(grid), n_point), shape or PulseShape())


@dataclass(frozen=True)
class CalibrationFit:
    model: ResponseModel
    r_squared: np.ndarray
    max_abs_residual: np.ndarray

    def diagnostics(self) -> dict:
        return {
            "r_squared": self.r_squared.tolist(),
            "max_abs_residual": self.max_abs_residual.tolist(),
        }


def _floored(f, n):
    # keep multinomial variances away from zero at empty channels
    return np.clip(f, 0.5 / n, 1.0 - 0.5 / n)


def fit_response_model(cal: CalibrationSet, domain: dict | None = None) -> CalibrationFit:
    """GLS fit of the ten-term response polynomial, channel by channel.

    Each grid point is weighted by the inverse binomial variance
    ``n / (f (1 - f))`` of its averaged frequency (``f`` floored at
    ``0.5/n``). ``domain`` defaults to the bounding box of the grid; grid
    points outside an explicit domain are rejected. R^2 and the maximum
    absolute residual are unweighted, per channel.
    """
    x = response_features(cal.theta)
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise RankDeficientError("calibration grid does not identify all ten response terms")
    if domain is None:
        domain = {k: (float(cal.theta[:, i].min()), float(cal.theta[:, i].max())) for i, k in enumerate(PARAM_NAMES)}
    else:
        probe = ResponseModel(np.zeros((N_CHANNELS, x.shape[1])), domain)
        outside = [tuple(t) for t in cal.theta if not probe.contains(t)]
        if outside:
            raise DomainError(f"{len(outside)} calibration points lie outside {probe.domain}")

    coeffs = np.empty((N_CHANNELS, x.shape[1]))
    for j in range(N_CHANNELS):
        f = cal.frequencies[:, j]
        fl = _floored(f, cal.counts)
        sw = np.sqrt(cal.counts / (fl * (1.0 - fl)))
        coeffs[j] = np.linalg.lstsq(x * sw[:, None], f * sw, rcond=None)[0]

    resid = cal.frequencies - x @ coeffs.T
    centred = cal.frequencies - cal.frequencies.mean(axis=0)
    ss_tot = (centred ** 2).sum(axis=0)
    r2 = 1.0 - (resid ** 2).sum(axis=0) / np.where(ss_tot > 0, ss_tot, 1.0)
    return CalibrationFit(ResponseModel(coeffs, domain), r2, np.abs(resid).max(axis=0))


@dataclass(frozen=True)
class Estimate:
    """Constrained parameter estimate in physical units.

    ``constraint_active`` names the box bounds the estimate sits on, e.g.
    ``"tau_lower"`` for ``tau_hat == 0``.
    """

    tau0_hat: float
    tau_hat: float
    q_hat: float
    constraint_active: tuple[str, ...] = ()
    covariance_hat: np.ndarray = field(default_factory=lambda: np.full((3, 3), np.nan))
    converged: bool = True
    identifiable: bool = True
    method: str = ""
    objective: float = float("nan")

    def __post_init__(self):
        if self.tau_hat < 0 or not 0.0 <= self.q_hat <= 1.0:
            raise ValueError("estimate violates tau >= 0 or 0 <= q <= 1")

    @property
    def flagged(self) -> bool:
        return not (self.converged and self.identifiable)

    def values(self) -> np.ndarray:
        return np.array([self.tau0_hat, self.tau_hat, self.q_hat])

    def as_params(self, shape: PulseShape = PulseShape()) -> PulseParams:
        return PulseParams(self.tau0_hat, self.tau_hat, self.q_hat, shape)


ESTIMATE_FIELDS = (
    ["tau0_hat", "tau_hat", "q_hat"]
    + [f"cov_{a}_{b}" for a in PARAM_NAMES for b in PARAM_NAMES]
    + ["constraint_active", "converged", "identifiable", "method", "objective"]
)


def estimate_row(e: Estimate) -> list[str]:
    cov = [repr(float(v)) for v in np.asarray(e.covariance_hat).ravel()]
    return [repr(float(e.tau0_hat)), repr(float(e.tau_hat)), repr(float(e.q_hat)), *cov,
            ";".join(e.constraint_active), str(int(e.converged)), str(int(e.identifiable)),
            e.method, repr(float(e.objective))]


def estimate_from_row(row: dict) -> Estimate:
    cov = np.array([float(row[f"cov_{a}_{b}"]) for a in PARAM_NAMES for b in PARAM_NAMES]).reshape(3, 3)
    active = tuple(s for s in row["constraint_active"].split(";") if s)
    return Estimate(float(row["tau0_hat"]), float(row["tau_hat"]), float(row["q_hat"]), active, cov,
                    bool(int(row["converged"])), bool(int(row["identifiable"])), row["method"], float(row["objective"]))


def write_estimates(path, estimates: Sequence[Estimate], extra: Sequence[dict] | None = None) -> None:
    """One row per estimate; ``extra`` adds leading columns (same keys per row)."""
    extra_keys = list(extra[0]) if extra else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(extra_keys + ESTIMATE_FIELDS)
        for i, e in enumerate(estimates):
            lead = [extra[i][k] for k in extra_keys] if extra else []
            w.writerow(lead + estimate_row(e))


def read_estimates(path) -> list[Estimate]:
    with open(path, newline="") as fh:
        return [estimate_from_row(r) for r in csv.DictReader(fh)]


# --- optimisation core -------------------------------------------------------

@dataclass
class _Problem:
    """One objective: forward model + loss + data, over a box."""

    bounds: np.ndarray                      # (3, 2)
    loss: int
    data: np.ndarray
    weights: np.ndarray
    forward_code: int | None = None         # kernel forward model, or None
    fparams: np.ndarray | None = None
    eta: float = 1.0
    complete: bool = False
    forward_fn: Callable | None = None      # generic forward model
    jacobian: Callable | None = None
    noise: float = 0.0                      # objective rounding level

    def __call__(self, theta) -> float:
        if self.forward_code is not None:
            return kernels.core.objective(np.asarray(theta, dtype=float), self.forward_code, self.fparams,
                                          self.eta, self.complete, self.loss, self.data, self.weights)
        return _generic_objective(self.forward_fn, theta, self.loss, self.data, self.weights)

    def probabilities(self, theta) -> np.ndarray:
        if self.forward_code is not None:
            return np.array(kernels.core.probabilities(np.asarray(theta, dtype=float), self.forward_code,
                                                       self.fparams, self.eta, self.complete))
        return np.asarray(self.forward_fn(np.asarray(theta, dtype=float)), dtype=float)


def _generic_objective(fn, theta, loss, data, weights) -> float:
    p = np.asarray(fn(np.asarray(theta, dtype=float)), dtype=float)
    if p.shape == (N_CHANNELS,):
        p = np.append(p, 1.0 - p.sum())
    value = 0.0
    if loss == kernels.LOSS_MULTINOMIAL:
        n_tot = float(np.sum(data))
        for n, pk in zip(data, p):
            if n > 0:
                if pk <= 0:
                    return _core_py.PENALTY
                value += n * math.log(n / (n_tot * pk))
    elif loss == kernels.LOSS_SEQUENTIAL:
        m = data[4]
        for n, pk in zip(data[:4], p[:4]):
            if n > 0:
                if pk <= 0:
                    return _core_py.PENALTY
                value += n * math.log(n / (m * pk))
            if m - n > 0:
                if pk >= 1:
                    return _core_py.PENALTY
                value += (m - n) * math.log((m - n) / (m * (1 - pk)))
    else:
        value = float(np.sum(weights * (data - p) ** 2))
    return value


def _make_problem(forward, loss, data, weights, bounds, scale: float) -> _Problem:
    problem = _build_problem(forward, loss, np.asarray(data, dtype=float), np.asarray(weights, dtype=float), bounds)
    problem.jacobian = getattr(forward, "jacobian", None)
    problem.noise = NOISE_RTOL * scale
    return problem


def _build_problem(forward, loss, data, weights, bounds) -> _Problem:
    if isinstance(forward, ExactForward) and forward.projectors.is_real():
        box = np.array(bounds if bounds is not None else DEFAULT_BOUNDS, dtype=float)
        return _Problem(box, loss, data, weights, kernels.FORWARD_EXACT,
                        np.ascontiguousarray(forward.projectors.matrix.real), forward.efficiency,
                        forward.projectors.completeness_error() <= 1e-12)
    if isinstance(forward, ResponseModel):
        box = np.array(forward.bounds(), dtype=float)
        if bounds is not None:
            b = np.asarray(bounds, dtype=float)
            box = np.column_stack([np.maximum(box[:, 0], b[:, 0]), np.minimum(box[:, 1], b[:, 1])])
        box[1, 0] = max(box[1, 0], 0.0)
        box[2] = np.clip(box[2], 0.0, 1.0)
        return _Problem(box, loss, data, weights, kernels.FORWARD_POLY, np.array(forward.coeffs, dtype=float))
    if callable(forward):
        box = np.array(bounds if bounds is not None else DEFAULT_BOUNDS, dtype=float)
        return _Problem(box, loss, data, weights, forward_fn=forward)
    raise TypeError(f"unsupported forward model {forward!r}")


def start_grid(bounds, n: int = START_GRID) -> np.ndarray:
    """Cell-centred ``n x n x n`` grid over the box, last axis fastest."""
    bounds = np.asarray(bounds, dtype=float)
    axes = [lo + (np.arange(n) + 0.5) / n * (hi - lo) for lo, hi in bounds]
    return np.array(np.meshgrid(*axes, indexing="ij")).reshape(3, -1).T.copy()


def _fd_derivatives(fun, x, free, h=FD_STEP):
    k = len(free)
    f0 = fun(x)
    g = np.zeros(k)
    hess = np.zeros((k, k))
    e = np.eye(3) * h
    fp = [fun(x + e[i]) for i in free]
    fm = [fun(x - e[i]) for i in free]
    for a, i in enumerate(free):
        g[a] = (fp[a] - fm[a]) / (2 * h)
        hess[a, a] = (fp[a] - 2 * f0 + fm[a]) / h ** 2
        for b in range(a):
            j = free[b]
            fpp = fun(x + e[i] + e[j])
            fpm = fun(x + e[i] - e[j])
            fmp = fun(x - e[i] + e[j])
            fmm = fun(x - e[i] - e[j])
            hess[a, b] = hess[b, a] = (fpp - fpm - fmp + fmm) / (4 * h * h)
    return f0, g, hess


def _free_coordinates(x, bounds):
    return [i for i in range(3) if bounds[i, 0] < x[i] < bounds[i, 1]]


def _model_step(problem: _Problem, x, free):
    """Gradient and curvature of the objective from the forward Jacobian."""
    p = problem.probabilities(x)
    jac = problem.jacobian(x)[:, free]
    d = problem.data
    if problem.loss == kernels.LOSS_MULTINOMIAL:
        use = p > 1e-14
        g = -jac[use].T @ (d[use] / p[use])
        h = d.sum() * jac[use].T @ (jac[use] / p[use, None])
    elif problem.loss == kernels.LOSS_SEQUENTIAL:
        m = d[4]
        pc, jc, n = p[:4], jac[:4], d[:4]
        use = (pc > 1e-14) & (pc < 1 - 1e-14)
        g = -jc[use].T @ (n[use] / pc[use] - (m - n[use]) / (1 - pc[use]))
        h = m * jc[use].T @ (jc[use] / (pc[use] * (1 - pc[use]))[:, None])
    else:
        w = problem.weights
        g = -2.0 * jac.T @ (w * (d - p))
        h = 2.0 * jac.T @ (w[:, None] * jac)
    return g, h


def _refine(problem: _Problem, x, f):
    """Projected steps on a local quadratic model of the objective."""
    lo, hi = problem.bounds[:, 0], problem.bounds[:, 1]
    for _ in range(NEWTON_STEPS):
        free = _free_coordinates(x, problem.bounds)
        if not free:
            break
        if problem.jacobian is not None:
            g, hess = _model_step(problem, x, free)
        else:
            _, g, hess = _fd_derivatives(problem, x, free)
        if not (np.all(np.isfinite(hess)) and np.all(np.isfinite(g))):
            break
        # step within the well-curved subspace only; flat directions stay put
        lam, vec = np.linalg.eigh(hess)
        if lam[-1] <= 0:
            break
        keep = lam > 1e-10 * lam[-1]
        step = vec[:, keep] @ ((vec[:, keep].T @ -g) / lam[keep])
        if not np.all(np.isfinite(step)):
            break
        trial = x.copy()
        trial[free] += step
        trial = np.clip(trial, lo, hi)
        ft = problem(trial)
        if ft > f + problem.noise:
            break
        moved = np.abs(trial - x).max()
        x, f = trial, ft
        if moved < 1e-14:
            break
    return x, f


def _stationary(problem: _Problem, x) -> bool:
    """First-order optimality at ``x``.

    Free coordinates: Newton decrement ``g^T H^+ g / 2`` at most
    ``STATIONARY_TOL`` (objective units, i.e. log-likelihood or chi^2).
    Coordinates on a bound: the gradient must not point into the box by
    more than the same tolerance per unit of box width.
    """
    free = _free_coordinates(x, problem.bounds)
    if problem.jacobian is not None:
        g_all, hess_all = _model_step(problem, x, [0, 1, 2])
        idx = {k: a for a, k in enumerate([0, 1, 2])}
        g = g_all[free]
        hess = hess_all[np.ix_(free, free)]
    else:
        g_all, idx = None, {}
        _, g, hess = _fd_derivatives(problem, x, free) if free else (0.0, np.zeros(0), np.zeros((0, 0)))
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(hess))):
        return False
    if free:
        lam, vec = np.linalg.eigh(hess)
        if lam[-1] > 0:
            keep = lam > 1e-10 * lam[-1]
            proj = vec[:, keep].T @ g
            if 0.5 * float(proj @ (proj / lam[keep])) > STATIONARY_TOL:
                return False
        elif np.abs(g).max() > STATIONARY_TOL:
            return False
    if g_all is not None:
        for i in range(3):
            if i in free:
                continue
            width = problem.bounds[i, 1] - problem.bounds[i, 0]
            inward = -g_all[idx[i]] if x[i] <= problem.bounds[i, 0] else g_all[idx[i]]
            if inward * width > STATIONARY_TOL and not np.isclose(width, 0.0):
                return False
    return True


def _optimise(problem: _Problem):
    lo, hi = problem.bounds[:, 0], problem.bounds[:, 1]
    starts = start_grid(problem.bounds)
    if problem.forward_code is not None:
        x, f, _, converged = kernels.core.minimize(
            starts, lo, hi, problem.forward_code, problem.fparams, problem.eta, problem.complete,
            problem.loss, problem.data, problem.weights, N_LOCAL, MAX_ITER)
    else:
        values = [problem(s) for s in starts]
        ranked = sorted(range(len(starts)), key=lambda k: (values[k], k))[:N_LOCAL]
        best = None
        for k in ranked:
            res = _core_py.nelder_mead(problem, list(starts[k]), list(lo), list(hi), MAX_ITER)
            if best is None or res[1] < best[1]:
                best = res
        x, f, _, converged = best
    x = np.asarray(x, dtype=float)

    x, f = _refine(problem, x, f)

    # settle coordinates that sit next to a bound
    for i in range(3):
        for side in (0, 1):
            b = problem.bounds[i, side]
            width = max(problem.bounds[i, 1] - problem.bounds[i, 0], 1.0)
            if x[i] != b and abs(x[i] - b) <= SNAP_WINDOW * width:
                trial = x.copy()
                trial[i] = b
                ft = problem(trial)
                if ft <= f + problem.noise:
                    x, f = _refine(problem, trial, ft)
    return x, float(f), bool(converged) or _stationary(problem, x)


def _active(x, bounds) -> tuple[str, ...]:
    out = []
    for i in range(3):
        if x[i] <= bounds[i, 0]:
            out.append(_BOUND_LABELS[i][0])
        elif x[i] >= bounds[i, 1]:
            out.append(_BOUND_LABELS[i][1])
    return tuple(out)


def _normalised_condition(m) -> float:
    d = np.sqrt(np.abs(np.diag(m)))
    if m.size == 0:
        return 1.0
    if np.any(d == 0):
        return np.inf
    ev = np.linalg.eigvalsh(m / np.outer(d, d))
    return np.inf if ev[0] <= 0 else float(ev[-1] / ev[0])


def _free_inverse(info, free, bounds):
    """Inverse on the free block, zeros on bound coordinates.

    The second value is False when the block is singular or a free
    parameter's variance exceeds the squared width of its search interval.
    """
    cov = np.zeros((3, 3))
    if not free:
        return cov, True
    block = info[np.ix_(free, free)]
    ok = _normalised_condition(block) <= COND_LIMIT
    inv = np.linalg.inv(block) if ok else np.linalg.pinv(block)
    cov[np.ix_(free, free)] = inv
    width = np.diff(bounds[free], axis=1).ravel()
    ok = ok and bool(np.all(np.diag(inv) <= width ** 2))
    return cov, ok


def _to_estimate(x, f, converged, identifiable, cov, bounds, method, shape: PulseShape) -> Estimate:
    s = np.array([shape.sigma, shape.sigma, 1.0])
    x = np.array(x, dtype=float)
    # guard against -0.0 and round-off across the physical bounds
    x[1] = max(x[1], 0.0)
    x[2] = min(max(x[2], 0.0), 1.0)
    return Estimate(float(x[0] * s[0]), float(x[1] * s[1]), float(x[2]), _active(x, bounds),
                    cov * np.outer(s, s), converged, identifiable, method, f)


def _forward_jacobian(forward, x):
    if hasattr(forward, "jacobian"):
        return forward.jacobian(x)
    h = 1e-6
    fn = lambda t: np.asarray(forward(t), dtype=float)
    cols = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        cols.append((fn(x + e) - fn(x - e)) / (2 * h))
    jac = np.array(cols).T
    if jac.shape[0] == N_CHANNELS:
        jac = np.vstack([jac, -jac.sum(axis=0)])
    return jac


def invert_gls(m, observed, n: float, weighting: str = "observed", bounds=None,
               shape: PulseShape = PulseShape(), max_reweight: int = 5) -> Estimate:
    """Constrained GLS inversion of a forward model.

    Minimises ``sum_k w_k (f_k - m_k(theta))^2`` over the five outcomes
    (four channels plus the sink), which equals the quadratic form with the
    inverse multinomial covariance of the four channel frequencies. With
    ``weighting='observed'`` the weights are ``n / f_k`` at the observed
    frequencies (floored at ``0.5/n``); ``'iterated'`` recomputes them from
    the model at the current estimate until it stops moving.

    ``m`` is a :class:`ResponseModel`, an :class:`ExactForward` or a callable
    returning outcome probabilities. The covariance is ``(J^T W J)^-1`` on
    the free coordinates.
    """
    if weighting not in ("observed", "iterated"):
        raise ValueError(f"unknown weighting {weighting!r}")
    if not n > 0:
        raise ValueError("total counts must be positive")
    obs = np.asarray(observed, dtype=float)
    if obs.shape == (N_CHANNELS,):
        obs = np.append(obs, 1.0 - obs.sum())
    if obs.shape != (N_CHANNELS + 1,):
        raise ValueError("observed frequencies must have four channels (plus optional sink)")
    obs[4] = max(obs[4], 0.0)

    weights = n / np.clip(obs, 0.5 / n, None)
    problem = _make_problem(m, kernels.LOSS_WLS, obs, weights, bounds, scale=n)
    x, f, converged = _optimise(problem)
    if weighting == "iterated":
        for _ in range(max_reweight):
            model_p = problem.probabilities(x)
            problem.weights = n / np.clip(model_p, 0.5 / n, None)
            x_new, f, converged = _optimise(problem)
            moved = np.abs(x_new - x).max()
            x = x_new
            if moved < 1e-10:
                break

    free = _free_coordinates(x, problem.bounds)
    jac = _forward_jacobian(m, x)
    info = jac.T @ (problem.weights[:, None] * jac)
    cov, ok = _free_inverse(info, free, problem.bounds)
    return _to_estimate(x, f, converged, ok, cov, problem.bounds, f"gls-{weighting}", shape)


def ml_estimate(forward, counts, counting: str = "multinomial", trials: int | None = None,
                bounds=None, shape: PulseShape = PulseShape()) -> Estimate:
    """Constrained maximum-likelihood estimate from channel counts.

    ``counting='multinomial'``: ``counts`` holds the four channel counts and
    the sink count. ``'sequential'``: four independent binomial records of
    ``trials`` photons each (a fifth entry, if present, is ignored). Empty
    outcomes contribute ``0 log 0 = 0``.

    ``covariance_hat`` is the inverse observed information (finite-difference
    Hessian of the negative log-likelihood) on the free coordinates; bound
    coordinates get zero rows. Results are flagged non-identifiable when
    fewer than two outcomes are populated or the free block is singular.
    """
    c = np.asarray(counts, dtype=float)
    if np.any(c < 0):
        raise ValueError("counts must be non-negative")
    if counting == "multinomial":
        if c.shape != (N_CHANNELS + 1,):
            raise ValueError("multinomial counting needs four channel counts and a sink count")
        if c.sum() <= 0:
            raise ValueError("no counts")
        data, loss = c, kernels.LOSS_MULTINOMIAL
        populated = int(np.count_nonzero(c))
    elif counting == "sequential":
        if trials is None or trials <= 0:
            raise ValueError("sequential counting needs a positive number of trials per channel")
        if np.any(c[:N_CHANNELS] > trials):
            raise ValueError("channel count exceeds the number of trials")
        data, loss = np.append(c[:N_CHANNELS], float(trials)), kernels.LOSS_SEQUENTIAL
        populated = int(np.count_nonzero(c[:N_CHANNELS])) + 1
    else:
        raise ValueError(f"unknown counting model {counting!r}")

    problem = _make_problem(forward, loss, data, np.zeros(N_CHANNELS + 1), bounds, scale=float(data.sum()))
    x, f, converged = _optimise(problem)
    free = _free_coordinates(x, problem.bounds)
    identifiable = populated >= 2
    if free:
        _, _, hess = _fd_derivatives(problem, x, free)
        info = np.zeros((3, 3))
        info[np.ix_(free, free)] = hess
    else:
        info = np.zeros((3, 3))
    cov, ok = _free_inverse(info, free, problem.bounds)
    return _to_estimate(x, f, converged, identifiable and ok, cov, problem.bounds, f"ml-{counting}", shape)


@dataclass(frozen=True)
class ParamSummary:
    mean: float
    bias: float
    variance: float
    se_mean: float
    se_variance: float
    n: int

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def bias_variance_report(estimates: Sequence[Estimate], truth: PulseParams) -> dict[str, ParamSummary]:
    """Sample mean, bias and unbiased variance per parameter.

    ``se_variance`` uses the normal-theory ``var * sqrt(2 / (n - 1))``.
    """
    if len(estimates) < 2:
        raise ValueError("need at least two estimates")
    vals = np.array([e.values() for e in estimates])
    true = np.array([truth.tau0, truth.tau, truth.q])
    n = len(vals)
    out = {}
    for i, name in enumerate(PARAM_NAMES):
        col = vals[:, i]
        mean = math.fsum(col) / n
        var = math.fsum((col - mean) ** 2) / (n - 1)
        out[name] = ParamSummary(mean, mean - true[i], var, math.sqrt(var / n), var * math.sqrt(2.0 / (n - 1)), n)
    return out
