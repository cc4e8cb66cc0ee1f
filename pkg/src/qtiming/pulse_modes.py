"""Gaussian pulses, Hermite-Gauss temporal modes and their overlaps.

Everything is evaluated in dimensionless time ``x = t / sigma`` internally;
the public functions accept physical times together with a
:class:`PulseShape` and rescale on entry.

Mode convention: ``u_n`` is real with a positive leading coefficient
(physicists' Hermite polynomials) and ``u_0`` is the pulse amplitude itself,

    u_0(t) = (2 pi sigma^2)^(-1/4) exp(-t^2 / (4 sigma^2)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

#: Default number of Hermite-Gauss modes kept when expanding a shifted pulse.
N_TRUNC = 32

#: Half-width of the quadrature window around the outermost centre, in sigma.
QUAD_HALF_WIDTH = 12.0
#: Composite Gauss-Legendre rule: number of panels and nodes per panel.
QUAD_PANELS = 96
QUAD_NODES = 20
QUAD_TOL = 1e-10


class QuadratureError(RuntimeError):
    """The integrand carries non-negligible mass outside the window."""


@dataclass(frozen=True)
class PulseShape:
    sigma: float = 1.0

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma!r}")


@dataclass(frozen=True)
class PulseParams:
    """Unknown parameters of the two-pulse mixture.

    ``tau0`` is the midpoint of the two pulse centres, ``tau`` their
    separation and ``q`` the weight of the pulse centred at
    ``tau0 - tau/2`` (pulse A). Pulse B sits at ``tau0 + tau/2``.
    """

    tau0: float
    tau: float
    q: float
    shape: PulseShape = field(default_factory=PulseShape)

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError(f"separation must be >= 0, got {self.tau!r}")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"imbalance must lie in [0, 1], got {self.q!r}")

    @property
    def sigma(self) -> float:
        return self.shape.sigma

    @property
    def centers(self) -> tuple[float, float]:
        return (self.tau0 - self.tau / 2, self.tau0 + self.tau / 2)

    def dimensionless(self) -> np.ndarray:
        """``(tau0/sigma, tau/sigma, q)`` as a float array."""
        s = self.shape.sigma
        return np.array([self.tau0 / s, self.tau / s, self.q])

    @classmethod
    def from_dimensionless(cls, theta, shape: PulseShape | None = None) -> "PulseParams":
        shape = shape or PulseShape()
        tau0, tau, q = (float(v) for v in theta)
        return cls(tau0 * shape.sigma, tau * shape.sigma, q, shape)


@dataclass(frozen=True)
class OverlapVector:
    """Expansion coefficients of a shifted pulse in the HG basis."""

    coeffs: np.ndarray
    shift: float
    shape: PulseShape

    @property
    def captured_norm(self) -> float:
        return float(np.dot(self.coeffs, self.coeffs))

    @property
    def truncation_loss(self) -> float:
        return 1.0 - self.captured_norm


def _hg_dimensionless(n: int, x: np.ndarray) -> np.ndarray:
    # u_n at x = t/sigma for sigma = 1, via the normalised three-term recurrence
    # in y = x / sqrt(2):  u_{k+1} = sqrt(2/(k+1)) y u_k - sqrt(k/(k+1)) u_{k-1}
    y = np.asarray(x, dtype=float) / math.sqrt(2.0)
    u_prev = np.zeros_like(y)
    u = (2.0 * math.pi) ** -0.25 * np.exp(-0.5 * y * y)
    for k in range(n):
        u_next = math.sqrt(2.0 / (k + 1)) * y * u - math.sqrt(k / (k + 1)) * u_prev
        u_prev, u = u, u_next
    return u


def hg_mode_value(n: int, t, shape: PulseShape = PulseShape()):
    """Value of the ``n``-th orthonormal Hermite-Gauss mode at time ``t``."""
    if n < 0:
        raise ValueError("mode index must be non-negative")
    scalar = np.ndim(t) == 0
    out = _hg_dimensionless(n, np.asarray(t, dtype=float) / shape.sigma) / math.sqrt(shape.sigma)
    return float(out) if scalar else out


def hg_mode(n: int, shape: PulseShape = PulseShape(), shift: float = 0.0) -> Callable:
    """``t -> u_n(t - shift)`` as a vectorised callable."""
    return lambda t: hg_mode_value(n, np.asarray(t) - shift, shape)


def overlap_coefficients(d, n_modes: int) -> np.ndarray:
    """``c_n`` for ``n < n_modes`` at dimensionless displacement ``d = s/(2 sigma)``.

    Built by ``c_n = c_{n-1} d / sqrt(n)`` so that ``d -> -d`` flips odd
    coefficients bit-for-bit. Broadcasts over ``d``; the mode axis is last.
    """
    d = np.asarray(d, dtype=float)
    out = np.empty(d.shape + (n_modes,))
    c = np.exp(-0.5 * d * d)
    for n in range(n_modes):
        if n:
            c = c * d / math.sqrt(n)
        out[..., n] = c
    return out


def overlap_derivatives(d, n_modes: int) -> np.ndarray:
    """``dc_n/dd = sqrt(n) c_{n-1} - sqrt(n+1) c_{n+1}`` for ``n < n_modes``.

    Divide by ``2 sigma`` for the derivative with respect to the physical
    shift.
    """
    c = overlap_coefficients(d, n_modes + 1)
    root = np.sqrt(np.arange(n_modes + 1))
    out = -root[1:] * c[..., 1:]
    out[..., 1:] += root[1:-1] * c[..., :-2]
    return out


def displaced_overlap(n: int, s: float, shape: PulseShape = PulseShape()) -> float:
    """``<u_n | u_0(. - s)>`` in closed form."""
    if n < 0:
        raise ValueError("mode index must be non-negative")
    return float(overlap_coefficients(s / (2.0 * shape.sigma), n + 1)[-1])


def overlap_vector(s: float, shape: PulseShape = PulseShape(), n_modes: int = N_TRUNC) -> OverlapVector:
    return OverlapVector(overlap_coefficients(s / (2.0 * shape.sigma), n_modes), s, shape)


def _gaussian_density(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def intensity(t, p: PulseParams):
    """Direct-detection intensity ``q|psi_A(t)|^2 + (1-q)|psi_B(t)|^2``.

    Normalised to unit area; ``|u_0|^2`` is a Gaussian density of standard
    deviation sigma.
    """
    s = p.sigma
    a, b = p.centers
    t = np.asarray(t, dtype=float)
    out = (p.q * _gaussian_density((t - a) / s) + (1 - p.q) * _gaussian_density((t - b) / s)) / s
    return float(out) if out.ndim == 0 else out


def intensity_gradient(t, p: PulseParams) -> np.ndarray:
    """Analytic partials of :func:`intensity` in the order (tau0, tau, q).

    Returns an array of shape ``(3,) + t.shape``.
    """
    s = p.sigma
    a, b = p.centers
    t = np.asarray(t, dtype=float)
    xa, xb = (t - a) / s, (t - b) / s
    ga, gb = _gaussian_density(xa) / s, _gaussian_density(xb) / s
    # d/dc g(t - c) = ((t - c)/sigma^2) g(t - c)
    da, db = xa / s * ga, xb / s * gb
    q = p.q
    return np.stack([
        q * da + (1 - q) * db,
        -0.5 * q * da + 0.5 * (1 - q) * db,
        ga - gb,
    ])


def quadrature_rule(lo: float, hi: float, panels: int = QUAD_PANELS, nodes: int = QUAD_NODES):
    """Nodes and weights of a composite Gauss-Legendre rule on ``[lo, hi]``."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    return t, wt


def quadrature_window(shape: PulseShape, centers=(0.0,)) -> tuple[float, float]:
    w = QUAD_HALF_WIDTH * shape.sigma
    return min(centers) - w, max(centers) + w


def quadrature_overlap(f: Callable, g: Callable, shape: PulseShape = PulseShape(),
                       centers=(0.0,), tol: float = QUAD_TOL) -> complex:
    """``integral conj(f(t)) g(t) dt`` on the window around ``centers``.

    Uses a composite Gauss-Legendre rule (``QUAD_PANELS`` x ``QUAD_NODES``)
    over ``[min(centers) - 12 sigma, max(centers) + 12 sigma]``. The mass of
    ``|f g|`` in two further windows of the same width on either side is
    estimated with the same rule; if it exceeds ``tol`` a
    :class:`QuadratureError` is raised.
    """
    lo, hi = quadrature_window(shape, centers)
    t, w = quadrature_rule(lo, hi)
    value = np.sum(w * np.conj(f(t)) * g(t))

    width = hi - lo
    tail = 0.0
    for a, b in ((lo - width, lo), (hi, hi + width)):
        tt, ww = quadrature_rule(a, b, panels=QUAD_PANELS // 2)
        tail += float(np.sum(ww * np.abs(np.conj(f(tt)) * g(tt))))
    if tail > tol:
        raise QuadratureError(f"tail mass {tail:.3e} outside [{lo:g}, {hi:g}] exceeds {tol:g}")
    return complex(value)
