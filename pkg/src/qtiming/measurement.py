"""Projective temporal-mode measurement and the channel response models."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pulse_modes import PulseParams, overlap_coefficients, overlap_derivatives

N_CHANNELS = 4
#: Monomials of the response polynomial, in serialisation order.
RESPONSE_TERMS = ("1", "tau0", "tau", "q", "tau0^2", "tau0*tau", "tau0*q", "tau^2", "tau*q", "tau0*tau*q")
PARAM_NAMES = ("tau0", "tau", "q")


@dataclass(frozen=True)
class Projector:
    """One measurement mode as amplitudes on (HG0, HG1, HG2, HG3)."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (4,):
            raise ValueError("a projector has exactly four HG components")
        if abs(np.vdot(c, c).real - 1.0) > 1e-12:
            raise ValueError("projector is not unit norm")
        object.__setattr__(self, "coeffs", c)


@dataclass(frozen=True)
class ProjectorSet:
    projectors: tuple[Projector, ...]

    def __post_init__(self):
        if len(self.projectors) != N_CHANNELS:
            raise ValueError("expected four projectors")

    @property
    def matrix(self) -> np.ndarray:
        """Rows are the projector amplitude vectors."""
        return np.array([p.coeffs for p in self.projectors])

    def resolution(self) -> np.ndarray:
        """``sum_j |pi_j><pi_j|`` on the four-mode span."""
        m = self.matrix
        return m.T @ m.conj()

    def completeness_error(self) -> float:
        return float(np.abs(self.resolution() - np.eye(4)).max())

    def amplitudes(self, coeffs: np.ndarray) -> np.ndarray:
        """``<pi_j | psi>`` for HG coefficients ``coeffs[..., :4]``."""
        return np.asarray(coeffs)[..., :4] @ self.matrix.conj().T

    def is_real(self) -> bool:
        return bool(np.all(self.matrix.imag == 0))


def canonical_projectors() -> ProjectorSet:
    """The four optimal measurement modes.

    Channels 0 and 1 are orthogonal to HG0 ("dark" at zero separation). The
    leading component of channel 3 is ``-sqrt(3/5)``; this is the reading
    under which the four vectors are orthonormal.
    """
    r2, r3, r5, r6, r15 = (math.sqrt(v) for v in (2, 3, 5, 6, 15))
    rows = (
        (0.0, 1 / r6, 1 / r2, -1 / r3),
        (0.0, 1 / r6, -1 / r2, -1 / r3),
        (r2 / r5, r2 / r5, 0.0, 1 / r5),
        (-r3 / r5, 2 / r15, 0.0, r2 / r15),
    )
    return ProjectorSet(tuple(Projector(np.array(r)) for r in rows))


@dataclass(frozen=True)
class ChannelProbabilities:
    p: np.ndarray
    p_sink: float

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        object.__setattr__(self, "p", p)
        if p.shape != (N_CHANNELS,):
            raise ValueError("expected four channel probabilities")

    @classmethod
    def from_channels(cls, p) -> "ChannelProbabilities":
        p = np.asarray(p, dtype=float)
        return cls(p, float(1.0 - p.sum()))

    def as_array(self) -> np.ndarray:
        """Five outcome probabilities, sink last."""
        return np.append(self.p, self.p_sink)


def _weights_and_shifts(theta):
    tau0, tau, q = theta
    return np.array([q, 1.0 - q]), np.array([tau0 - tau / 2, tau0 + tau / 2])


def mixture_probabilities(theta, projectors: ProjectorSet) -> np.ndarray:
    """Five outcome probabilities at dimensionless ``theta = (tau0, tau, q)``."""
    w, centers = _weights_and_shifts(theta)
    amp = projectors.amplitudes(overlap_coefficients(centers / 2.0, 4))
    p = w @ np.abs(amp) ** 2
    return np.append(p, 1.0 - p.sum())


def mixture_jacobian(theta, projectors: ProjectorSet) -> np.ndarray:
    """Analytic ``d p_k / d theta_l`` for the five outcomes, shape (5, 3)."""
    w, centers = _weights_and_shifts(theta)
    amp = projectors.amplitudes(overlap_coefficients(centers / 2.0, 4))
    # d/d(centre) of c_n(centre/2) is (1/2) dc_n/dd
    damp = 0.5 * projectors.amplitudes(overlap_derivatives(centers / 2.0, 4))
    dpow = 2.0 * np.real(np.conj(amp) * damp)  # d|amp|^2 / d centre, per pulse
    jac = np.empty((N_CHANNELS + 1, 3))
    jac[:4, 0] = w @ dpow
    jac[:4, 1] = -0.5 * w[0] * dpow[0] + 0.5 * w[1] * dpow[1]
    jac[:4, 2] = np.abs(amp[0]) ** 2 - np.abs(amp[1]) ** 2
    jac[4] = -jac[:4].sum(axis=0)
    return jac


def channel_probabilities(p: PulseParams, projectors: ProjectorSet | None = None) -> ChannelProbabilities:
    projectors = projectors or canonical_projectors()
    probs = mixture_probabilities(p.dimensionless(), projectors)
    return ChannelProbabilities(probs[:4], float(probs[4]))


@dataclass(frozen=True)
class ExactForward:
    """Exact channel probabilities, optionally scaled by a detection efficiency.

    Works in dimensionless parameters. ``probabilities`` returns the five
    outcome probabilities (sink last).
    """

    projectors: ProjectorSet = field(default_factory=canonical_projectors)
    efficiency: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("detection efficiency must lie in (0, 1]")

    def probabilities(self, theta) -> np.ndarray:
        p = mixture_probabilities(theta, self.projectors)
        p[:4] *= self.efficiency
        p[4] = 1.0 - p[:4].sum()
        return p

    def jacobian(self, theta) -> np.ndarray:
        jac = mixture_jacobian(theta, self.projectors)
        jac[:4] *= self.efficiency
        jac[4] = -jac[:4].sum(axis=0)
        return jac

    def __call__(self, theta) -> np.ndarray:
        return self.probabilities(theta)


def response_features(theta) -> np.ndarray:
    """Monomials of ``theta`` in :data:`RESPONSE_TERMS` order (last axis)."""
    theta = np.asarray(theta, dtype=float)
    t0, t, q = theta[..., 0], theta[..., 1], theta[..., 2]
    one = np.ones_like(t0)
    return np.stack([one, t0, t, q, t0 * t0, t0 * t, t0 * q, t * t, t * q, t0 * t * q], axis=-1)


class DomainError(ValueError):
    """Parameters outside the region a response model was fitted on."""


@dataclass(frozen=True)
class ResponseModel:
    """Ten-term polynomial per channel in dimensionless (tau0, tau, q).

    ``domain`` maps each parameter name to its ``(lo, hi)`` interval.
    """

    coeffs: np.ndarray
    domain: dict

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (N_CHANNELS, len(RESPONSE_TERMS)):
            raise ValueError(f"coefficients must have shape (4, 10), got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        dom = {k: (float(self.domain[k][0]), float(self.domain[k][1])) for k in PARAM_NAMES}
        for k, (lo, hi) in dom.items():
            if not lo <= hi:
                raise ValueError(f"empty domain for {k}")
        object.__setattr__(self, "domain", dom)

    def contains(self, theta, tol: float = 1e-12) -> bool:
        return all(lo - tol <= v <= hi + tol for v, (lo, hi) in zip(theta, self.domain.values()))

    def bounds(self) -> list[tuple[float, float]]:
        return [self.domain[k] for k in PARAM_NAMES]

    def probabilities(self, theta) -> np.ndarray:
        """Unclamped five-outcome response at dimensionless ``theta``."""
        p = self.coeffs @ response_features(theta)
        return np.append(p, 1.0 - p.sum())

    def jacobian(self, theta) -> np.ndarray:
        t0, t, q = (float(v) for v in theta)
        dfeat = np.array([
            [0, 1, 0, 0, 2 * t0, t, q, 0, 0, t * q],
            [0, 0, 1, 0, 0, t0, 0, 2 * t, q, t0 * q],
            [0, 0, 0, 1, 0, 0, t0, 0, t, t0 * t],
        ], dtype=float).T
        jac = np.empty((N_CHANNELS + 1, 3))
        jac[:4] = self.coeffs @ dfeat
        jac[4] = -jac[:4].sum(axis=0)
        return jac

    def __call__(self, theta) -> np.ndarray:
        return self.probabilities(theta)

    def to_json(self) -> dict:
        return {
            "units": "dimensionless (time / sigma)",
            "terms": list(RESPONSE_TERMS),
            "domain": {k: list(v) for k, v in self.domain.items()},
            "channels": self.coeffs.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ResponseModel":
        terms = doc.get("terms")
        if terms is not None and tuple(terms) != RESPONSE_TERMS:
            raise ValueError(f"unexpected term order {terms!r}")
        return cls(np.array(doc["channels"], dtype=float), doc["domain"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ResponseModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def evaluate_response(m: ResponseModel, p: PulseParams, clamp: bool = False) -> ChannelProbabilities:
    """Evaluate the polynomial response at ``p``.

    Raises :class:`DomainError` outside ``m.domain``. With ``clamp`` the
    channel values are clipped to ``[0, 1]`` before the sink is completed.
    """
    theta = p.dimensionless()
    if not m.contains(theta):
        raise DomainError(f"{tuple(theta)} lies outside the calibrated domain {m.domain}")
    probs = m.probabilities(theta)[:4]
    if clamp:
        probs = np.clip(probs, 0.0, 1.0)
    return ChannelProbabilities.from_channels(probs)
