"""Fisher information and Cramer-Rao bounds for three detection strategies.

All matrices use the parameter order ``(tau0, tau, q)``; time-like entries
carry units of ``1/time^2`` (``1/time`` for mixed time/q entries).

direct
    intensity detection with perfect temporal resolution,
povm
    the four-channel projector measurement plus a sink outcome,
quantum
    the symmetric-logarithmic-derivative (SLD) bound, maximised over all
    measurements.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import mpmath
import numpy as np
from scipy.special import gammainc

from .measurement import PARAM_NAMES, ProjectorSet, canonical_projectors
from .pulse_modes import (
    N_TRUNC,
    PulseParams,
    intensity,
    intensity_gradient,
    overlap_coefficients,
    overlap_derivatives,
    quadrature_rule,
    quadrature_window,
)

#: Separation floor (in sigma) substituted at the tau = 0 boundary.
TAU_FLOOR = 1e-6
#: Below this separation (in sigma) the HG-basis eigendecomposition cannot
#: resolve the O(tau^2) eigenvalue of rho; the QFI is then computed from the
#: closed-form Gram matrix in extended precision.
QFI_EXACT_BELOW = 1e-3
EXACT_DPS = 80
EPS_SLD = 1e-12
#: Relative weight of d rho in the kernel of rho above which the QFI is infinite.
KERNEL_LEAK_RTOL = 1e-8
P_TINY = 1e-14
COND_LIMIT = 1e12
QFI_CONVERGENCE_RTOL = 1e-6

PARAM_INDEX = {name: i for i, name in enumerate(PARAM_NAMES)}


@dataclass(frozen=True)
class FisherMatrix:
    entries: np.ndarray
    n_photons: float = 1.0
    kind: str = ""
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        f = np.array(self.entries, dtype=float)
        if f.shape != (3, 3):
            raise ValueError("Fisher matrix must be 3x3")
        f = 0.5 * (f + f.T)
        f.setflags(write=False)
        object.__setattr__(self, "entries", f)

    @property
    def singular(self) -> bool:
        return _condition(self.entries) > COND_LIMIT

    def per_photon(self) -> np.ndarray:
        return self.entries / self.n_photons

    def scaled(self, n_photons: float) -> "FisherMatrix":
        return replace(self, entries=self.per_photon() * n_photons, n_photons=n_photons)

    def to_json(self) -> dict:
        return {
            "params": list(PARAM_NAMES),
            "kind": self.kind,
            "n_photons": self.n_photons,
            "entries": [[_json_float(v) for v in row] for row in self.entries],
            "flags": list(self.flags),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FisherMatrix":
        if tuple(doc["params"]) != PARAM_NAMES:
            raise ValueError(f"unexpected parameter order {doc['params']!r}")
        entries = np.array([[float(v) for v in row] for row in doc["entries"]])
        return cls(entries, doc["n_photons"], doc.get("kind", ""), tuple(doc.get("flags", ())))


@dataclass(frozen=True)
class CRLBMatrix:
    """Covariance bound for ``params``; ``inf`` marks unidentifiable directions."""

    entries: np.ndarray
    params: tuple[str, ...] = PARAM_NAMES
    nuisance: str = "joint"
    flags: tuple[str, ...] = field(default=())

    @property
    def singular(self) -> bool:
        return "singular" in self.flags

    def variance(self, name: str) -> float:
        i = self.params.index(name)
        return float(self.entries[i, i])

    def to_json(self) -> dict:
        return {
            "params": list(self.params),
            "nuisance": self.nuisance,
            "entries": [[_json_float(v) for v in row] for row in self.entries],
            "flags": list(self.flags),
        }


def _json_float(v: float):
    return v if np.isfinite(v) else str(v)


def _condition(f: np.ndarray) -> float:
    # condition number of the correlation-normalised matrix, so that mixing
    # time-like and dimensionless parameters does not register as ill-conditioning
    finite = np.isfinite(np.diag(f))
    f = f[np.ix_(finite, finite)]
    if f.size == 0:
        return 1.0
    d = np.sqrt(np.abs(np.diag(f)))
    if np.any(d == 0):
        return np.inf
    ev = np.linalg.eigvalsh(f / np.outer(d, d))
    if ev[0] <= 0:
        return np.inf
    return float(ev[-1] / ev[0])


def _to_physical(f: np.ndarray, sigma: float) -> np.ndarray:
    s = np.array([1.0 / sigma, 1.0 / sigma, 1.0])
    return f * np.outer(s, s)


def direct_fisher(p: PulseParams, n_photons: float = 1.0) -> FisherMatrix:
    """``F_kl = N int dI/dk dI/dl / I dt`` for intensity detection.

    Integrated with the composite Gauss-Legendre rule of
    :mod:`qtiming.pulse_modes` over the window around both pulse centres.
    """
    lo, hi = quadrature_window(p.shape, p.centers)
    t, w = quadrature_rule(lo, hi)
    i_t = intensity(t, p)
    grad = intensity_gradient(t, p)
    f = n_photons * np.einsum("kt,lt,t->kl", grad, grad, w / i_t)
    flags = ("singular",) if _condition(f) > COND_LIMIT else ()
    return FisherMatrix(f, n_photons, "direct", flags)


def _pulse_amplitudes(theta, projectors: ProjectorSet):
    """Per-pulse amplitudes on each channel and their parameter gradients."""
    tau0, tau, q = theta
    centers = np.array([tau0 - tau / 2, tau0 + tau / 2])
    amp = projectors.amplitudes(overlap_coefficients(centers / 2.0, 4))
    damp_dc = 0.5 * projectors.amplitudes(overlap_derivatives(centers / 2.0, 4))
    # gradient w.r.t. (tau0, tau); q does not move the amplitudes
    dcenter = np.array([[1.0, -0.5], [1.0, 0.5]])
    grad = damp_dc[:, :, None] * dcenter[:, None, :]
    weights = np.array([q, 1.0 - q])
    return weights, amp, grad


def _sink_probability(theta):
    # 1 - sum_{n<4} c_n^2 summed over pulses, without cancellation
    tau0, tau, q = theta
    d = np.array([tau0 - tau / 2, tau0 + tau / 2]) / 2.0
    x = d * d
    w = np.array([q, 1.0 - q])
    tail = gammainc(4, x)
    dtail = d * x ** 3 * np.exp(-x) / 6.0  # d tail / d centre
    grad = np.array([w @ dtail, -0.5 * w[0] * dtail[0] + 0.5 * w[1] * dtail[1], tail[0] - tail[1]])
    return float(w @ tail), grad


def povm_fisher(p: PulseParams, projectors: ProjectorSet | None = None, n_photons: float = 1.0,
                counting: str = "multinomial", efficiency: float = 1.0) -> FisherMatrix:
    """Classical Fisher information of the projector measurement.

    ``counting='multinomial'`` treats the four channels and the sink as one
    five-outcome experiment with ``N`` detected photons. ``'sequential'``
    measures each channel separately with ``N // 4`` trials (binomial each).

    Outcomes with probability below ``1e-14`` use the analytic limit of
    ``(dp)^2 / p`` through the vanishing amplitudes; if that limit is not
    unique the outcome is dropped and flagged. At ``tau < 1e-6 sigma`` the
    matrix is evaluated at the floor and flagged ``tau_floor``.
    """
    projectors = projectors or canonical_projectors()
    if counting not in ("multinomial", "sequential"):
        raise ValueError(f"unknown counting model {counting!r}")
    if not 0.0 < efficiency <= 1.0:
        raise ValueError("efficiency must lie in (0, 1]")
    flags = []
    theta = p.dimensionless()
    if theta[1] < TAU_FLOOR:
        theta[1] = TAU_FLOOR
        flags.append("tau_floor")

    weights, amp, grad = _pulse_amplitudes(theta, projectors)
    power = np.abs(amp) ** 2
    probs = weights @ power
    # d|a|^2 = 2 Re(conj(a) da)
    dpow = 2.0 * np.real(np.conj(amp)[:, :, None] * grad)
    jac = np.empty((4, 3))
    jac[:, :2] = np.einsum("w,wjk->jk", weights, dpow)
    jac[:, 2] = power[0] - power[1]

    eta = efficiency
    info = np.zeros((3, 3))
    for j in range(4):
        if probs[j] >= P_TINY:
            if counting == "multinomial":
                info += eta * np.outer(jac[j], jac[j]) / probs[j]
            else:
                info += eta * np.outer(jac[j], jac[j]) / (probs[j] * (1.0 - eta * probs[j]))
            continue
        # p ~ sum_w w |g_w . dtheta|^2 near a zero of the amplitudes
        m = np.zeros((3, 3))
        for wi in range(2):
            if weights[wi] > 0:
                g = np.zeros(3, dtype=complex)
                g[:2] = grad[wi, j]
                m += weights[wi] * (np.outer(g.real, g.real) + np.outer(g.imag, g.imag))
        ev = np.linalg.eigvalsh(m)
        if ev[-2] <= 1e-12 * max(ev[-1], 1e-300):
            info += 4.0 * eta * m
        else:
            flags.append(f"degenerate_outcome_{j}")

    if counting == "multinomial":
        if eta == 1.0 and projectors.completeness_error() <= 1e-12:
            p_sink, dsink = _sink_probability(theta)
        else:
            p_sink, dsink = 1.0 - eta * probs.sum(), -eta * jac.sum(axis=0)
        if p_sink > 0:
            info += np.outer(dsink, dsink) / p_sink
        n_eff = n_photons
    else:
        n_eff = n_photons // 4

    f = _to_physical(n_eff * info, p.sigma)
    if _condition(f) > COND_LIMIT:
        flags.append("singular")
    return FisherMatrix(f, n_photons, "povm", tuple(flags))


def _density_and_derivatives(theta, n_modes: int):
    tau0, tau, q = theta
    d = np.array([tau0 - tau / 2, tau0 + tau / 2]) / 2.0
    a, b = overlap_coefficients(d, n_modes)
    da, db = 0.5 * overlap_derivatives(d, n_modes)
    rho = q * np.outer(a, a) + (1 - q) * np.outer(b, b)
    sym = lambda x, y: np.outer(x, y) + np.outer(y, x)
    d_shift_a, d_shift_b = q * sym(da, a), (1 - q) * sym(db, b)
    drho = [
        d_shift_a + d_shift_b,
        -0.5 * d_shift_a + 0.5 * d_shift_b,
        np.outer(a, a) - np.outer(b, b),
    ]
    return rho, drho


def sld_qfi(rho: np.ndarray, drho, eps: float = EPS_SLD) -> np.ndarray:
    """QFI matrix ``Re tr(rho L_k L_l)`` from the eigendecomposition of ``rho``.

    ``(L_k)_ij = 2 <i|d_k rho|j> / (l_i + l_j)`` whenever
    ``l_i + l_j > eps * max(l)``, zero otherwise.

    If ``d_k rho`` has weight inside the kernel of ``rho`` (e.g. a mixing
    weight at 0 or 1), the state sits on the boundary of the physical
    region: the Bures distance grows like the square root of the
    displacement and ``Q_kk`` is ``inf``. Off-diagonal entries keep their
    support value.
    """
    lam, vec = np.linalg.eigh(rho)
    den = lam[:, None] + lam[None, :]
    keep = den > eps * lam.max()
    inv = np.where(keep, 2.0 / np.where(keep, den, 1.0), 0.0)
    rotated = [vec.conj().T @ d @ vec for d in drho]
    sld = [inv * r for r in rotated]
    rho_diag = np.diag(lam)
    k = len(drho)
    q = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            q[i, j] = q[j, i] = np.real(np.trace(rho_diag @ sld[i] @ sld[j]))
    kernel = lam <= eps * lam.max()
    if np.any(kernel):
        for i, r in enumerate(rotated):
            leak = np.linalg.norm(r[np.ix_(kernel, kernel)])
            if leak > KERNEL_LEAK_RTOL * np.linalg.norm(r):
                q[i, i] = np.inf
    return q


def _qfi_dimensionless(theta, n_modes: int) -> np.ndarray:
    rho, drho = _density_and_derivatives(theta, n_modes)
    return sld_qfi(rho, drho)


def _qfi_gram(theta) -> np.ndarray:
    """QFI in the span of both pulses and their shift derivatives.

    The Gram matrix of ``a, b, da, db`` follows from the Gaussian overlap
    ``<u(. - x)|u(. - y)> = exp(-(x - y)^2 / 8)``; a Cholesky factor gives
    orthonormal coordinates, and the SLD formula is applied in extended
    precision. No basis truncation is involved.
    """
    with mpmath.workdps(EXACT_DPS):
        tau0, tau, q = (mpmath.mpf(float(v)) for v in theta)
        d = (tau0 - tau / 2) - (tau0 + tau / 2)
        g = mpmath.exp(-d * d / 8)
        gram = mpmath.matrix([
            [1, g, 0, d / 4 * g],
            [g, 1, -d / 4 * g, 0],
            [0, -d / 4 * g, mpmath.mpf(1) / 4, (mpmath.mpf(1) / 4 - d * d / 16) * g],
            [d / 4 * g, 0, (mpmath.mpf(1) / 4 - d * d / 16) * g, mpmath.mpf(1) / 4],
        ])
        chol = mpmath.cholesky(gram)
        a, b, da, db = (chol[i, :].T for i in range(4))
        outer = lambda x, y: x * y.T
        rho = q * outer(a, a) + (1 - q) * outer(b, b)
        sa, sb = q * (outer(da, a) + outer(a, da)), (1 - q) * (outer(db, b) + outer(b, db))
        drho = [sa + sb, -sa / 2 + sb / 2, outer(a, a) - outer(b, b)]
        lam, vec = mpmath.eigsy(rho)
        lmax = max(lam)
        cut = mpmath.mpf(10) ** (-EXACT_DPS // 2) * lmax
        rotated = [vec.T * m * vec for m in drho]
        out = np.empty((3, 3))
        for i in range(3):
            for j in range(i, 3):
                acc = mpmath.mpf(0)
                for u in range(4):
                    for v in range(4):
                        if lam[u] + lam[v] > cut:
                            acc += 2 * rotated[i][u, v] * rotated[j][v, u] / (lam[u] + lam[v])
                out[i, j] = out[j, i] = float(acc)
        kernel = [u for u in range(4) if lam[u] <= cut]
        for i, r in enumerate(rotated):
            leak = mpmath.sqrt(sum(r[u, v] ** 2 for u in kernel for v in kernel))
            if leak > KERNEL_LEAK_RTOL * mpmath.mnorm(r, "f"):
                out[i, i] = np.inf
    return out


def qfi_matrix(p: PulseParams, n_modes: int = N_TRUNC, n_photons: float = 1.0,
               check_convergence: bool = True) -> FisherMatrix:
    """Quantum Fisher information of the two-pulse mixture.

    The rank-two density matrix is built in the first ``n_modes`` HG modes.
    With ``check_convergence`` the computation is repeated at ``2 n_modes``
    and flagged ``truncation`` if any entry moves by more than 1e-6 of the
    largest entry. Separations below ``QFI_EXACT_BELOW`` use the closed-form
    Gram representation instead (no truncation); separations below
    ``TAU_FLOOR`` are evaluated at the floor and flagged ``tau_floor``, as
    for :func:`povm_fisher`. A mixing weight of exactly 0 or 1 gives an
    infinite ``(q, q)`` entry, flagged ``support_change``.
    """
    if n_modes < 8:
        raise ValueError("n_modes must be at least 8")
    flags = []
    theta = p.dimensionless()
    if theta[1] < TAU_FLOOR:
        theta[1] = TAU_FLOOR
        flags.append("tau_floor")
    if theta[1] < QFI_EXACT_BELOW:
        q = _qfi_gram(theta)
    else:
        q = _qfi_dimensionless(theta, n_modes)
        if check_convergence:
            q2 = _qfi_dimensionless(theta, 2 * n_modes)
            fin = np.isfinite(q2) & np.isfinite(q)
            if np.any(np.isfinite(q2) != np.isfinite(q)) or \
                    np.abs(q2[fin] - q[fin]).max() > QFI_CONVERGENCE_RTOL * np.abs(q2[fin]).max():
                flags.append("truncation")
    if np.any(np.isinf(np.diag(q))):
        flags.append("support_change")
    f = _to_physical(n_photons * q, p.sigma)
    if _condition(f) > COND_LIMIT:
        flags.append("singular")
    return FisherMatrix(f, n_photons, "quantum", tuple(flags))


def _select(subset) -> list[int]:
    if subset is None:
        return [0, 1, 2]
    if all(isinstance(s, (bool, np.bool_)) for s in subset) and len(subset) == 3:
        return [i for i, s in enumerate(subset) if s]
    return [PARAM_INDEX[s] if isinstance(s, str) else int(s) for s in subset]


def _bounded_inverse(f: np.ndarray):
    infinite = ~np.isfinite(np.diag(f))
    if np.any(infinite):
        # infinite information pins a parameter; the others see the finite block
        out = np.zeros_like(f)
        rest = ~infinite
        singular = False
        if np.any(rest):
            out[np.ix_(rest, rest)], singular = _bounded_inverse(f[np.ix_(rest, rest)])
        return out, singular
    cond = _condition(f)
    if cond <= COND_LIMIT:
        return np.linalg.inv(f), False
    lam, vec = np.linalg.eigh(f)
    tol = COND_LIMIT ** -1 * max(lam.max(), 0.0)
    keep = lam > tol
    inv = (vec[:, keep] / lam[keep]) @ vec[:, keep].T
    # any parameter with weight on the null space has no finite bound
    null = vec[:, ~keep]
    unbounded = np.any(np.abs(null) > 1e-8, axis=1)
    for i in np.flatnonzero(unbounded):
        inv[i, i] = np.inf
    return inv, True


def crlb(f: FisherMatrix, subset=None, nuisance: str = "joint") -> CRLBMatrix:
    """Cramer-Rao bound for the parameters in ``subset``.

    ``nuisance='joint'`` inverts the full matrix (the other parameters are
    estimated as well); ``'fixed'`` inverts only the selected block (the other
    parameters are known). ``subset`` is a boolean mask, parameter names or
    indices; ``None`` selects all three.

    A singular or ill-conditioned (condition > 1e12) matrix yields a
    pseudo-inverse flagged ``singular``; diagonal entries of parameters
    touching the null space are ``inf``.
    """
    idx = _select(subset)
    m = f.entries
    if nuisance == "joint":
        inv, singular = _bounded_inverse(m)
        out = inv[np.ix_(idx, idx)]
    elif nuisance == "fixed":
        out, singular = _bounded_inverse(m[np.ix_(idx, idx)])
    else:
        raise ValueError(f"nuisance must be 'joint' or 'fixed', got {nuisance!r}")
    flags = ("singular",) if singular else ()
    return CRLBMatrix(out, tuple(PARAM_NAMES[i] for i in idx), nuisance, flags)


def save_matrix(path, matrix) -> None:
    with open(path, "w") as fh:
        json.dump(matrix.to_json(), fh, indent=2)
        fh.write("\n")
