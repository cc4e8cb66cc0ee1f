"""SHG-FROG spectrograms of one pulse and of an incoherent pulse pair.

The signal field at delay ``T`` is ``E(t) E(t - T)``; delays are whole
multiples of the sample spacing so no interpolation enters. Spectrogram
values are indexed ``[delay, omega]`` and carry the continuous-transform
normalisation ``|dt * DFT|^2``.

An incoherent pair ``E(t - tau/2) + exp(i phi) E(t + tau/2)`` is handled
by averaging over equally spaced phases. The SHG signal contains
``exp(i k phi)`` only for ``|k| <= 2``, so any ``n >= 5`` phases give the
exact average.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .pulse_modes import PulseShape, hg_mode_value

#: Default sampling: 1024 points spanning [-16, 16) sigma.
FROG_SAMPLES = 1024
FROG_HALF_WIDTH = 16.0
#: Default delays cover |T| <= 8 sigma.
FROG_MAX_DELAY = 8.0
MIN_PHASES = 5
BOUNDARY_RTOL = 1e-8
UNIFORM_RTOL = 1e-9
#: Central-difference step for d I / d tau, relative to tau.
DERIV_REL_STEP = 1e-2
PROBE_MIN_REL = 1e-12
#: Default probe point (omega, T) in units of (1/sigma, sigma).
DEFAULT_PROBE = (0.0, 1.0)

BINARY_MAGIC = b"QTFROG01"
BINARY_VERSION = 1
_DTYPE_F64_LE = 1
#: magic, version, n_delay, n_omega, dtype, delay0, d_delay, omega0, d_omega, pad
BINARY_HEADER = struct.Struct("<8s4I4d8x")


class FrogGridError(ValueError):
    """Non-uniform sampling or a field that does not vanish at the edges."""


@dataclass(frozen=True)
class FrogGrid:
    n_samples: int = FROG_SAMPLES
    half_width: float = FROG_HALF_WIDTH
    max_delay: float = FROG_MAX_DELAY
    shape: PulseShape = PulseShape()

    @property
    def dt(self) -> float:
        return 2.0 * self.half_width * self.shape.sigma / self.n_samples

    @property
    def t_axis(self) -> np.ndarray:
        return (np.arange(self.n_samples) - self.n_samples // 2) * self.dt

    def delay_steps(self) -> np.ndarray:
        k = int(np.floor(self.max_delay * self.shape.sigma / self.dt + 1e-9))
        return np.arange(-k, k + 1)

    def field(self, shift: float = 0.0) -> np.ndarray:
        """Gaussian amplitude ``E(t - shift)`` on the grid (zero carrier)."""
        return hg_mode_value(0, self.t_axis - shift, self.shape).astype(complex)


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray        # [delay, omega]
    omega_axis: np.ndarray
    delay_axis: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.delay_axis), len(self.omega_axis)):
            raise ValueError("values must be indexed [delay, omega]")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("spectrogram values must be finite and non-negative")
        for ax in (self.omega_axis, self.delay_axis):
            _check_uniform(np.asarray(ax, dtype=float))
        object.__setattr__(self, "values", v)

    @property
    def d_omega(self) -> float:
        return float(self.omega_axis[1] - self.omega_axis[0]) if len(self.omega_axis) > 1 else 0.0

    @property
    def d_delay(self) -> float:
        return float(self.delay_axis[1] - self.delay_axis[0]) if len(self.delay_axis) > 1 else 0.0

    def at(self, omega: float, delay: float) -> float:
        """Value at the grid point nearest to ``(omega, delay)``."""
        i = int(np.argmin(np.abs(self.delay_axis - delay)))
        j = int(np.argmin(np.abs(self.omega_axis - omega)))
        return float(self.values[i, j])

    def to_csv(self, path) -> None:
        """Long format: ``omega,T,value`` with T outermost."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["omega", "T", "value"])
            for i, d in enumerate(self.delay_axis):
                for j, om in enumerate(self.omega_axis):
                    w.writerow([repr(float(om)), repr(float(d)), repr(float(self.values[i, j]))])

    def to_bytes(self) -> bytes:
        """64-byte header then ``values`` as little-endian float64, row-major.

        Header (``<8s4I4d8x``): magic ``QTFROG01``, format version, number
        of delays, number of frequencies, dtype code (1 = float64 LE),
        first delay, delay step, first frequency, frequency step, 8 bytes
        of padding.
        """
        head = BINARY_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, len(self.delay_axis), len(self.omega_axis),
                                  _DTYPE_F64_LE, float(self.delay_axis[0]), self.d_delay,
                                  float(self.omega_axis[0]), self.d_omega)
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Spectrogram":
        magic, version, n_delay, n_omega, dtype, d0, dd, w0, dw = BINARY_HEADER.unpack_from(blob)
        if magic != BINARY_MAGIC or version != BINARY_VERSION or dtype != _DTYPE_F64_LE:
            raise ValueError("not a spectrogram file of a supported version")
        body = np.frombuffer(blob, dtype="<f8", offset=BINARY_HEADER.size)
        if body.size != n_delay * n_omega:
            raise ValueError("truncated spectrogram file")
        return cls(body.reshape(n_delay, n_omega).astype(float),
                   w0 + dw * np.arange(n_omega), d0 + dd * np.arange(n_delay))

    def save_binary(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load_binary(cls, path) -> "Spectrogram":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _check_uniform(axis: np.ndarray) -> float:
    if axis.ndim != 1 or len(axis) < 1:
        raise FrogGridError("axis must be one-dimensional and non-empty")
    if len(axis) == 1:
        return 0.0
    d = np.diff(axis)
    step = float(d.mean())
    if step <= 0 or np.abs(d - step).max() > UNIFORM_RTOL * step:
        raise FrogGridError("axis is not uniform and strictly increasing")
    return step


def _signal_products(fields, delay_steps) -> list[np.ndarray]:
    """``E(t) E(t - T)`` rows for each field, zero where ``t - T`` is off-grid."""
    n = fields[0].size
    idx = np.arange(n)[None, :] - delay_steps[:, None]
    valid = (idx >= 0) & (idx < n)
    idx = np.clip(idx, 0, n - 1)
    return [np.where(valid, e[None, :] * e[idx], 0.0) for e in fields]


def _axes(t_axis, delay_steps, dt):
    n = t_axis.size
    omega = np.fft.fftshift(2.0 * np.pi * np.fft.fftfreq(n, dt))
    return omega, delay_steps * dt


def _spectrum_power(prod, dt) -> np.ndarray:
    spec = np.fft.fftshift(np.fft.fft(prod, axis=1), axes=1) * dt
    return spec.real ** 2 + spec.imag ** 2


def _validate_field(e: np.ndarray, t_axis: np.ndarray) -> float:
    if e.shape != t_axis.shape:
        raise FrogGridError("field and time axis differ in length")
    dt = _check_uniform(t_axis)
    if len(t_axis) < 2:
        raise FrogGridError("need at least two samples")
    peak = np.abs(e).max()
    if peak == 0 or max(abs(e[0]), abs(e[-1])) >= BOUNDARY_RTOL * peak:
        raise FrogGridError("field does not vanish at the grid edges; widen the window")
    return dt


def shg_frog(e, t_axis, delay_steps=None) -> Spectrogram:
    """``|int E(t) E(t - T) exp(-i omega t) dt|^2`` on the sample grid.

    ``delay_steps`` are integer shifts ``T / dt`` (default: every shift up
    to half the window).
    """
    e = np.asarray(e, dtype=complex)
    t_axis = np.asarray(t_axis, dtype=float)
    dt = _validate_field(e, t_axis)
    if delay_steps is None:
        delay_steps = np.arange(-(e.size // 4), e.size // 4 + 1)
    steps = np.asarray(delay_steps, dtype=np.int64)
    (prod,) = _signal_products([e], steps)
    omega, delays = _axes(t_axis, steps, dt)
    return Spectrogram(_spectrum_power(prod, dt), omega, delays)


def incoherent_spectrogram(tau: float, grid: FrogGrid = FrogGrid(), n_phases: int = MIN_PHASES,
                           delay_steps=None) -> Spectrogram:
    """Phase-averaged spectrogram of ``E(t - tau/2) + exp(i phi) E(t + tau/2)``.

    Averages over ``phi_k = 2 pi k / n_phases``.
    """
    if n_phases < MIN_PHASES:
        raise ValueError(f"need at least {MIN_PHASES} phases for an exact average")
    t_axis = grid.t_axis
    a, b = grid.field(tau / 2), grid.field(-tau / 2)
    dt = _validate_field(a, t_axis)
    _validate_field(b, t_axis)
    steps = grid.delay_steps() if delay_steps is None else np.asarray(delay_steps, dtype=np.int64)
    total = np.zeros((steps.size, t_axis.size))
    for k in range(n_phases):
        phase = np.exp(2j * np.pi * k / n_phases)
        (prod,) = _signal_products([a + phase * b], steps)
        total += _spectrum_power(prod, dt)
    omega, delays = _axes(t_axis, steps, dt)
    return Spectrogram(total / n_phases, omega, delays)


def cross_term_closed_form(tau: float, grid: FrogGrid = FrogGrid(), delay_steps=None) -> np.ndarray:
    """Cross-term expression ``2 cos(tau T) I_SHG(omega, T) + A(tau) A(-tau)``.

    ``A(tau) = int E(t - tau/2) E(t + tau/2 - T) exp(-i omega t) dt``.
    Returned as a complex array ``[delay, omega]`` for comparison only;
    :func:`incoherent_spectrogram` is the reference.
    """
    t_axis = grid.t_axis
    dt = grid.dt
    steps = grid.delay_steps() if delay_steps is None else np.asarray(delay_steps, dtype=np.int64)
    e = grid.field()
    single = _spectrum_power(_signal_products([e], steps)[0], dt)

    def amplitude(s):
        # E(t + s/2 - T) sampled as the shifted field at integer delay T
        first = grid.field(s / 2)
        second = grid.field(-s / 2)
        n = e.size
        idx = np.arange(n)[None, :] - steps[:, None]
        valid = (idx >= 0) & (idx < n)
        prod = np.where(valid, first[None, :] * second[np.clip(idx, 0, n - 1)], 0.0)
        return np.fft.fftshift(np.fft.fft(prod, axis=1), axes=1) * dt

    delays = steps * dt
    return 2.0 * np.cos(tau * delays)[:, None] * single + amplitude(tau) * amplitude(-tau)


@dataclass(frozen=True)
class RayleighRow:
    tau: float
    intensity: float
    derivative: float
    variance: float


def _probe_value(tau: float, grid: FrogGrid, step: int, j: int, n_phases: int) -> float:
    return float(incoherent_spectrogram(tau, grid, n_phases, np.array([step])).values[0, j])


def rayleigh_scan(taus, probe=DEFAULT_PROBE, noise_var: float = 1.0, grid: FrogGrid = FrogGrid(),
                  n_phases: int = MIN_PHASES) -> list[RayleighRow]:
    """Error propagation ``var(tau) = var(I) / (dI/dtau)^2`` at one probe point.

    ``probe = (omega, T)`` is moved to the nearest grid point. ``dI/dtau``
    is a central difference with step ``DERIV_REL_STEP * tau``. Probe points
    where the spectrogram is below ``1e-12`` of its peak are rejected.
    """
    taus = np.asarray(taus, dtype=float)
    if taus.size == 0:
        return []
    if np.any(taus <= 0) or np.any(np.diff(taus) <= 0):
        raise ValueError("separations must be positive and increasing")
    if not noise_var > 0:
        raise ValueError("noise variance must be positive")
    omega_axis, _ = _axes(grid.t_axis, np.zeros(1, dtype=np.int64), grid.dt)
    j = int(np.argmin(np.abs(omega_axis - probe[0])))
    step = int(round(probe[1] / grid.dt))
    ref = incoherent_spectrogram(float(taus[0]), grid, n_phases)
    if ref.at(omega_axis[j], step * grid.dt) < PROBE_MIN_REL * ref.values.max():
        raise ValueError("probe point lies where the spectrogram vanishes")
    rows = []
    for tau in taus:
        h = DERIV_REL_STEP * tau
        value = _probe_value(tau, grid, step, j, n_phases)
        deriv = float(_probe_value(tau + h, grid, step, j, n_phases)
                      - _probe_value(tau - h, grid, step, j, n_phases)) / (2 * h)
        var = noise_var / deriv ** 2 if deriv != 0 else float("inf")
        rows.append(RayleighRow(float(tau), float(value), float(deriv), float(var)))
    return rows


def write_rayleigh(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "intensity", "d_intensity_d_tau", "var_tau"])
        for r in rows:
            w.writerow([repr(r.tau), repr(r.intensity), repr(r.derivative), repr(r.variance)])
