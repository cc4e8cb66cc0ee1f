import csv

import numpy as np
import pytest

from qtiming.frog import (
    FrogGrid,
    FrogGridError,
    Spectrogram,
    incoherent_spectrogram,
    cross_term_closed_form,
    rayleigh_scan,
    shg_frog,
    write_rayleigh,
)
from qtiming.pulse_modes import PulseShape

GRID = FrogGrid()
SMALL = FrogGrid(n_samples=256, half_width=16.0, max_delay=4.0)


def analytic_incoherent(tau, omega, delay):
    """Phase-averaged SHG FROG of two unit Gaussians (sigma = 1), closed form."""
    w, t = np.meshgrid(omega, delay)
    cross = np.exp(-((t - tau) ** 2) / 8) + np.exp(-((t + tau) ** 2) / 8)
    return np.exp(-w ** 2) * (2 * np.exp(-t ** 2 / 4) + cross ** 2)


def test_single_pulse_matches_gaussian_oracle():
    s = shg_frog(GRID.field(), GRID.t_axis, GRID.delay_steps())
    w, t = np.meshgrid(s.omega_axis, s.delay_axis)
    assert np.allclose(s.values, np.exp(-t ** 2 / 4) * np.exp(-w ** 2), atol=1e-12)


@pytest.mark.parametrize("tau", [0.0, 0.3, 1.0, 2.5])
def test_incoherent_matches_closed_form(tau):
    s = incoherent_spectrogram(tau, SMALL)
    assert np.allclose(s.values, analytic_incoherent(tau, s.omega_axis, s.delay_axis), atol=1e-12)


def test_zero_separation_is_six_single_pulses():
    single = shg_frog(SMALL.field(), SMALL.t_axis, SMALL.delay_steps()).values
    assert np.allclose(incoherent_spectrogram(0.0, SMALL).values, 6 * single, rtol=1e-13, atol=1e-15)


def test_phase_count_independence():
    a = incoherent_spectrogram(0.7, SMALL, n_phases=5).values
    b = incoherent_spectrogram(0.7, SMALL, n_phases=64).values
    assert np.abs(a - b).max() <= 1e-13 * a.max()
    with pytest.raises(ValueError):
        incoherent_spectrogram(0.7, SMALL, n_phases=4)


def test_parity():
    v = incoherent_spectrogram(0.9, SMALL).values
    # omega axis from fftshift has one unpaired Nyquist bin at index 0
    assert np.allclose(v, v[::-1, :], rtol=1e-12, atol=1e-14 * v.max())
    assert np.allclose(v[:, 1:], v[:, :0:-1], rtol=1e-10, atol=1e-14 * v.max())


def test_parseval_per_delay():
    e = SMALL.field(0.4) + 0.5 * SMALL.field(-0.6)
    steps = SMALL.delay_steps()
    s = shg_frog(e, SMALL.t_axis, steps)
    dt = SMALL.dt
    for k, step in enumerate(steps[::16]):
        shifted = np.roll(e, step)
        shifted[: max(step, 0)] = 0
        if step < 0:
            shifted[step:] = 0
        energy = np.sum(np.abs(e * shifted) ** 2) * dt
        row = s.values[list(steps).index(step)]
        assert row.sum() * s.d_omega / (2 * np.pi) == pytest.approx(energy, rel=1e-12)


def test_time_shift_invariance():
    a = shg_frog(SMALL.field(0.0), SMALL.t_axis, SMALL.delay_steps()).values
    b = shg_frog(SMALL.field(1.3), SMALL.t_axis, SMALL.delay_steps()).values
    assert np.allclose(a, b, atol=1e-13)


def test_sigma_scaling():
    # unit-energy fields: stretching time by sigma leaves the values unchanged
    wide = FrogGrid(n_samples=256, half_width=16.0, max_delay=4.0, shape=PulseShape(2.0))
    a = incoherent_spectrogram(0.5, SMALL)
    b = incoherent_spectrogram(1.0, wide)
    assert np.allclose(b.delay_axis, 2 * a.delay_axis)
    assert np.allclose(2 * b.omega_axis, a.omega_axis)
    assert np.allclose(b.values, a.values, atol=1e-13)


def test_grid_errors():
    narrow = FrogGrid(n_samples=64, half_width=3.0, max_delay=1.0)
    with pytest.raises(FrogGridError):
        incoherent_spectrogram(0.5, narrow)
    t = np.linspace(-16, 16, 128) ** 3 / 256
    with pytest.raises(FrogGridError):
        shg_frog(np.exp(-t ** 2), t)
    with pytest.raises(FrogGridError):
        shg_frog(np.ones(3), np.arange(4.0))


def test_binary_and_csv_round_trip(tmp_path):
    s = incoherent_spectrogram(0.5, SMALL, delay_steps=np.arange(-3, 4))
    s.save_binary(tmp_path / "s.bin")
    back = Spectrogram.load_binary(tmp_path / "s.bin")
    assert back.values.tolist() == s.values.tolist()
    assert np.allclose(back.omega_axis, s.omega_axis, rtol=1e-14)
    assert np.allclose(back.delay_axis, s.delay_axis, rtol=1e-14, atol=1e-15)
    blob = (tmp_path / "s.bin").read_bytes()
    assert blob[:8] == b"QTFROG01" and len(blob) == 64 + 8 * s.values.size
    with pytest.raises(ValueError):
        Spectrogram.from_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(ValueError):
        Spectrogram.from_bytes(blob[:-8])
    s.to_csv(tmp_path / "s.csv")
    with open(tmp_path / "s.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == s.values.size
    assert float(rows[1]["value"]) == s.values[0, 1]


def test_spectrogram_validation():
    with pytest.raises(ValueError):
        Spectrogram(np.ones((2, 3)), np.arange(2.0), np.arange(3.0))
    with pytest.raises(ValueError):
        Spectrogram(-np.ones((2, 2)), np.arange(2.0), np.arange(2.0))


def test_cross_term_form_shape():
    v = cross_term_closed_form(0.5, SMALL, np.arange(-2, 3))
    assert v.shape == (5, SMALL.n_samples) and np.iscomplexobj(v)


def _analytic_probe(tau, delay):
    return 2 * np.exp(-delay ** 2 / 4) + (np.exp(-((delay - tau) ** 2) / 8) + np.exp(-((delay + tau) ** 2) / 8)) ** 2


def test_rayleigh_scan_against_closed_form(tmp_path):
    taus = [0.05, 0.2, 0.8]
    rows = rayleigh_scan(taus, probe=(0.0, 1.0), noise_var=2.0, grid=SMALL)
    for r in rows:
        h = 1e-6
        d = (_analytic_probe(r.tau + h, 1.0) - _analytic_probe(r.tau - h, 1.0)) / (2 * h)
        assert r.intensity == pytest.approx(_analytic_probe(r.tau, 1.0), rel=1e-12)
        assert r.derivative == pytest.approx(d, rel=1e-3)
        assert r.variance == pytest.approx(2.0 / d ** 2, rel=2e-3)
    write_rayleigh(tmp_path / "r.csv", rows)
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "tau,intensity,d_intensity_d_tau,var_tau"


def test_rayleigh_small_separation_scaling():
    rows = rayleigh_scan([0.01, 0.02], grid=SMALL)
    i0 = _analytic_probe(0.0, 1.0)
    slope = np.log((rows[1].intensity - i0) / (rows[0].intensity - i0)) / np.log(2)
    assert slope == pytest.approx(2.0, abs=1e-2)
    assert np.log(rows[1].variance / rows[0].variance) / np.log(2) == pytest.approx(-2.0, abs=1e-2)


def test_rayleigh_errors():
    assert rayleigh_scan([], grid=SMALL) == []
    with pytest.raises(ValueError):
        rayleigh_scan([0.0, 0.1], grid=SMALL)
    with pytest.raises(ValueError):
        rayleigh_scan([0.2, 0.1], grid=SMALL)
    with pytest.raises(ValueError):
        rayleigh_scan([0.1], noise_var=0, grid=SMALL)
    with pytest.raises(ValueError):
        rayleigh_scan([0.1], probe=(90.0, 0.0), grid=SMALL)
