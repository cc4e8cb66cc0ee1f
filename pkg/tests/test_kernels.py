import numpy as np
import pytest
from scipy.special import gammainc

from qtiming import _core_py, kernels
from qtiming.estimation import start_grid
from qtiming.measurement import ExactForward, ResponseModel, canonical_projectors

BACKENDS = kernels.available()
PROJ = np.ascontiguousarray(canonical_projectors().matrix.real)
POLY = np.random.default_rng(3).normal(scale=0.05, size=(4, 10))
LO, HI = np.array([-1.0, 0.0, 0.0]), np.array([1.0, 3.0, 1.0])
THETAS = [(0.0, 0.0, 0.5), (0.3, 1.2, 0.2), (-0.8, 2.9, 0.9), (0.05, 1e-3, 0.0)]


def test_backend_listing():
    assert "python" in BACKENDS
    assert kernels.BACKEND in BACKENDS
    with pytest.raises(ValueError):
        kernels.load("fortran")


@pytest.mark.parametrize("x", [0.0, 1e-12, 1e-4, 0.3, 0.999, 1.0, 2.5, 40.0])
def test_tail4_matches_regularised_gamma(x):
    assert _core_py._tail4(x) == pytest.approx(gammainc(4, x), rel=1e-13, abs=1e-300)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("theta", THETAS)
@pytest.mark.parametrize("eta", [1.0, 0.4])
def test_exact_probabilities_match_forward_model(backend, theta, eta):
    core = kernels.load(backend)
    got = core.probabilities(np.array(theta), kernels.FORWARD_EXACT, PROJ, eta, True)
    ref = ExactForward(efficiency=eta)(np.array(theta))
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("backend", BACKENDS)
def test_poly_probabilities_match_response_model(backend):
    core = kernels.load(backend)
    model = ResponseModel(POLY, {"tau0": (-1, 1), "tau": (0, 3), "q": (0, 1)})
    theta = np.array([0.2, 0.7, 0.4])
    got = core.probabilities(theta, kernels.FORWARD_POLY, POLY, 1.0, False)
    assert np.allclose(got[:4], model(theta)[:4], rtol=1e-13)
    assert got[4] == pytest.approx(1 - sum(got[:4]))


def _cases():
    data = np.array([120.0, 40.0, 300.0, 500.0, 40.0])
    return [
        (kernels.FORWARD_EXACT, PROJ, kernels.LOSS_MULTINOMIAL, data, np.zeros(5)),
        (kernels.FORWARD_EXACT, PROJ, kernels.LOSS_SEQUENTIAL, np.array([30.0, 5.0, 80.0, 120.0, 250.0]), np.zeros(5)),
        (kernels.FORWARD_EXACT, PROJ, kernels.LOSS_WLS, data / data.sum(), np.full(5, 1e3)),
    ]


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")
@pytest.mark.parametrize("case", range(3))
def test_backends_agree(case):
    fwd, fp, loss, data, w = _cases()[case]
    cy, py = kernels.load("cython"), kernels.load("python")
    pts = start_grid(np.column_stack([LO, HI]))
    a = np.array(cy.evaluate_many(pts, fwd, fp, 1.0, True, loss, data, w))
    b = np.array(py.evaluate_many(pts, fwd, fp, 1.0, True, loss, data, w))
    assert np.allclose(a, b, rtol=1e-11, atol=1e-11)
    ra = cy.minimize(pts, LO, HI, fwd, fp, 1.0, True, loss, data, w)
    rb = py.minimize(pts, LO, HI, fwd, fp, 1.0, True, loss, data, w)
    assert np.allclose(ra[0], rb[0], atol=1e-7)
    assert ra[1] == pytest.approx(rb[1], rel=1e-8, abs=1e-10)


@pytest.mark.parametrize("backend", BACKENDS)
def test_minimize_stays_in_box_and_recovers_truth(backend):
    core = kernels.load(backend)
    truth = np.array([0.1, 0.9, 0.3])
    p = np.array(core.probabilities(truth, kernels.FORWARD_EXACT, PROJ, 1.0, True))
    data = 1e6 * p
    x, f, _, _ = core.minimize(start_grid(np.column_stack([LO, HI])), LO, HI, kernels.FORWARD_EXACT, PROJ,
                               1.0, True, kernels.LOSS_MULTINOMIAL, data, np.zeros(5))
    assert np.all(np.asarray(x) >= LO) and np.all(np.asarray(x) <= HI)
    assert np.allclose(x, truth, atol=1e-4)
    assert f < 1e-6


@pytest.mark.parametrize("backend", BACKENDS)
def test_impossible_outcome_is_penalised(backend):
    core = kernels.load(backend)
    # tau0 = tau = 0 leaves channels 0 and 1 dark; counts there are impossible
    data = np.array([5.0, 5.0, 10.0, 10.0, 0.0])
    v = core.objective(np.array([0.0, 0.0, 0.5]), kernels.FORWARD_EXACT, PROJ, 1.0, True,
                       kernels.LOSS_MULTINOMIAL, data, np.zeros(5))
    assert v == _core_py.PENALTY
