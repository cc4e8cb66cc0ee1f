"""Independent reference computations used by the tests.

None of these go through the package's HG-basis code paths: pulses are
sampled on a time grid or integrated with adaptive quadrature, and the SLD
is found by a least-squares solve of the Lyapunov equation.
"""
import numpy as np
from scipy import integrate
from scipy.special import eval_hermite, factorial
from scipy.stats import norm

from qtiming.measurement import ExactForward, canonical_projectors


def _pulses(theta, t):
    tau0, tau, q = theta
    ca, cb = tau0 - tau / 2, tau0 + tau / 2
    u = lambda c: (2 * np.pi) ** -0.25 * np.exp(-((t - c) ** 2) / 4)
    du = lambda c: (t - c) / 2 * u(c)          # d/dc of u(t - c)
    return u(ca), u(cb), du(ca), du(cb), q


def sld_qfi_oracle(theta, half_width=20.0, samples=8001):
    """QFI matrix (sigma = 1, order tau0, tau, q) of the two-pulse mixture."""
    t = np.linspace(-half_width, half_width, samples)
    w = np.sqrt(t[1] - t[0])
    a, b, da, db, q = (v * w if isinstance(v, np.ndarray) else v for v in _pulses(theta, t))
    basis, s, _ = np.linalg.svd(np.column_stack([a, b, da, db]), full_matrices=False)
    basis = basis[:, s > 1e-10 * s[0]]
    a, b, da, db = (basis.T @ v for v in (a, b, da, db))
    sym = lambda x, y: np.outer(x, y) + np.outer(y, x)
    rho = q * np.outer(a, a) + (1 - q) * np.outer(b, b)
    drho = [q * sym(da, a) + (1 - q) * sym(db, b),
            -0.5 * q * sym(da, a) + 0.5 * (1 - q) * sym(db, b),
            np.outer(a, a) - np.outer(b, b)]
    n = rho.shape[0]
    eye = np.eye(n)
    sup = np.kron(eye, rho) + np.kron(rho.T, eye)
    slds = [np.linalg.lstsq(sup, 2 * d.reshape(-1, order="F"), rcond=1e-13)[0].reshape(n, n, order="F")
            for d in drho]
    return np.array([[np.trace(dk @ ll) for ll in slds] for dk in drho])


def direct_fisher_oracle(theta):
    """Direct-detection Fisher matrix per photon by adaptive quadrature (sigma = 1)."""
    tau0, tau, q = theta
    ca, cb = tau0 - tau / 2, tau0 + tau / 2

    def parts(t):
        ga, gb = norm.pdf(t, ca), norm.pdf(t, cb)
        dga, dgb = (t - ca) * ga, (t - cb) * gb
        i = q * ga + (1 - q) * gb
        return i, np.array([q * dga + (1 - q) * dgb, -0.5 * q * dga + 0.5 * (1 - q) * dgb, ga - gb])

    f = np.zeros((3, 3))
    lo, hi = min(ca, cb) - 15, max(ca, cb) + 15
    for k in range(3):
        for m in range(k, 3):
            def integrand(t, k=k, m=m):
                i, g = parts(t)
                return g[k] * g[m] / i
            f[k, m] = f[m, k] = integrate.quad(integrand, lo, hi, points=[ca, cb], epsabs=1e-15,
                                               epsrel=1e-12, limit=500)[0]
    return f


def povm_fisher_oracle(theta, counting="multinomial", efficiency=1.0, h=1e-5):
    """Projector-measurement Fisher matrix per photon from finite differences."""
    fw = ExactForward(efficiency=efficiency)
    theta = np.asarray(theta, dtype=float)
    p = fw(theta)
    jac = np.empty((5, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        jac[:, k] = (fw(theta + e) - fw(theta - e)) / (2 * h)
    if counting == "multinomial":
        return sum(np.outer(jac[j], jac[j]) / p[j] for j in range(5))
    return sum(np.outer(jac[j], jac[j]) / (p[j] * (1 - p[j])) for j in range(4)) / 4


def hg_mode_scipy(n, t, sigma=1.0):
    """HG mode ``n`` with intensity RMS width ``sigma``, from scipy's Hermite polynomials."""
    w = np.sqrt(2.0) * sigma
    x = np.asarray(t, dtype=float) / w
    return eval_hermite(n, x) * np.exp(-x * x / 2) / np.sqrt(2.0 ** n * factorial(n) * np.sqrt(np.pi) * w)


def channel_probabilities_oracle(theta, sigma=1.0):
    """Channel probabilities from time-domain overlaps by adaptive quadrature."""
    tau0, tau, q = theta
    rows = canonical_projectors().matrix.real
    centres = (tau0 - tau / 2, tau0 + tau / 2)

    def amp(row, c):
        f = lambda t: sum(coef * hg_mode_scipy(n, t, sigma) for n, coef in enumerate(row)) * hg_mode_scipy(0, t - c, sigma)
        lo, hi = min(0.0, c) - 14 * sigma, max(0.0, c) + 14 * sigma
        return integrate.quad(f, lo, hi, points=[0.0, c], epsabs=1e-14, epsrel=1e-13, limit=400)[0]

    return np.array([q * amp(r, centres[0]) ** 2 + (1 - q) * amp(r, centres[1]) ** 2 for r in rows])
