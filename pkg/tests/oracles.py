"""Independent reference values used by the test suite.

Everything here is computed by a different route than the library code it
checks: direct quadrature against the jump density, closed forms for the
stable subordinator, and the exact Gaussian conditional mean for the sign
observable under a truncated clock.  Tests import these instead of trusting
the implementation under test.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, special


def jump_density_constant(alpha: float) -> float:
    rho = alpha / 2.0
    return rho / special.gamma(1.0 - rho)


def tail_mass_quadrature(alpha: float, eps: float) -> float:
    """nu([eps, inf)) by adaptive quadrature of the density itself."""
    rho = alpha / 2.0
    c = jump_density_constant(alpha)
    val, err = integrate.quad(lambda x: c * x ** (-1.0 - rho), eps, np.inf,
                              epsabs=0.0, epsrel=1e-12)
    assert err < 1e-9 * max(val, 1.0)
    return val


def dropped_mass_quadrature(alpha: float, eps: float) -> float:
    """integral of x nu(dx) over (0, eps) by adaptive quadrature."""
    rho = alpha / 2.0
    c = jump_density_constant(alpha)
    val, err = integrate.quad(lambda x: c * x ** (-rho), 0.0, eps,
                              epsabs=0.0, epsrel=1e-12)
    assert err < 1e-9 * max(val, 1.0)
    return val


def inverse_moment_closed_form(alpha: float, t: float, gamma: float) -> float:
    """E S_t^{-gamma} for the alpha-stable clock, via the gamma-function identity."""
    g = special.gamma
    return 2.0 * g(2.0 * gamma / alpha) / (alpha * g(gamma)) * t ** (-2.0 * gamma / alpha)


def truncated_laplace_exponent(u: float, alpha: float, eps: float) -> float:
    """Laplace exponent of the clock with all jumps below eps removed.

    psi_eps(u) = integral over [eps, inf) of (1 - e^{-u x}) nu(dx), written
    in terms of the upper incomplete gamma function so the quadrature in
    truncated_sign_gradient_target stays cheap and accurate.
    """
    if u == 0.0:
        return 0.0
    rho = alpha / 2.0
    c = jump_density_constant(alpha)
    lam = eps ** (-rho) / special.gamma(1.0 - rho)
    x = u * eps
    upper = special.gammaincc(1.0 - rho, x) * special.gamma(1.0 - rho)
    return lam + (c / rho) * u ** rho * (upper - x ** (-rho) * math.exp(-x))


def truncated_sign_gradient_target(alpha: float, t: float, eps: float) -> float:
    """Exact mean of the gradient estimator for f = sign at the origin.

    For the one dimensional additive model started at 0 the pair
    (W at the full clock value, W at the capped clock value) is jointly
    Gaussian given the clock path, with covariance equal to the capped
    value.  The Gaussian identity E[sign(G) H] = Cov(G, H) sqrt(2/pi) / sd(G)
    makes the cap cancel against the normalizer, leaving

        sqrt(2/pi) * E[ ell_t^{-1/2} | ell_t > 0 ],

    where ell is the eps-truncated clock.  The conditional expectation is
    evaluated by Mellin quadrature against the truncated Laplace transform,
    subtracting the atom at zero and renormalizing.
    """
    rho = alpha / 2.0
    lam = eps ** (-rho) / special.gamma(1.0 - rho)
    p0 = math.exp(-t * lam)

    def integrand(u: float) -> float:
        return u ** (-0.5) * (math.exp(-t * truncated_laplace_exponent(u, alpha, eps)) - p0)

    val, err = integrate.quad(integrand, 0.0, np.inf, limit=400,
                              epsabs=1e-12, epsrel=1e-10)
    assert err < 1e-8
    cond = val / math.sqrt(math.pi) / (1.0 - p0)
    return math.sqrt(2.0 / math.pi) * cond


def discrete_mollified_second_moment(eps: float, grid_step: float) -> float:
    """Exact mean of the Euler scheme for the mollified counterexample.

    X_{k+1} = X_k + sqrt(1 + X_k^2) sqrt(dl_k) Z_k gives
    E X_{k+1}^2 = E X_k^2 (1 + dl_k) + dl_k, so the product below is the
    exact expectation of the discretized estimator, jitter-free.
    """
    grid = np.arange(0.0, 1.0 + 0.5 * grid_step, grid_step)
    ell = eps * grid + np.clip((grid - (1.0 - eps)) / eps, 0.0, 1.0)
    dl = np.diff(ell)
    m = 0.0
    for step in dl:
        m = m * (1.0 + step) + step
    return float(m)


def ou_terminal(x0: np.ndarray, t: float) -> np.ndarray:
    return np.asarray(x0, dtype=float) * math.exp(-t)
