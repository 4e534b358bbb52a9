"""Weighted Gaussian peak fits with parameter uncertainties.

The model is A*exp(-(u-mu)^2/(2 s^2)) + B evaluated at bin centers, fitted
by Levenberg-Marquardt least squares with weights 1/max(bin variance, 1).
Uncertainties come from the final normal-equations matrix scaled by the
reduced chi-squared, reported in the (A, mu, s^2, B) parameterization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import FlatFitError, ParameterDomainError

FWHM_TO_SIGMA = 2.355
MAX_ITERATIONS = 200
SSE_RTOL = 1e-8


@dataclass(frozen=True)
class GaussianFit:
    """Fitted peak parameters; ``variance`` is s^2 and ``covariance`` the
    4x4 parameter covariance in (amplitude, mean, variance, offset) order."""

    amplitude: float
    mean: float
    variance: float
    offset: float
    covariance: np.ndarray
    chi_squared: float
    converged: bool

    @property
    def variance_sigma(self):
        return float(np.sqrt(max(self.covariance[2, 2], 0.0)))


def gaussian_model(u, amplitude, mean, variance, offset):
    return amplitude * np.exp(-((u - mean) ** 2) / (2.0 * variance)) + offset


def _initial_guess(centers, counts, width):
    b0 = float(np.min(counts))
    a0 = float(np.max(counts)) - b0
    peak = int(np.argmax(counts))
    mu0 = float(centers[peak])
    half = b0 + 0.5 * a0
    above = counts >= half
    left = peak
    while left > 0 and above[left - 1]:
        left -= 1
    right = peak
    while right < len(counts) - 1 and above[right + 1]:
        right += 1
    run = right - left + 1
    if run <= 1 or run >= len(counts) - 1:
        sigma0 = 2.0 * width
    else:
        sigma0 = run * width / FWHM_TO_SIGMA
    return a0, mu0, sigma0, b0


def fit_gaussian(hist):
    """Fit a Gaussian-plus-offset to a Histogram1D.

    Requires at least 6 non-empty bins; a histogram with all-equal counts
    (e.g. all zeros) raises FlatFitError.  Non-convergence within the
    iteration budget is reported via ``converged=False`` with the
    best-so-far parameters, not an exception.
    """
    counts = np.asarray(hist.counts, dtype=float)
    if counts.size and np.all(counts == counts[0]):
        raise FlatFitError("histogram has no structure (all counts equal)")
    if np.count_nonzero(counts) < 6:
        raise ParameterDomainError("fit needs at least 6 non-empty bins")
    centers = hist.centers
    width = hist.width
    sqrt_w = 1.0 / np.sqrt(np.maximum(np.asarray(hist.variance, dtype=float), 1.0))

    a0, mu0, sigma0, b0 = _initial_guess(centers, counts, width)

    def residuals(theta):
        a, mu, sigma, b = theta
        return sqrt_w * (gaussian_model(centers, a, mu, sigma * sigma, b) - counts)

    def jacobian(theta):
        a, mu, sigma, b = theta
        s2 = sigma * sigma
        d = centers - mu
        e = np.exp(-d * d / (2.0 * s2))
        j = np.empty((centers.size, 4))
        j[:, 0] = e
        j[:, 1] = a * e * d / s2
        j[:, 2] = a * e * d * d / (s2 * sigma)
        j[:, 3] = 1.0
        return j * sqrt_w[:, None]

    res = least_squares(residuals, x0=[a0, mu0, sigma0, b0], jac=jacobian,
                        method="lm", ftol=SSE_RTOL, xtol=1e-14, gtol=1e-14,
                        max_nfev=MAX_ITERATIONS)
    a, mu, sigma, b = res.x
    s2 = sigma * sigma
    chi2 = float(2.0 * res.cost)
    dof = max(centers.size - 4, 1)

    jac = jacobian(res.x)
    normal = jac.T @ jac
    try:
        cov_sigma = np.linalg.inv(normal)
    except np.linalg.LinAlgError:
        cov_sigma = np.linalg.pinv(normal)
    cov_sigma = cov_sigma * (chi2 / dof)
    # reparameterize (A, mu, sigma, B) -> (A, mu, s^2, B)
    t = np.diag([1.0, 1.0, 2.0 * sigma, 1.0])
    cov = t @ cov_sigma @ t
    cov = 0.5 * (cov + cov.T)

    converged = bool(res.status in (1, 2, 3, 4) and s2 > 0 and np.all(np.isfinite(cov)))
    return GaussianFit(amplitude=float(a), mean=float(mu), variance=float(s2),
                       offset=float(b), covariance=cov, chi_squared=chi2,
                       converged=converged)
