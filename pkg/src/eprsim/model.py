"""Exact Gaussian algebra for the photon / spin-wave entangled state.

Everything here is closed form.  The two-mode wavefunction is Gaussian in
both representations, diffusion decoherence multiplies the momentum
wavefunction by exp(-D|P|^2 tau / hbar^2), and that keeps the state Gaussian
for all delays, so second moments, criterion products, pair-survival rates
and the EPR lifetime all come out of 2x2 matrix algebra per transverse axis
(x and y are identical and independent by symmetry).

Unit convention: hbar = 1, lengths in mm, momenta in hbar/mm, time in us,
diffusion coefficient in mm^2/us.  Criterion products are therefore pure
numbers ("hbar^2 units").

Per axis the decohered momentum wavefunction is, up to its prefactor,

    exp(-(a p^2 + 2 b p P + c P^2))

with a = (sp^2 + sm^2)/4, b = (sp^2 - sm^2)/4, c = a + D tau, writing
sm = sigma_minus, sp = sigma_plus.  The quantity 4G = 4(ac - b^2) =
sm^2 sp^2 + D tau (sm^2 + sp^2) shows up everywhere below.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterDomainError

HBAR = 1.0

# Reid bound for the EPR paradox and Mancini bound for inseparability,
# in hbar^2 units.
EPR_BOUND = 0.25 * HBAR**2
INSEPARABILITY_BOUND = 1.0 * HBAR**2


class Basis(enum.Enum):
    """Imaging configuration: near field measures positions (mm), far field
    measures momenta (hbar/mm)."""

    NEAR_FIELD = "near_field"
    FAR_FIELD = "far_field"

    @property
    def coord_unit(self):
        return "mm" if self is Basis.NEAR_FIELD else "hbar/mm"


class Regime(enum.Enum):
    """Classification of a criterion product against the two bounds."""

    EPR_PARADOX = "EprParadox"
    INSEPARABLE_ONLY = "InseparableOnly"
    UNVERIFIED = "Unverified"


@dataclass(frozen=True)
class EprGaussianState:
    """Parameters of the two-mode Gaussian wavefunction.

    epsilon scales only pair amplitudes (rates); it drops out of every
    variance, regime and dimension result.  sigma_minus / sigma_plus are the
    rms widths (mm) of the relative and total position coordinates,
    sigma_pm^2 = <Delta^2 |r -+ R|> at zero delay.  sigma_plus > sigma_minus
    is the position-correlated (entangled) parameterization; the reverse is
    accepted and simply classifies as not entangled.
    """

    epsilon: float
    sigma_minus: float
    sigma_plus: float

    def __post_init__(self):
        for name in ("epsilon", "sigma_minus", "sigma_plus"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ParameterDomainError(f"{name} must be finite and > 0, got {v!r}")


@dataclass(frozen=True)
class DiffusionModel:
    """Diffusive spin-wave decoherence.

    diffusion_coefficient D (mm^2/us) sets the momentum-dependent decay rate
    D|P|^2/hbar^2.  readout_time (us) documents the duration of the
    generation/readout operations, which lower-bounds the achievable
    sigma_minus^2 by roughly D*T; it is not used in the evolution.
    """

    diffusion_coefficient: float
    readout_time: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.diffusion_coefficient) and self.diffusion_coefficient >= 0):
            raise ParameterDomainError(
                f"diffusion_coefficient must be >= 0, got {self.diffusion_coefficient!r}")
        if not (math.isfinite(self.readout_time) and self.readout_time >= 0):
            raise ParameterDomainError(
                f"readout_time must be >= 0, got {self.readout_time!r}")


@dataclass(frozen=True)
class AxisCovariance:
    """Second moments of one transverse axis of |Psi|^2 (or |Psi~|^2).

    var_a is the photon coordinate variance, var_b the spin-wave one,
    cov_ab their covariance.  Units are mm^2 in the near field and
    (hbar/mm)^2 in the far field.
    """

    basis: Basis
    var_a: float
    var_b: float
    cov_ab: float

    def __post_init__(self):
        if self.var_a < 0 or self.var_b < 0:
            raise ParameterDomainError("variances must be non-negative")
        if self.cov_ab**2 > self.var_a * self.var_b * (1 + 1e-12):
            raise ParameterDomainError("covariance violates Cauchy-Schwarz")

    @property
    def var_diff(self):
        """Var of (photon - spinwave) along this axis."""
        return self.var_a + self.var_b - 2.0 * self.cov_ab

    @property
    def var_sum(self):
        """Var of (photon + spinwave) along this axis."""
        return self.var_a + self.var_b + 2.0 * self.cov_ab

    def matrix(self):
        return np.array([[self.var_a, self.cov_ab], [self.cov_ab, self.var_b]])

    def cholesky(self):
        """Lower-triangular (l11, l21, l22) with L L^T = covariance matrix."""
        l11 = math.sqrt(self.var_a)
        l21 = self.cov_ab / l11
        l22 = math.sqrt(self.var_b - l21 * l21)
        return l11, l21, l22


@dataclass(frozen=True)
class CompositeVariances:
    """Variances of the composite coordinates entering the criteria.

    var_diff_pos = <Delta^2 (x - X)> in mm^2, var_sum_mom =
    <Delta^2 (p_x + P_x)> in hbar^2/mm^2, and the conjugate partners.
    ``product`` (hbar^2 units) is var_diff_pos * var_sum_mom exactly.
    """

    var_diff_pos: float
    var_sum_mom: float
    var_sum_pos: float
    var_diff_mom: float
    product: float = field(init=False)

    def __post_init__(self):
        for name in ("var_diff_pos", "var_sum_mom", "var_sum_pos", "var_diff_mom"):
            if getattr(self, name) < 0:
                raise ParameterDomainError(f"{name} must be non-negative")
        object.__setattr__(self, "product", self.var_diff_pos * self.var_sum_mom)


class LifetimeStatus(enum.Enum):
    FINITE = "finite"
    ALREADY_AT_BOUND = "already_at_bound"   # product(0) >= hbar^2/4
    NEVER_DECAYS = "never_decays"           # D = 0 below the bound


@dataclass(frozen=True)
class EprLifetime:
    """Result of solving product(tau) = hbar^2/4 for the delay tau."""

    status: LifetimeStatus
    tau_star: float | None = None


def _check_tau(tau):
    if not (isinstance(tau, (int, float)) and math.isfinite(tau) and tau >= 0):
        raise ParameterDomainError(f"tau must be finite and >= 0, got {tau!r}")


def _axis_coefficients(state, diff, tau):
    """Per-axis quadratic coefficients (a, b, c) of the decohered momentum
    wavefunction exponent, and fourG = 4(ac - b^2)."""
    sm2 = state.sigma_minus**2
    sp2 = state.sigma_plus**2
    a = 0.25 * (sp2 + sm2)
    b = 0.25 * (sp2 - sm2)
    c = a + diff.diffusion_coefficient * tau
    four_g = sm2 * sp2 + diff.diffusion_coefficient * tau * (sm2 + sp2)
    return a, b, c, four_g


def _vec2(arr, name):
    a = np.asarray(arr, dtype=float)
    if a.shape == () or a.shape[-1] != 2:
        raise ParameterDomainError(f"{name} must have a trailing dimension of 2")
    return a


def psi_momentum(state, diff, tau, p, P):
    """Decohered momentum-space wavefunction amplitude.

    ``p`` and ``P`` are 2D momenta (hbar/mm) of the photon and the spin
    wave; arrays with a trailing dimension of 2 broadcast.  Returns

        eps * (sm*sp/pi) * exp(-sp^2 |p+P|^2/4 - sm^2 |p-P|^2/4 - D |P|^2 tau)

    in hbar = 1 units (real and positive).
    """
    _check_tau(tau)
    p = _vec2(p, "p")
    P = _vec2(P, "P")
    sm, sp = state.sigma_minus, state.sigma_plus
    plus2 = np.sum((p + P) ** 2, axis=-1)
    minus2 = np.sum((p - P) ** 2, axis=-1)
    filt = diff.diffusion_coefficient * tau * np.sum(P**2, axis=-1)
    val = (state.epsilon * sm * sp / math.pi) * np.exp(
        -0.25 * sp**2 * plus2 - 0.25 * sm**2 * minus2 - filt)
    return float(val) if val.ndim == 0 else val


def psi_position(state, diff, tau, r, R):
    """Position-space wavefunction amplitude at delay ``tau``.

    For tau = 0 this is eps/(pi sm sp) exp(-|r-R|^2/4sm^2 - |r+R|^2/4sp^2);
    for tau > 0 it is the exact Fourier transform of the decohered momentum
    wavefunction (still Gaussian), computed per axis from the 2x2 quadratic
    form.  ``r`` and ``R`` are 2D positions in mm.
    """
    _check_tau(tau)
    r = _vec2(r, "r")
    R = _vec2(R, "R")
    a, b, c, four_g = _axis_coefficients(state, diff, tau)
    sm, sp = state.sigma_minus, state.sigma_plus
    quad = c * np.sum(r**2, axis=-1) - 2.0 * b * np.sum(r * R, axis=-1) + a * np.sum(R**2, axis=-1)
    val = (state.epsilon * sm * sp / math.pi) / four_g * np.exp(-quad / four_g)
    return float(val) if val.ndim == 0 else val


def covariance_position(state, diff, tau):
    """Per-axis second moments of |Psi_tau|^2 in the near field.

    Var(x) = a, Var(X) = a + D tau, Cov(x, X) = b, which gives
    Var(x - X) = sm^2 + D tau and Var(x + X) = sp^2 + D tau.
    """
    _check_tau(tau)
    a, b, c, _ = _axis_coefficients(state, diff, tau)
    return AxisCovariance(Basis.NEAR_FIELD, var_a=a, var_b=c, cov_ab=b)


def covariance_momentum(state, diff, tau):
    """Per-axis second moments of |Psi~_tau|^2 in the far field.

    The density precision matrix is 4 [[a, b], [b, c]]; inverting it gives
    Var(p) = c/4G, Var(P) = a/4G, Cov(p, P) = -b/4G, hence
    Var(p + P) = (sm^2 + D tau) / 4G.
    """
    _check_tau(tau)
    a, b, c, four_g = _axis_coefficients(state, diff, tau)
    return AxisCovariance(Basis.FAR_FIELD, var_a=c / four_g, var_b=a / four_g,
                          cov_ab=-b / four_g)


def covariance_for_basis(state, diff, tau, basis):
    if basis is Basis.NEAR_FIELD:
        return covariance_position(state, diff, tau)
    return covariance_momentum(state, diff, tau)


def composite_variances(state, diff, tau):
    """All four composite variances and the criterion product at ``tau``.

    product = (sm^2 + D tau)^2 / (sm^2 sp^2 + D tau (sm^2 + sp^2)), which
    reduces to sm^2/sp^2 at tau = 0 and grows monotonically for an
    entangled (sp > sm) state.
    """
    _check_tau(tau)
    pos = covariance_position(state, diff, tau)
    mom = covariance_momentum(state, diff, tau)
    return CompositeVariances(
        var_diff_pos=pos.var_diff,
        var_sum_mom=mom.var_sum,
        var_sum_pos=pos.var_sum,
        var_diff_mom=mom.var_diff,
    )


def composite_product_linearized(state, diff, tau):
    """Small-delay linearization of the criterion product,
    hbar^2 (sm^2 + D tau) / sp^2.  Useful as an overlay against the exact
    curve; first-order accurate in D tau when sm^2 << sp^2."""
    _check_tau(tau)
    return (HBAR**2) * (state.sigma_minus**2
                        + diff.diffusion_coefficient * tau) / state.sigma_plus**2


def entanglement_dimension(state, diff, tau):
    """Effective number of entangled transverse mode pairs,
    (sp^2 + D tau) / (sm^2 + D tau).  Equals (sp/sm)^2 at tau = 0 and
    relaxes monotonically toward 1."""
    _check_tau(tau)
    dtau = diff.diffusion_coefficient * tau
    return (state.sigma_plus**2 + dtau) / (state.sigma_minus**2 + dtau)


def pair_rate_factor(state, diff, tau):
    """Fraction of entangled pairs surviving to delay ``tau``.

    Ratio of the integrated decohered to initial momentum density over both
    transverse axes: sm^2 sp^2 / (sm^2 sp^2 + D tau (sm^2 + sp^2)).
    """
    _check_tau(tau)
    sm2 = state.sigma_minus**2
    sp2 = state.sigma_plus**2
    return sm2 * sp2 / (sm2 * sp2 + diff.diffusion_coefficient * tau * (sm2 + sp2))


def classify_regime(product):
    """Classify a criterion product (hbar^2 units) into one of the three
    regimes.  Values exactly on a bound fall into the weaker regime, since
    both criteria are strict inequalities."""
    if not (isinstance(product, (int, float)) and math.isfinite(product) and product >= 0):
        raise ParameterDomainError(f"product must be finite and >= 0, got {product!r}")
    if product < EPR_BOUND:
        return Regime.EPR_PARADOX
    if product < INSEPARABILITY_BOUND:
        return Regime.INSEPARABLE_ONLY
    return Regime.UNVERIFIED


def epr_lifetime(state, diff):
    """Delay at which the criterion product reaches the EPR bound hbar^2/4.

    Solving product(tau) = 1/4 gives the quadratic
    4u^2 + (7 sm^2 - sp^2) u + sm^2 (4 sm^2 - sp^2) = 0 in u = D tau, whose
    unique non-negative root is

        u* = [(sp^2 - 7 sm^2) + sqrt((sp^2 + 5 sm^2)(sp^2 - 3 sm^2))] / 8.

    Returns ALREADY_AT_BOUND when product(0) >= hbar^2/4 and NEVER_DECAYS
    when D = 0 with product(0) below the bound.
    """
    sm2 = state.sigma_minus**2
    sp2 = state.sigma_plus**2
    if sm2 / sp2 >= EPR_BOUND / HBAR**2:
        return EprLifetime(LifetimeStatus.ALREADY_AT_BOUND, tau_star=0.0)
    if diff.diffusion_coefficient == 0.0:
        return EprLifetime(LifetimeStatus.NEVER_DECAYS)
    disc = (sp2 + 5.0 * sm2) * (sp2 - 3.0 * sm2)
    u_star = ((sp2 - 7.0 * sm2) + math.sqrt(disc)) / 8.0
    return EprLifetime(LifetimeStatus.FINITE, tau_star=u_star / diff.diffusion_coefficient)


def epr_lifetime_linearized(state, diff):
    """Lifetime from the linearized product, (sp^2/4 - sm^2)/D."""
    if diff.diffusion_coefficient <= 0:
        raise ParameterDomainError("linearized lifetime needs D > 0")
    return (state.sigma_plus**2 / 4.0 - state.sigma_minus**2) / diff.diffusion_coefficient
