"""Reconstruction of the coincidence statistics from event streams.

The chain mirrors the measurement procedure: all same-frame (Stokes,
anti-Stokes) pairs enter a joint map or a composite-variable histogram;
the accidental floor is estimated by pairing Stokes events of frame i
with anti-Stokes events of frame (i + shift) mod N and subtracted
bin-wise (negative net bins are kept); Gaussian fits of the net composite
histograms give the variances, their products and the regime
classification.

Histogram accumulation is a commutative monoid (counts and variances both
add), so shards built independently merge to bit-identical results.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import _kernels
from .errors import ParameterDomainError
from .fitting import GaussianFit, fit_gaussian  # noqa: F401  (fit lives here API-wise)
from .model import HBAR, Basis, Regime, classify_regime
from .simulate import Arm, EventBlock, Frame

DEFAULT_BINS = 40
SPAN_SIGMAS = 4.0
MAX_LATTICE_HALF_BINS = 2000
# reports quote the hbar^2/product dimension estimator; past this delay it
# is flagged as extrapolating the tau=0 definition
DIMENSION_TAU0_THRESHOLD_US = 0.5


class Axis(enum.Enum):
    X = "x"
    Y = "y"


class CompositeKind(enum.Enum):
    POSITION_DIFFERENCE = "position_difference"
    MOMENTUM_SUM = "momentum_sum"
    POSITION_SUM = "position_sum"
    MOMENTUM_DIFFERENCE = "momentum_difference"

    @property
    def required_basis(self):
        if self in (CompositeKind.POSITION_DIFFERENCE, CompositeKind.POSITION_SUM):
            return Basis.NEAR_FIELD
        return Basis.FAR_FIELD

    @property
    def sign(self):
        if self in (CompositeKind.MOMENTUM_SUM, CompositeKind.POSITION_SUM):
            return +1
        return -1


def _validate_edges(edges):
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2:
        raise ParameterDomainError("edges must be a 1D array of at least 2 values")
    widths = np.diff(edges)
    if not np.all(widths > 0):
        raise ParameterDomainError("edges must be strictly increasing")
    w = widths[0]
    if np.any(np.abs(widths - w) > 1e-12 * abs(w)):
        raise ParameterDomainError("edges must be uniform to 1e-12 relative")
    return edges


@dataclass(frozen=True)
class Histogram1D:
    """Uniformly binned signed counts with per-bin variances."""

    edges: np.ndarray
    counts: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        edges = _validate_edges(self.edges)
        counts = np.asarray(self.counts, dtype=float)
        variance = np.asarray(self.variance, dtype=float)
        if counts.shape != (edges.size - 1,) or variance.shape != counts.shape:
            raise ParameterDomainError("counts/variance shape must match edges")
        if np.any(variance < 0):
            raise ParameterDomainError("per-bin variance must be non-negative")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "variance", variance)

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def width(self):
        return float(self.edges[1] - self.edges[0])

    @property
    def nbins(self):
        return self.counts.size


@dataclass(frozen=True)
class Histogram2D:
    """Uniformly binned signed 2D counts with per-bin variances."""

    x_edges: np.ndarray
    y_edges: np.ndarray
    counts: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        x_edges = _validate_edges(self.x_edges)
        y_edges = _validate_edges(self.y_edges)
        counts = np.asarray(self.counts, dtype=float)
        variance = np.asarray(self.variance, dtype=float)
        shape = (x_edges.size - 1, y_edges.size - 1)
        if counts.shape != shape or variance.shape != shape:
            raise ParameterDomainError("counts/variance shape must match edges")
        if np.any(variance < 0):
            raise ParameterDomainError("per-bin variance must be non-negative")
        object.__setattr__(self, "x_edges", x_edges)
        object.__setattr__(self, "y_edges", y_edges)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "variance", variance)


def _same_binning(a, b):
    if isinstance(a, Histogram1D) and isinstance(b, Histogram1D):
        return a.edges.shape == b.edges.shape and np.array_equal(a.edges, b.edges)
    if isinstance(a, Histogram2D) and isinstance(b, Histogram2D):
        return (np.array_equal(a.x_edges, b.x_edges)
                and np.array_equal(a.y_edges, b.y_edges))
    return False


def merge(a, b):
    """Sum two histograms accumulated over disjoint frame shards."""
    if not _same_binning(a, b):
        raise ParameterDomainError("histogram merge needs identical binning")
    if isinstance(a, Histogram1D):
        return Histogram1D(a.edges, a.counts + b.counts, a.variance + b.variance)
    return Histogram2D(a.x_edges, a.y_edges, a.counts + b.counts,
                       a.variance + b.variance)


def subtract_background(signal, background):
    """Per-bin ``signal - background``; variances add, negative net counts
    are kept (clipping would bias the fits)."""
    if not _same_binning(signal, background):
        raise ParameterDomainError("background binning does not match signal")
    if isinstance(signal, Histogram1D):
        return Histogram1D(signal.edges, signal.counts - background.counts,
                           signal.variance + background.variance)
    return Histogram2D(signal.x_edges, signal.y_edges,
                       signal.counts - background.counts,
                       signal.variance + background.variance)


@dataclass(frozen=True)
class EventTable:
    """Columnar per-arm event coordinates in CSR layout over frames.

    Frame position in the offsets arrays is the cyclic-pairing index; the
    table always covers the full declared frame range, empty frames
    included.
    """

    basis: Basis
    frame_count: int
    s_x: np.ndarray
    s_y: np.ndarray
    s_off: np.ndarray
    as_x: np.ndarray
    as_y: np.ndarray
    as_off: np.ndarray
    pitch: float | None = None

    @classmethod
    def from_frames(cls, frames: Iterable[Frame], basis, pitch=None):
        s_x, s_y, as_x, as_y = [], [], [], []
        s_counts, as_counts = [], []
        for frame in frames:
            ns = nas = 0
            for e in frame.events:
                if e.arm is Arm.STOKES:
                    s_x.append(e.coord[0])
                    s_y.append(e.coord[1])
                    ns += 1
                else:
                    as_x.append(e.coord[0])
                    as_y.append(e.coord[1])
                    nas += 1
            s_counts.append(ns)
            as_counts.append(nas)
        return cls(
            basis=basis, frame_count=len(s_counts),
            s_x=np.asarray(s_x, dtype=float), s_y=np.asarray(s_y, dtype=float),
            s_off=np.concatenate([[0], np.cumsum(s_counts, dtype=np.int64)]),
            as_x=np.asarray(as_x, dtype=float), as_y=np.asarray(as_y, dtype=float),
            as_off=np.concatenate([[0], np.cumsum(as_counts, dtype=np.int64)]),
            pitch=pitch)

    @classmethod
    def from_block(cls, block: EventBlock, basis, pitch=None):
        stokes = block.arm_codes == 1
        rel = block.frame_ids - block.frame_id_start
        n = block.n_frames
        s_counts = np.bincount(rel[stokes], minlength=n).astype(np.int64)
        as_counts = np.bincount(rel[~stokes], minlength=n).astype(np.int64)
        return cls(
            basis=basis, frame_count=n,
            s_x=block.u[stokes].astype(float), s_y=block.v[stokes].astype(float),
            s_off=np.concatenate([[0], np.cumsum(s_counts)]),
            as_x=block.u[~stokes].astype(float), as_y=block.v[~stokes].astype(float),
            as_off=np.concatenate([[0], np.cumsum(as_counts)]),
            pitch=pitch)

    def arm_values(self, arm, axis):
        if arm is Arm.STOKES:
            return (self.s_x if axis is Axis.X else self.s_y), self.s_off
        return (self.as_x if axis is Axis.X else self.as_y), self.as_off

    @property
    def n_stokes(self):
        return int(self.s_x.size)

    @property
    def n_anti_stokes(self):
        return int(self.as_x.size)


def _as_tables(events, basis, pitch):
    """Normalize the ``events`` argument to a list of EventTable."""
    if isinstance(events, EventTable):
        tables = [events]
    elif isinstance(events, (list, tuple)) and events and all(
            isinstance(t, EventTable) for t in events):
        tables = list(events)
    else:
        if basis is None:
            raise ParameterDomainError("basis is required for raw frame input")
        tables = [EventTable.from_frames(events, basis, pitch)]
    bases = {t.basis for t in tables}
    if len(bases) != 1:
        raise ParameterDomainError(f"mixed-basis input: {sorted(b.value for b in bases)}")
    if basis is not None and tables[0].basis is not basis:
        raise ParameterDomainError(
            f"events are {tables[0].basis.value}, expected {basis.value}")
    return tables


@dataclass(frozen=True)
class Binning:
    """Uniform binning specification."""

    lo: float
    hi: float
    nbins: int

    def __post_init__(self):
        if not (self.hi > self.lo and self.nbins >= 1):
            raise ParameterDomainError(f"bad binning {self!r}")

    @property
    def width(self):
        return (self.hi - self.lo) / self.nbins

    @property
    def edges(self):
        return self.lo + np.arange(self.nbins + 1) * self.width


def _net_moments(tables, axis, sign, shift):
    """First-pass moment estimate (mean, sigma) of the net composite
    distribution, with graceful fallbacks for weak signals."""
    n_s = total_s = sq_s = 0.0
    n_b = total_b = sq_b = 0.0
    for t in tables:
        sv, so = t.arm_values(Arm.STOKES, axis)
        av, ao = t.arm_values(Arm.ANTI_STOKES, axis)
        n, tot, sq = _kernels.pair_stats(sv, so, av, ao, 0, sign)
        n_s += n; total_s += tot; sq_s += sq
        n, tot, sq = _kernels.pair_stats(sv, so, av, ao, shift, sign)
        n_b += n; total_b += tot; sq_b += sq
    n_net = n_s - n_b
    if n_net > 16.0:
        mean = (total_s - total_b) / n_net
        var = (sq_s - sq_b) / n_net - mean * mean
        if var > 0 and math.isfinite(var):
            return mean, math.sqrt(var)
    if n_s >= 2.0:
        mean = total_s / n_s
        var = sq_s / n_s - mean * mean
        if var > 0 and math.isfinite(var):
            return mean, math.sqrt(var)
    return 0.0, 1.0


def auto_binning(tables, axis, sign, shift, nbins=None):
    """Default composite binning: +-4 sigma around the first-pass mean.

    With a known pixel pitch and no explicit bin count, bins snap to the
    composite-value lattice (width = pitch, centers on integer multiples of
    the pitch), so binning adds nothing beyond the pixel quantization that
    the 2*pitch^2/12 correction already accounts for.
    """
    mean, sigma = _net_moments(tables, axis, sign, shift)
    pitch = tables[0].pitch
    if nbins is not None:
        return Binning(mean - SPAN_SIGMAS * sigma, mean + SPAN_SIGMAS * sigma, int(nbins))
    if pitch:
        center = round(mean / pitch) * pitch
        half = int(math.ceil(SPAN_SIGMAS * sigma / pitch))
        half = min(max(half, 3), MAX_LATTICE_HALF_BINS)
        lo = center - (half + 0.5) * pitch
        hi = center + (half + 0.5) * pitch
        return Binning(lo, hi, 2 * half + 1)
    return Binning(mean - SPAN_SIGMAS * sigma, mean + SPAN_SIGMAS * sigma, DEFAULT_BINS)


def _binning_pair(binning):
    """Accept a Binning, an (lo, hi, nbins) tuple, or a pair of those for
    the (stokes, anti-stokes) sides of a 2D map."""
    def one(b):
        if isinstance(b, Binning):
            return b
        return Binning(*b)
    if isinstance(binning, Binning) or (
            isinstance(binning, (tuple, list)) and len(binning) == 3
            and not isinstance(binning[0], (Binning, tuple, list))):
        b = one(binning)
        return b, b
    if isinstance(binning, (tuple, list)) and len(binning) == 2:
        return one(binning[0]), one(binning[1])
    raise ParameterDomainError(f"cannot interpret binning {binning!r}")


def _pair_map(tables, axis, b_s, b_as, shift):
    counts = np.zeros((b_s.nbins, b_as.nbins))
    for t in tables:
        sv, so = t.arm_values(Arm.STOKES, axis)
        av, ao = t.arm_values(Arm.ANTI_STOKES, axis)
        counts += _kernels.pair_hist2d(sv, so, av, ao, shift,
                                       b_s.lo, b_s.width, b_s.nbins,
                                       b_as.lo, b_as.width, b_as.nbins)
    return Histogram2D(b_s.edges, b_as.edges, counts, counts.copy())


def joint_map(events, axis, binning, *, basis=None, pitch=None):
    """Raw same-frame coincidence map for one axis: every (S, AS) event
    pair of a frame adds one count at (u_S, u_AS); the perpendicular
    coordinate is ignored.  Per-bin variance equals the raw count."""
    tables = _as_tables(events, basis, pitch)
    b_s, b_as = _binning_pair(binning)
    return _pair_map(tables, axis, b_s, b_as, shift=0)


def accidental_map(events, axis, binning, shift=1, *, basis=None, pitch=None):
    """Uncorrelated-coincidence floor estimated by cyclic frame pairing:
    Stokes events of frame i against anti-Stokes events of (i+shift) mod N."""
    tables = _as_tables(events, basis, pitch)
    if not isinstance(shift, int) or shift < 1:
        raise ParameterDomainError(f"shift must be a positive integer, got {shift!r}")
    for t in tables:
        if shift >= t.frame_count:
            raise ParameterDomainError(
                f"shift {shift} must be smaller than the frame count {t.frame_count}")
    b_s, b_as = _binning_pair(binning)
    return _pair_map(tables, axis, b_s, b_as, shift=shift)


def _composite_hist(tables, axis, sign, binning, shift):
    counts_sig = np.zeros(binning.nbins)
    counts_bg = np.zeros(binning.nbins)
    for t in tables:
        sv, so = t.arm_values(Arm.STOKES, axis)
        av, ao = t.arm_values(Arm.ANTI_STOKES, axis)
        counts_sig += _kernels.pair_hist1d(sv, so, av, ao, 0, sign,
                                           binning.lo, binning.width, binning.nbins)
        counts_bg += _kernels.pair_hist1d(sv, so, av, ao, shift, sign,
                                          binning.lo, binning.width, binning.nbins)
    signal = Histogram1D(binning.edges, counts_sig, counts_sig.copy())
    background = Histogram1D(binning.edges, counts_bg, counts_bg.copy())
    return signal, background


def composite_histogram(events, axis, kind, binning=None, shift=1, *,
                        basis=None, pitch=None):
    """Background-subtracted histogram of a composite variable.

    ``kind`` must match the basis of the input (position sums/differences
    in the near field, momentum ones in the far field).  ``binning`` may be
    a Binning, an (lo, hi, nbins) tuple, an integer bin count, or None for
    the +-4 sigma default.
    """
    tables = _as_tables(events, basis, pitch)
    if tables[0].basis is not kind.required_basis:
        raise ParameterDomainError(
            f"{kind.value} requires {kind.required_basis.value} input, "
            f"got {tables[0].basis.value}")
    if not isinstance(shift, int) or shift < 1:
        raise ParameterDomainError(f"shift must be a positive integer, got {shift!r}")
    for t in tables:
        if shift >= t.frame_count:
            raise ParameterDomainError(
                f"shift {shift} must be smaller than the frame count {t.frame_count}")
    if binning is None or isinstance(binning, int):
        binning = auto_binning(tables, axis, kind.sign, shift,
                               nbins=binning if isinstance(binning, int) else None)
    elif not isinstance(binning, Binning):
        binning = Binning(*binning)
    signal, background = _composite_hist(tables, axis, kind.sign, binning, shift)
    return subtract_background(signal, background)


def coincidence_totals(events, shift=1, *, basis=None, pitch=None):
    """(signal, background) all-pairs coincidence totals over all frames,
    for pair-rate tracking.  Net retrieved coincidences = signal - background
    with Poisson variance signal + background."""
    tables = _as_tables(events, basis, pitch)
    n_sig = n_bg = 0.0
    for t in tables:
        sv, so = t.arm_values(Arm.STOKES, Axis.X)
        av, ao = t.arm_values(Arm.ANTI_STOKES, Axis.X)
        n, _, _ = _kernels.pair_stats(sv, so, av, ao, 0, +1)
        n_sig += n
        n, _, _ = _kernels.pair_stats(sv, so, av, ao, shift, +1)
        n_bg += n
    return n_sig, n_bg


@dataclass(frozen=True)
class VarianceEstimate:
    value: float
    sigma: float

    def to_json_dict(self):
        return {"value": self.value, "sigma": self.sigma}


@dataclass(frozen=True)
class VarianceReport:
    """Fitted composite variances, products, regimes and dimension.

    Per-axis dicts are keyed 'x'/'y'; averaged fields are present only when
    both axes of the corresponding basis were fitted, products only where
    both bases are available.  ``dimension`` is the hbar^2/product (tau=0)
    estimator; ``dimension_flagged`` marks reports at delays where that
    definition is an extrapolation.
    """

    var_diff_pos: Mapping[str, VarianceEstimate]
    var_sum_mom: Mapping[str, VarianceEstimate]
    avg_var_diff_pos: VarianceEstimate | None
    avg_var_sum_mom: VarianceEstimate | None
    products: Mapping[str, VarianceEstimate]
    product_avg: VarianceEstimate | None
    regimes: Mapping[str, Regime]
    regime_avg: Regime | None
    dimension: VarianceEstimate | None
    dimension_flagged: bool
    tau: float | None = None

    def to_json_dict(self):
        def estmap(m):
            return {k: v.to_json_dict() for k, v in m.items()}
        return {
            "tau_us": self.tau,
            "var_diff_pos_mm2": estmap(self.var_diff_pos),
            "var_sum_mom_hbar2_per_mm2": estmap(self.var_sum_mom),
            "avg_var_diff_pos_mm2": None if self.avg_var_diff_pos is None
                else self.avg_var_diff_pos.to_json_dict(),
            "avg_var_sum_mom_hbar2_per_mm2": None if self.avg_var_sum_mom is None
                else self.avg_var_sum_mom.to_json_dict(),
            "products_hbar2": estmap(self.products),
            "product_avg_hbar2": None if self.product_avg is None
                else self.product_avg.to_json_dict(),
            "regimes": {k: v.value for k, v in self.regimes.items()},
            "regime_avg": None if self.regime_avg is None else self.regime_avg.value,
            "dimension": None if self.dimension is None else self.dimension.to_json_dict(),
            "dimension_flagged": self.dimension_flagged,
        }


def _product_estimate(vp, vm):
    value = vp.value * vm.value
    rel = 0.0
    if vp.value != 0:
        rel += (vp.sigma / vp.value) ** 2
    if vm.value != 0:
        rel += (vm.sigma / vm.value) ** 2
    return VarianceEstimate(value, abs(value) * math.sqrt(rel))


def _axis_average(estimates):
    if set(estimates) != {"x", "y"}:
        return None
    ex, ey = estimates["x"], estimates["y"]
    return VarianceEstimate(0.5 * (ex.value + ey.value),
                            0.5 * math.sqrt(ex.sigma**2 + ey.sigma**2))


def estimate_variances(pos_fits=None, mom_fits=None, *,
                       pixel_correction_pos=0.0, pixel_correction_mom=0.0,
                       tau=None):
    """Combine per-axis Gaussian fits into a VarianceReport.

    ``pos_fits`` / ``mom_fits`` map axis names ('x', 'y') to GaussianFit
    results for the position-difference and momentum-sum histograms.  The
    pixel corrections (2*pitch^2/12 for a composite of two quantized
    coordinates) are subtracted from each fitted variance before any
    product is formed.  Missing axes or bases degrade gracefully: the
    report simply omits the derived fields.
    """
    def collect(fits, correction):
        out = {}
        for ax, fit in (fits or {}).items():
            value = max(fit.variance - correction, 0.0)
            out[ax] = VarianceEstimate(value, fit.variance_sigma)
        return out

    var_pos = collect(pos_fits, pixel_correction_pos)
    var_mom = collect(mom_fits, pixel_correction_mom)

    products = {}
    regimes = {}
    for ax in sorted(set(var_pos) & set(var_mom)):
        products[ax] = _product_estimate(var_pos[ax], var_mom[ax])
        regimes[ax] = classify_regime(products[ax].value)

    avg_pos = _axis_average(var_pos)
    avg_mom = _axis_average(var_mom)
    product_avg = None
    regime_avg = None
    dimension = None
    if avg_pos is not None and avg_mom is not None:
        product_avg = _product_estimate(avg_pos, avg_mom)
        regime_avg = classify_regime(product_avg.value)
        if product_avg.value > 0:
            dimension = VarianceEstimate(
                HBAR**2 / product_avg.value,
                product_avg.sigma / product_avg.value**2)

    flagged = tau is not None and tau > DIMENSION_TAU0_THRESHOLD_US
    return VarianceReport(
        var_diff_pos=var_pos, var_sum_mom=var_mom,
        avg_var_diff_pos=avg_pos, avg_var_sum_mom=avg_mom,
        products=products, product_avg=product_avg,
        regimes=regimes, regime_avg=regime_avg,
        dimension=dimension, dimension_flagged=flagged, tau=tau)
