"""Simulator and analysis toolchain for position-momentum EPR entanglement
between a single photon and an atomic spin-wave excitation.

Subpackages/modules:

- ``model``: exact Gaussian algebra (wavefunctions, composite variances,
  criteria, entanglement dimension, pair survival, EPR lifetime)
- ``simulate``: Monte Carlo frame generation with detector imperfections
- ``events_io``: the ``.events.csv`` interchange format
- ``analysis``: coincidence maps, background subtraction, composite
  histograms, Gaussian fits and variance reports
- ``cli``: the ``eprsim`` command (simulate | analyze | scan | theory)

Hot kernels run in a compiled Cython core when available, with a
bit-identical pure-numpy fallback (``EPRSIM_KERNELS`` selects explicitly).
"""

__version__ = "0.1.0"

from ._kernels import backend_name as kernel_backend
from .model import (
    HBAR,
    AxisCovariance,
    Basis,
    CompositeVariances,
    DiffusionModel,
    EprGaussianState,
    EprLifetime,
    LifetimeStatus,
    Regime,
    classify_regime,
    composite_product_linearized,
    composite_variances,
    covariance_momentum,
    covariance_position,
    entanglement_dimension,
    epr_lifetime,
    epr_lifetime_linearized,
    pair_rate_factor,
    psi_momentum,
    psi_position,
)
from .simulate import (
    Arm,
    DetectionEvent,
    DetectorConfig,
    EventBlock,
    Frame,
    Roi,
    generate_frame,
    run_experiment,
    sample_pair,
)
from .events_io import RunMetadata, read_events, write_block, write_events
from .analysis import (
    Axis,
    Binning,
    CompositeKind,
    EventTable,
    Histogram1D,
    Histogram2D,
    VarianceEstimate,
    VarianceReport,
    accidental_map,
    composite_histogram,
    estimate_variances,
    joint_map,
    subtract_background,
)
from .fitting import GaussianFit, fit_gaussian, gaussian_model
from .config import RunConfig, load_config

__all__ = [name for name in dir() if not name.startswith("_")]
