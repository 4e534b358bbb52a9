"""Monte Carlo generation of per-frame detection events.

A frame is one generate-store-retrieve realization.  True pairs are drawn
from the per-axis 2x2 Gaussian of the (decohered) model, independently for
x and y; detector imperfections are Bernoulli thinning per arm, Poisson
dark events uniform over the ROI, and quantization to pixel centers.  The
tau-dependent loss of spin waves enters through the pair rate factor, not
through per-event thinning: the surviving pairs already follow the
filtered wavefunction.

Determinism: all randomness of frame ``fid`` comes from the stream
Philox(key=[master_seed, fid]), so any subset of frames can be generated
in any order, serially or in parallel, with identical results.  See
``_kernels._python`` for the frozen draw order.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels, model
from .errors import ParameterDomainError


class Arm(enum.Enum):
    """Detection arm; the value is the wire token used in events files."""

    STOKES = "S"
    ANTI_STOKES = "AS"


@dataclass(frozen=True)
class Roi:
    """Axis-aligned region of interest, in basis coordinates."""

    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        if not (self.lo[0] < self.hi[0] and self.lo[1] < self.hi[1]):
            raise ParameterDomainError(f"ROI must satisfy lo < hi, got {self.lo} {self.hi}")

    def as_bounds(self):
        return (self.lo[0], self.lo[1], self.hi[0], self.hi[1])

    def to_json_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_json_dict(cls, d):
        return cls(lo=tuple(float(x) for x in d["lo"]), hi=tuple(float(x) for x in d["hi"]))


@dataclass(frozen=True)
class DetectionEvent:
    arm: Arm
    coord: tuple[float, float]


@dataclass(frozen=True)
class Frame:
    """One experimental realization and its detected clicks."""

    frame_id: int
    events: tuple[DetectionEvent, ...]


@dataclass(frozen=True)
class DetectorConfig:
    """Detector chain parameters for one imaging configuration.

    pixel_pitch is in mm (near field) or hbar/mm (far field); ROIs are per
    arm.  pairs_per_mode is the mean pair number per spatial mode and frame,
    mode_count the number of modes contributing to the total rate.
    """

    basis: model.Basis
    pixel_pitch: float
    roi_stokes: Roi
    roi_anti_stokes: Roi
    eff_photon: float
    eff_spinwave_readout: float
    dark_rate: float
    pairs_per_mode: float
    mode_count: int

    def __post_init__(self):
        if not self.pixel_pitch > 0:
            raise ParameterDomainError(f"pixel_pitch must be > 0, got {self.pixel_pitch!r}")
        for name in ("eff_photon", "eff_spinwave_readout"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterDomainError(f"{name} must be in [0, 1], got {v!r}")
        if self.dark_rate < 0:
            raise ParameterDomainError(f"dark_rate must be >= 0, got {self.dark_rate!r}")
        if self.pairs_per_mode < 0:
            raise ParameterDomainError(f"pairs_per_mode must be >= 0, got {self.pairs_per_mode!r}")
        if not (isinstance(self.mode_count, int) and self.mode_count >= 1):
            raise ParameterDomainError(f"mode_count must be a positive integer, got {self.mode_count!r}")

    def to_json_dict(self):
        return {
            "basis": self.basis.value,
            "pixel_pitch": self.pixel_pitch,
            "roi_stokes": self.roi_stokes.to_json_dict(),
            "roi_anti_stokes": self.roi_anti_stokes.to_json_dict(),
            "eff_photon": self.eff_photon,
            "eff_spinwave_readout": self.eff_spinwave_readout,
            "dark_rate": self.dark_rate,
            "pairs_per_mode": self.pairs_per_mode,
            "mode_count": self.mode_count,
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            basis=model.Basis(d["basis"]),
            pixel_pitch=float(d["pixel_pitch"]),
            roi_stokes=Roi.from_json_dict(d["roi_stokes"]),
            roi_anti_stokes=Roi.from_json_dict(d["roi_anti_stokes"]),
            eff_photon=float(d["eff_photon"]),
            eff_spinwave_readout=float(d["eff_spinwave_readout"]),
            dark_rate=float(d["dark_rate"]),
            pairs_per_mode=float(d["pairs_per_mode"]),
            mode_count=int(d["mode_count"]),
        )


@dataclass(frozen=True)
class EventBlock:
    """Columnar event storage for a contiguous range of frames.

    Rows are in canonical order (frame_id, arm token, u, v) with arm code
    0 = anti-Stokes, 1 = Stokes; empty frames simply contribute no rows.
    """

    frame_id_start: int
    n_frames: int
    frame_ids: np.ndarray
    arm_codes: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def n_events(self):
        return int(self.frame_ids.size)

    def iter_frames(self):
        """Yield every frame in the range, including empty ones."""
        pos = 0
        n = self.n_events
        for fid in range(self.frame_id_start, self.frame_id_start + self.n_frames):
            events = []
            while pos < n and self.frame_ids[pos] == fid:
                arm = Arm.ANTI_STOKES if self.arm_codes[pos] == 0 else Arm.STOKES
                events.append(DetectionEvent(arm, (float(self.u[pos]), float(self.v[pos]))))
                pos += 1
            yield Frame(fid, tuple(events))

    @classmethod
    def concatenate(cls, blocks):
        blocks = list(blocks)
        if not blocks:
            raise ValueError("need at least one block")
        start = blocks[0].frame_id_start
        total = 0
        for b in blocks:
            if b.frame_id_start != start + total:
                raise ValueError("blocks must cover contiguous frame ranges")
            total += b.n_frames
        return cls(start, total,
                   np.concatenate([b.frame_ids for b in blocks]),
                   np.concatenate([b.arm_codes for b in blocks]),
                   np.concatenate([b.u for b in blocks]),
                   np.concatenate([b.v for b in blocks]))


def expected_pairs_per_frame(state, diff, tau, config):
    """Mean number of generated pairs per frame at delay ``tau``."""
    return (config.pairs_per_mode * config.mode_count
            * model.pair_rate_factor(state, diff, tau))


def sample_pair(state, diff, tau, basis, rng):
    """Draw one (photon, spin-wave) coordinate pair from the model.

    ``rng`` is a numpy Generator; exactly four standard normals are
    consumed, in the same order the frame kernels use.  Returns
    ((x, y), (X, Y)) in basis units.
    """
    cov = model.covariance_for_basis(state, diff, tau, basis)
    l11, l21, l22 = cov.cholesky()
    z = rng.standard_normal(4)
    photon = (l11 * z[0], l11 * z[2])
    spinwave = (l21 * z[0] + l22 * z[1], l21 * z[2] + l22 * z[3])
    return photon, spinwave


def generate_block(state, diff, tau, config, frame_id_start, n_frames, master_seed):
    """Generate a contiguous block of frames as columnar arrays."""
    lam = expected_pairs_per_frame(state, diff, tau, config)
    cov = model.covariance_for_basis(state, diff, tau, config.basis)
    l11, l21, l22 = cov.cholesky()
    ids, arms, u, v = _kernels.generate_frames(
        master_seed, frame_id_start, n_frames, lam, l11, l21, l22,
        config.eff_photon, config.eff_spinwave_readout, config.dark_rate,
        config.pixel_pitch, config.roi_stokes.as_bounds(),
        config.roi_anti_stokes.as_bounds())
    return EventBlock(frame_id_start, n_frames, ids, arms, u, v)


def generate_frame(state, diff, tau, config, frame_id, master_seed):
    """Generate a single frame."""
    block = generate_block(state, diff, tau, config, frame_id, 1, master_seed)
    return next(block.iter_frames())


def _thread_count():
    try:
        return max(1, int(os.environ.get("EPRSIM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class TauRun:
    """All frames of one tau block of a schedule."""

    tau: float
    block: EventBlock


def run_experiment(state, diff, tau_schedule, config, master_seed,
                   chunk_frames=16384):
    """Yield one TauRun per (tau, frame_count) schedule entry.

    Frame ids are globally unique across the schedule.  Generation is
    chunked; when EPRSIM_THREADS allows more than one worker, chunks are
    produced concurrently and reassembled in frame order, so the output is
    identical regardless of the degree of parallelism.
    """
    tau_schedule = list(tau_schedule)
    if not tau_schedule:
        raise ParameterDomainError("tau schedule must be non-empty")
    for tau, count in tau_schedule:
        if not (isinstance(count, int) and count > 0):
            raise ParameterDomainError(f"frame_count must be a positive integer, got {count!r}")
        model_check = float(tau)
        if not (math.isfinite(model_check) and model_check >= 0):
            raise ParameterDomainError(f"tau must be finite and >= 0, got {tau!r}")

    threads = _thread_count()
    next_id = 0
    for tau, count in tau_schedule:
        starts = list(range(next_id, next_id + count, chunk_frames))
        sizes = [min(chunk_frames, next_id + count - s) for s in starts]
        if threads > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                blocks = list(pool.map(
                    lambda sn: generate_block(state, diff, tau, config, sn[0], sn[1], master_seed),
                    zip(starts, sizes)))
        else:
            blocks = [generate_block(state, diff, tau, config, s, n, master_seed)
                      for s, n in zip(starts, sizes)]
        yield TauRun(tau=float(tau), block=EventBlock.concatenate(blocks))
        next_id += count
