"""Kernel backend selection.

The hot loops (per-frame event generation, all-pairs coincidence
accumulation) exist twice: a Cython extension ``_core`` and a pure-numpy
fallback ``_python``.  Both produce bit-identical output; the extension is
simply faster.  Selection happens at import time and can be forced with
``EPRSIM_KERNELS=python|cython`` (default ``auto``: compiled if available).

``pair_stats`` deliberately has a single shared implementation so that
derived quantities (automatic bin edges) never depend on the backend.
"""

import os

import numpy as np

from . import _python

__all__ = ["backend_name", "generate_frames", "load_backend",
           "pair_hist1d", "pair_hist2d", "pair_stats"]


def load_backend(name):
    """Return the kernel module for ``name`` ('python' or 'cython')."""
    if name == "python":
        return _python
    if name == "cython":
        from . import _core
        return _core
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    choice = os.environ.get("EPRSIM_KERNELS", "auto")
    if choice == "python":
        return _python
    if choice == "cython":
        return load_backend("cython")
    if choice == "auto":
        try:
            return load_backend("cython")
        except ImportError:
            return _python
    raise ValueError(f"EPRSIM_KERNELS must be auto, python or cython, got {choice!r}")


_impl = _select()


def backend_name():
    return _impl.BACKEND


def _as_f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _as_i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def generate_frames(master_seed, frame_id_start, n_frames, lam_pairs,
                    l11, l21, l22, eff_photon, eff_spinwave, dark_rate,
                    pitch, roi_s, roi_as):
    return _impl.generate_frames(
        int(master_seed), int(frame_id_start), int(n_frames), float(lam_pairs),
        float(l11), float(l21), float(l22),
        float(eff_photon), float(eff_spinwave), float(dark_rate),
        float(pitch), tuple(map(float, roi_s)), tuple(map(float, roi_as)))


def pair_hist1d(s_vals, s_off, as_vals, as_off, shift, sign, lo, width, nbins):
    if shift < 0:
        raise ValueError("shift must be >= 0")
    return _impl.pair_hist1d(_as_f64(s_vals), _as_i64(s_off),
                             _as_f64(as_vals), _as_i64(as_off),
                             int(shift), int(sign), float(lo), float(width), int(nbins))


def pair_hist2d(s_vals, s_off, as_vals, as_off, shift,
                s_lo, s_width, s_nbins, as_lo, as_width, as_nbins):
    if shift < 0:
        raise ValueError("shift must be >= 0")
    return _impl.pair_hist2d(_as_f64(s_vals), _as_i64(s_off),
                             _as_f64(as_vals), _as_i64(as_off), int(shift),
                             float(s_lo), float(s_width), int(s_nbins),
                             float(as_lo), float(as_width), int(as_nbins))


def pair_stats(s_vals, s_off, as_vals, as_off, shift, sign):
    # always the shared numpy implementation, independent of the backend
    return _python.pair_stats(_as_f64(s_vals), _as_i64(s_off),
                              _as_f64(as_vals), _as_i64(as_off),
                              int(shift), int(sign))
