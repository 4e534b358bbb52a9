"""Pure-numpy kernel backend.

This module is the authoritative definition of the per-frame random draw
order; the compiled backend reproduces it bit for bit by calling the same
numpy C distribution functions against the same per-frame Philox streams.

Per-frame determinism contract
------------------------------
Frame ``fid`` owns the stream Philox(key=[master_seed, fid]).  Draws happen
in this exact order (a step is skipped entirely when its count is zero):

1. n_pairs              ~ poisson(lam_pairs)
2. z                    ~ standard_normal((n_pairs, 4)),
                          columns (z1x, z2x, z1y, z2y)
3. photon keep          ~ random(n_pairs)   (kept when < eff_photon)
4. spin-wave keep       ~ random(n_pairs)   (kept when < eff_spinwave)
5. n_dark_s             ~ poisson(dark_rate)
6. dark Stokes coords   ~ random((n_dark_s, 2)), scaled to the Stokes ROI
7. n_dark_as            ~ poisson(dark_rate)
8. dark anti-Stokes     ~ random((n_dark_as, 2)), scaled to the AS ROI

Pair coordinates per axis: photon = l11*z1, spinwave = l21*z1 + l22*z2
with (l11, l21, l22) the Cholesky factor of the per-axis 2x2 covariance.
All coordinates are quantized to pixel centers (floor(c/pitch)+0.5)*pitch,
events whose quantized coordinates leave the arm ROI are dropped, and the
frame is emitted in canonical order: anti-Stokes block then Stokes block,
each sorted by (u, v).
"""

import numpy as np

BACKEND = "python"

_ARM_ANTI_STOKES = 0   # sorts before Stokes: "AS" < "S" lexicographically
_ARM_STOKES = 1


class FrameRng:
    """One Philox generator re-keyed per frame (cheap: a state assignment
    instead of a full BitGenerator construction)."""

    def __init__(self, master_seed):
        self._bitgen = np.random.Philox(key=np.array([master_seed, 0], dtype=np.uint64))
        self.generator = np.random.Generator(self._bitgen)
        self._template = self._bitgen.state
        self._template["state"]["counter"][:] = 0

    def rekey(self, frame_id):
        t = self._template
        t["state"]["counter"][:] = 0
        t["state"]["key"][1] = frame_id
        t["buffer_pos"] = 4
        t["has_uint32"] = 0
        t["uinteger"] = 0
        self._bitgen.state = t
        return self.generator


def _quantize(coords, pitch):
    return (np.floor(coords / pitch) + 0.5) * pitch


def _arm_block(u, v, pitch, roi):
    """Quantize one arm's raw coordinates, drop events leaving the ROI and
    return them sorted by (u, v)."""
    lo_x, lo_y, hi_x, hi_y = roi
    qu = _quantize(u, pitch)
    qv = _quantize(v, pitch)
    keep = (qu >= lo_x) & (qu <= hi_x) & (qv >= lo_y) & (qv <= hi_y)
    qu, qv = qu[keep], qv[keep]
    order = np.lexsort((qv, qu))
    return qu[order], qv[order]


def generate_frames(master_seed, frame_id_start, n_frames, lam_pairs,
                    l11, l21, l22, eff_photon, eff_spinwave, dark_rate,
                    pitch, roi_s, roi_as):
    """Generate ``n_frames`` frames of detection events.

    Returns (frame_ids int64, arm_codes uint8, u float64, v float64) flat
    arrays in canonical row order; arm code 0 is anti-Stokes, 1 is Stokes.
    """
    rng = FrameRng(master_seed)
    empty = np.empty(0)
    ids_parts, arm_parts, u_parts, v_parts = [], [], [], []
    s_lo_x, s_lo_y, s_hi_x, s_hi_y = roi_s
    as_lo_x, as_lo_y, as_hi_x, as_hi_y = roi_as

    for i in range(n_frames):
        fid = frame_id_start + i
        gen = rng.rekey(fid)

        n_pairs = gen.poisson(lam_pairs)
        if n_pairs:
            z = gen.standard_normal((n_pairs, 4))
            keep_ph = gen.random(n_pairs) < eff_photon
            keep_sp = gen.random(n_pairs) < eff_spinwave
            ph_x = (l11 * z[:, 0])[keep_ph]
            ph_y = (l11 * z[:, 2])[keep_ph]
            sp_x = (l21 * z[:, 0] + l22 * z[:, 1])[keep_sp]
            sp_y = (l21 * z[:, 2] + l22 * z[:, 3])[keep_sp]
        else:
            ph_x = ph_y = sp_x = sp_y = empty

        n_dark_s = gen.poisson(dark_rate)
        if n_dark_s:
            d = gen.random((n_dark_s, 2))
            ds_x = s_lo_x + (s_hi_x - s_lo_x) * d[:, 0]
            ds_y = s_lo_y + (s_hi_y - s_lo_y) * d[:, 1]
        else:
            ds_x = ds_y = empty

        n_dark_as = gen.poisson(dark_rate)
        if n_dark_as:
            d = gen.random((n_dark_as, 2))
            da_x = as_lo_x + (as_hi_x - as_lo_x) * d[:, 0]
            da_y = as_lo_y + (as_hi_y - as_lo_y) * d[:, 1]
        else:
            da_x = da_y = empty

        au, av = _arm_block(np.concatenate([sp_x, da_x]),
                            np.concatenate([sp_y, da_y]), pitch, roi_as)
        su, sv = _arm_block(np.concatenate([ph_x, ds_x]),
                            np.concatenate([ph_y, ds_y]), pitch, roi_s)
        n_as, n_s = au.size, su.size
        if n_as + n_s == 0:
            continue
        ids_parts.append(np.full(n_as + n_s, fid, dtype=np.int64))
        arm_parts.append(np.concatenate([
            np.zeros(n_as, dtype=np.uint8), np.ones(n_s, dtype=np.uint8)]))
        u_parts.append(np.concatenate([au, su]))
        v_parts.append(np.concatenate([av, sv]))

    if not ids_parts:
        return (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.uint8),
                np.empty(0), np.empty(0))
    return (np.concatenate(ids_parts), np.concatenate(arm_parts),
            np.concatenate(u_parts), np.concatenate(v_parts))


def _pair_values(s_vals, s_off, as_vals, as_off, shift):
    """All-pairs values for the cyclic frame pairing: Stokes events of frame
    i against anti-Stokes events of frame (i + shift) mod F, vectorized over
    the ragged per-frame layout."""
    n_frames = len(s_off) - 1
    n_s = np.diff(s_off)
    n_as = np.diff(as_off)
    partner = (np.arange(n_frames) + shift) % n_frames
    n_as_p = n_as[partner]
    pairs = n_s * n_as_p
    total = int(pairs.sum())
    if total == 0:
        return np.empty(0), np.empty(0)
    frame = np.repeat(np.arange(n_frames), pairs)
    start = np.concatenate([[0], np.cumsum(pairs)[:-1]])
    rank = np.arange(total) - np.repeat(start, pairs)
    s_idx = s_off[frame] + rank // n_as_p[frame]
    as_idx = as_off[partner[frame]] + rank % n_as_p[frame]
    return s_vals[s_idx], as_vals[as_idx]


def _bin_index(w, lo, width, nbins):
    """Uniform-bin index with an inclusive right edge on the last bin.
    Range checks happen on the float bin number, before the integer cast."""
    f = np.floor((w - lo) / width)
    hi = lo + nbins * width
    on_edge = (f == nbins) & (w <= hi)
    valid = (f >= 0) & ((f < nbins) | on_edge)
    idx = np.where(valid, f, 0.0).astype(np.int64)
    idx[on_edge] = nbins - 1
    return idx, valid


def pair_hist1d(s_vals, s_off, as_vals, as_off, shift, sign, lo, width, nbins):
    """Histogram of the composite value (s + sign*as) over all cyclic-shift
    frame pairings.  shift = 0 gives same-frame coincidences."""
    sv, av = _pair_values(s_vals, s_off, as_vals, as_off, shift)
    w = sv + av if sign > 0 else sv - av
    idx, valid = _bin_index(w, lo, width, nbins)
    return np.bincount(idx[valid], minlength=nbins).astype(np.float64)


def pair_hist2d(s_vals, s_off, as_vals, as_off, shift,
                s_lo, s_width, s_nbins, as_lo, as_width, as_nbins):
    """Joint histogram of (s, as) values over all cyclic-shift pairings."""
    sv, av = _pair_values(s_vals, s_off, as_vals, as_off, shift)
    ix, okx = _bin_index(sv, s_lo, s_width, s_nbins)
    iy, oky = _bin_index(av, as_lo, as_width, as_nbins)
    ok = okx & oky
    flat = np.bincount(ix[ok] * as_nbins + iy[ok], minlength=s_nbins * as_nbins)
    return flat.astype(np.float64).reshape(s_nbins, as_nbins)


def pair_stats(s_vals, s_off, as_vals, as_off, shift, sign):
    """(count, sum, sum of squares) of the composite value over all
    cyclic-shift pairings.  Shared by both backends (never compiled) so that
    derived quantities like automatic bin edges are backend-independent."""
    sv, av = _pair_values(s_vals, s_off, as_vals, as_off, shift)
    w = sv + av if sign > 0 else sv - av
    return float(w.size), float(np.sum(w)), float(np.sum(w * w))
