#cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel backend.

Bit-for-bit equivalent to ``_python.py`` (the authoritative definition of
the per-frame draw order): each frame re-keys one Philox bit generator and
draws through the same numpy C distribution functions that the Generator
methods call, in the same order.  Floating-point expressions mirror the
numpy element-wise operations one rounding step at a time, which is why
this extension is compiled with -ffp-contract=off.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport floor
from libc.stdlib cimport free, malloc
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (random_poisson,
                                           random_standard_normal,
                                           random_standard_uniform)

cnp.import_array()

BACKEND = "cython"


cdef inline double _quant(double c, double pitch) nogil:
    return (floor(c / pitch) + 0.5) * pitch


cdef inline void _isort2(double *a, double *b, Py_ssize_t n) nogil:
    # sort event rows by (u, v); ties are identical rows so stability is moot
    cdef Py_ssize_t i, j
    cdef double ka, kb
    for i in range(1, n):
        ka = a[i]; kb = b[i]
        j = i - 1
        while j >= 0 and (a[j] > ka or (a[j] == ka and b[j] > kb)):
            a[j + 1] = a[j]; b[j + 1] = b[j]
            j -= 1
        a[j + 1] = ka; b[j + 1] = kb


cdef struct _scratch:
    # per-frame staging; the grow functions below reallocate only groups
    # that hold no live data at their call site
    double *ph_x
    double *ph_y
    double *sp_x
    double *sp_y
    unsigned char *keep_ph
    unsigned char *keep_sp
    double *ds_x
    double *ds_y
    double *da_x
    double *da_y
    double *blk_u
    double *blk_v
    Py_ssize_t cap_pairs
    Py_ssize_t cap_ds
    Py_ssize_t cap_da
    Py_ssize_t cap_blk


cdef void _free_scratch(_scratch *s) noexcept:
    free(s.ph_x); free(s.ph_y); free(s.sp_x); free(s.sp_y)
    free(s.keep_ph); free(s.keep_sp)
    free(s.ds_x); free(s.ds_y); free(s.da_x); free(s.da_y)
    free(s.blk_u); free(s.blk_v)


cdef int _ensure_blk(_scratch *s) except -1:
    # the assembly block holds at most one arm: pairs plus that arm's darks
    cdef Py_ssize_t need = s.cap_pairs + (s.cap_ds if s.cap_ds > s.cap_da else s.cap_da)
    if need <= s.cap_blk:
        return 0
    free(s.blk_u); free(s.blk_v)
    s.blk_u = <double *> malloc(need * sizeof(double))
    s.blk_v = <double *> malloc(need * sizeof(double))
    if s.blk_u == NULL or s.blk_v == NULL:
        raise MemoryError()
    s.cap_blk = need
    return 0


cdef int _grow_pairs(_scratch *s, Py_ssize_t need) except -1:
    cdef Py_ssize_t cap = s.cap_pairs if s.cap_pairs > 0 else 64
    while cap < need:
        cap *= 2
    free(s.ph_x); free(s.ph_y); free(s.sp_x); free(s.sp_y)
    free(s.keep_ph); free(s.keep_sp)
    s.ph_x = <double *> malloc(cap * sizeof(double))
    s.ph_y = <double *> malloc(cap * sizeof(double))
    s.sp_x = <double *> malloc(cap * sizeof(double))
    s.sp_y = <double *> malloc(cap * sizeof(double))
    s.keep_ph = <unsigned char *> malloc(cap)
    s.keep_sp = <unsigned char *> malloc(cap)
    if (s.ph_x == NULL or s.ph_y == NULL or s.sp_x == NULL or s.sp_y == NULL or
            s.keep_ph == NULL or s.keep_sp == NULL):
        raise MemoryError()
    s.cap_pairs = cap
    return _ensure_blk(s)


cdef int _grow_ds(_scratch *s, Py_ssize_t need) except -1:
    cdef Py_ssize_t cap = s.cap_ds if s.cap_ds > 0 else 64
    while cap < need:
        cap *= 2
    free(s.ds_x); free(s.ds_y)
    s.ds_x = <double *> malloc(cap * sizeof(double))
    s.ds_y = <double *> malloc(cap * sizeof(double))
    if s.ds_x == NULL or s.ds_y == NULL:
        raise MemoryError()
    s.cap_ds = cap
    return _ensure_blk(s)


cdef int _grow_da(_scratch *s, Py_ssize_t need) except -1:
    cdef Py_ssize_t cap = s.cap_da if s.cap_da > 0 else 64
    while cap < need:
        cap *= 2
    free(s.da_x); free(s.da_y)
    s.da_x = <double *> malloc(cap * sizeof(double))
    s.da_y = <double *> malloc(cap * sizeof(double))
    if s.da_x == NULL or s.da_y == NULL:
        raise MemoryError()
    s.cap_da = cap
    return _ensure_blk(s)


def _grow_out(arr, used, new_cap):
    out = np.empty(new_cap, dtype=arr.dtype)
    out[:used] = arr[:used]
    return out


def generate_frames(master_seed, frame_id_start, n_frames, double lam_pairs,
                    double l11, double l21, double l22,
                    double eff_photon, double eff_spinwave, double dark_rate,
                    double pitch, roi_s, roi_as):
    """Compiled equivalent of ``_python.generate_frames``."""
    cdef double s_lo_x = roi_s[0], s_lo_y = roi_s[1], s_hi_x = roi_s[2], s_hi_y = roi_s[3]
    cdef double a_lo_x = roi_as[0], a_lo_y = roi_as[1], a_hi_x = roi_as[2], a_hi_y = roi_as[3]
    cdef double s_span_x = s_hi_x - s_lo_x, s_span_y = s_hi_y - s_lo_y
    cdef double a_span_x = a_hi_x - a_lo_x, a_span_y = a_hi_y - a_lo_y

    bg = np.random.Philox(key=np.array([master_seed, 0], dtype=np.uint64))
    tmpl = bg.state
    tmpl_counter = tmpl["state"]["counter"]
    tmpl_key = tmpl["state"]["key"]
    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(bg.capsule, "BitGenerator")

    cdef Py_ssize_t nf = n_frames
    cdef long long fid0 = frame_id_start
    cdef Py_ssize_t cap = <Py_ssize_t> (nf * (2.0 * lam_pairs + 2.0 * dark_rate) * 1.3) + 256
    out_ids = np.empty(cap, dtype=np.int64)
    out_arm = np.empty(cap, dtype=np.uint8)
    out_u = np.empty(cap, dtype=np.float64)
    out_v = np.empty(cap, dtype=np.float64)
    cdef cnp.int64_t[::1] v_ids = out_ids
    cdef cnp.uint8_t[::1] v_arm = out_arm
    cdef double[::1] v_u = out_u
    cdef double[::1] v_v = out_v

    cdef _scratch sc
    sc.ph_x = sc.ph_y = sc.sp_x = sc.sp_y = NULL
    sc.ds_x = sc.ds_y = sc.da_x = sc.da_y = NULL
    sc.blk_u = sc.blk_v = NULL
    sc.keep_ph = NULL
    sc.keep_sp = NULL
    sc.cap_pairs = sc.cap_ds = sc.cap_da = sc.cap_blk = 0

    cdef Py_ssize_t i, k, m, arm, out_len = 0, grow
    cdef long long fid, n_pairs, n_dark_s, n_dark_as
    cdef double z1x, z2x, z1y, z2y, t1, t2, qu, qv, ux, uy

    try:
        _grow_pairs(&sc, 256)
        _grow_ds(&sc, 64)
        _grow_da(&sc, 64)
        for i in range(nf):
            fid = fid0 + i
            # re-key the per-frame stream (python-level state assignment)
            tmpl_counter[0] = 0; tmpl_counter[1] = 0
            tmpl_counter[2] = 0; tmpl_counter[3] = 0
            tmpl_key[1] = fid
            tmpl["buffer_pos"] = 4
            tmpl["has_uint32"] = 0
            tmpl["uinteger"] = 0
            bg.state = tmpl

            # --- draws, in the contract order ---
            n_pairs = random_poisson(rng, lam_pairs)
            if n_pairs > sc.cap_pairs:
                _grow_pairs(&sc, n_pairs)
            for k in range(n_pairs):
                z1x = random_standard_normal(rng)
                z2x = random_standard_normal(rng)
                z1y = random_standard_normal(rng)
                z2y = random_standard_normal(rng)
                sc.ph_x[k] = l11 * z1x
                sc.ph_y[k] = l11 * z1y
                t1 = l21 * z1x; t2 = l22 * z2x
                sc.sp_x[k] = t1 + t2
                t1 = l21 * z1y; t2 = l22 * z2y
                sc.sp_y[k] = t1 + t2
            for k in range(n_pairs):
                sc.keep_ph[k] = random_standard_uniform(rng) < eff_photon
            for k in range(n_pairs):
                sc.keep_sp[k] = random_standard_uniform(rng) < eff_spinwave

            n_dark_s = random_poisson(rng, dark_rate)
            if n_dark_s > sc.cap_ds:
                _grow_ds(&sc, n_dark_s)
            for k in range(n_dark_s):
                ux = random_standard_uniform(rng)
                uy = random_standard_uniform(rng)
                sc.ds_x[k] = s_lo_x + s_span_x * ux
                sc.ds_y[k] = s_lo_y + s_span_y * uy

            n_dark_as = random_poisson(rng, dark_rate)
            if n_dark_as > sc.cap_da:
                _grow_da(&sc, n_dark_as)
            for k in range(n_dark_as):
                ux = random_standard_uniform(rng)
                uy = random_standard_uniform(rng)
                sc.da_x[k] = a_lo_x + a_span_x * ux
                sc.da_y[k] = a_lo_y + a_span_y * uy

            # --- emit: anti-Stokes block (arm 0), then Stokes block (arm 1) ---
            for arm in range(2):
                m = 0
                if arm == 0:
                    for k in range(n_pairs):
                        if sc.keep_sp[k]:
                            qu = _quant(sc.sp_x[k], pitch)
                            qv = _quant(sc.sp_y[k], pitch)
                            if a_lo_x <= qu and qu <= a_hi_x and a_lo_y <= qv and qv <= a_hi_y:
                                sc.blk_u[m] = qu; sc.blk_v[m] = qv
                                m += 1
                    for k in range(n_dark_as):
                        qu = _quant(sc.da_x[k], pitch)
                        qv = _quant(sc.da_y[k], pitch)
                        if a_lo_x <= qu and qu <= a_hi_x and a_lo_y <= qv and qv <= a_hi_y:
                            sc.blk_u[m] = qu; sc.blk_v[m] = qv
                            m += 1
                else:
                    for k in range(n_pairs):
                        if sc.keep_ph[k]:
                            qu = _quant(sc.ph_x[k], pitch)
                            qv = _quant(sc.ph_y[k], pitch)
                            if s_lo_x <= qu and qu <= s_hi_x and s_lo_y <= qv and qv <= s_hi_y:
                                sc.blk_u[m] = qu; sc.blk_v[m] = qv
                                m += 1
                    for k in range(n_dark_s):
                        qu = _quant(sc.ds_x[k], pitch)
                        qv = _quant(sc.ds_y[k], pitch)
                        if s_lo_x <= qu and qu <= s_hi_x and s_lo_y <= qv and qv <= s_hi_y:
                            sc.blk_u[m] = qu; sc.blk_v[m] = qv
                            m += 1
                _isort2(sc.blk_u, sc.blk_v, m)
                if out_len + m > cap:
                    grow = cap
                    while out_len + m > grow:
                        grow *= 2
                    out_ids = _grow_out(out_ids, out_len, grow)
                    out_arm = _grow_out(out_arm, out_len, grow)
                    out_u = _grow_out(out_u, out_len, grow)
                    out_v = _grow_out(out_v, out_len, grow)
                    v_ids = out_ids; v_arm = out_arm; v_u = out_u; v_v = out_v
                    cap = grow
                for k in range(m):
                    v_ids[out_len] = fid
                    v_arm[out_len] = arm
                    v_u[out_len] = sc.blk_u[k]
                    v_v[out_len] = sc.blk_v[k]
                    out_len += 1
    finally:
        _free_scratch(&sc)

    return (out_ids[:out_len].copy(), out_arm[:out_len].copy(),
            out_u[:out_len].copy(), out_v[:out_len].copy())


def pair_hist1d(s_vals, s_off, as_vals, as_off, shift, sign, lo, width, nbins):
    """Histogram of the composite value (s + sign*as) over all cyclic-shift
    frame pairings; compiled equivalent of ``_python.pair_hist1d``."""
    cdef double[::1] sv = s_vals
    cdef double[::1] av = as_vals
    cdef cnp.int64_t[::1] soff = s_off
    cdef cnp.int64_t[::1] aoff = as_off
    cdef Py_ssize_t n_frames = soff.shape[0] - 1
    cdef Py_ssize_t sh = shift, nb = nbins
    cdef int sgn = sign
    cdef double lo_ = lo, w_ = width
    cdef double hi_ = lo_ + nb * w_
    counts = np.zeros(nb, dtype=np.float64)
    cdef double[::1] c = counts
    cdef Py_ssize_t f, g, si, ai
    cdef double a, w, fl
    cdef Py_ssize_t idx
    with nogil:
        for f in range(n_frames):
            g = (f + sh) % n_frames
            for si in range(soff[f], soff[f + 1]):
                a = sv[si]
                for ai in range(aoff[g], aoff[g + 1]):
                    if sgn > 0:
                        w = a + av[ai]
                    else:
                        w = a - av[ai]
                    fl = floor((w - lo_) / w_)
                    if fl < 0:
                        continue
                    if fl < nb:
                        idx = <Py_ssize_t> fl
                    elif fl == nb and w <= hi_:
                        idx = nb - 1
                    else:
                        continue
                    c[idx] += 1.0
    return counts


def pair_hist2d(s_vals, s_off, as_vals, as_off, shift,
                s_lo, s_width, s_nbins, as_lo, as_width, as_nbins):
    """Joint histogram of (s, as) values over all cyclic-shift pairings;
    compiled equivalent of ``_python.pair_hist2d``."""
    cdef double[::1] sv = s_vals
    cdef double[::1] av = as_vals
    cdef cnp.int64_t[::1] soff = s_off
    cdef cnp.int64_t[::1] aoff = as_off
    cdef Py_ssize_t n_frames = soff.shape[0] - 1
    cdef Py_ssize_t sh = shift
    cdef Py_ssize_t nx = s_nbins, ny = as_nbins
    cdef double xlo = s_lo, xw = s_width, ylo = as_lo, yw = as_width
    cdef double xhi = xlo + nx * xw, yhi = ylo + ny * yw
    counts = np.zeros((nx, ny), dtype=np.float64)
    cdef double[:, ::1] c = counts
    cdef Py_ssize_t f, g, si, ai, ix, iy
    cdef double a, b, fl
    with nogil:
        for f in range(n_frames):
            g = (f + sh) % n_frames
            for si in range(soff[f], soff[f + 1]):
                a = sv[si]
                fl = floor((a - xlo) / xw)
                if fl < 0:
                    continue
                if fl < nx:
                    ix = <Py_ssize_t> fl
                elif fl == nx and a <= xhi:
                    ix = nx - 1
                else:
                    continue
                for ai in range(aoff[g], aoff[g + 1]):
                    b = av[ai]
                    fl = floor((b - ylo) / yw)
                    if fl < 0:
                        continue
                    if fl < ny:
                        iy = <Py_ssize_t> fl
                    elif fl == ny and b <= yhi:
                        iy = ny - 1
                    else:
                        continue
                    c[ix, iy] += 1.0
    return counts
