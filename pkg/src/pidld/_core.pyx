# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: Philox noise streams, the fused GMM-score + PID level
loop, and two-component isotropic EM.

Every routine here has a numpy twin in :mod:`pidld._fallback` with the same
signature. Arithmetic is written in the same order as the twin so the only
cross-backend differences come from libm vs numpy transcendental functions.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport parallel, prange
from libc.math cimport exp, log, sqrt, cos, sin, fabs, isfinite
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    typedef struct {
        uint64_t k0, k1;
        uint64_t block;
        uint64_t buf[4];
        int valid;
    } pidld_stream;

    static inline void pidld_philox_block(uint64_t k0, uint64_t k1, uint64_t c0, uint64_t *out) {
        /* Philox4x64-10, counter (c0, 0, 0, 0), key (k0, k1). */
        uint64_t c[4] = {c0, 0, 0, 0};
        int r;
        for (r = 0; r < 10; r++) {
            __uint128_t p0, p1;
            uint64_t n0, n2;
            if (r > 0) {
                k0 += 0x9E3779B97F4A7C15ULL;
                k1 += 0xBB67AE8584CAA73BULL;
            }
            p0 = (__uint128_t)0xD2E7470EE14C6C93ULL * c[0];
            p1 = (__uint128_t)0xCA5A826395121157ULL * c[2];
            n0 = (uint64_t)(p1 >> 64) ^ c[1] ^ k0;
            n2 = (uint64_t)(p0 >> 64) ^ c[3] ^ k1;
            c[1] = (uint64_t)p1;
            c[3] = (uint64_t)p0;
            c[0] = n0;
            c[2] = n2;
        }
        out[0] = c[0]; out[1] = c[1]; out[2] = c[2]; out[3] = c[3];
    }

    static inline void pidld_stream_init(pidld_stream *s, uint64_t seed, uint64_t id) {
        s->k0 = seed; s->k1 = id; s->block = 0; s->valid = 0;
    }

    /* Raw draw number n of the stream; block b is generated from counter b + 1
       so the sequence matches numpy.random.Philox(key=[seed, id]).random_raw. */
    static inline uint64_t pidld_raw(pidld_stream *s, uint64_t n) {
        uint64_t b = n >> 2;
        if (!s->valid || s->block != b) {
            pidld_philox_block(s->k0, s->k1, b + 1, s->buf);
            s->block = b;
            s->valid = 1;
        }
        return s->buf[n & 3];
    }

    static inline double pidld_u53(uint64_t r) {
        return (double)(r >> 11) * (1.0 / 9007199254740992.0);
    }
    """
    ctypedef struct pidld_stream:
        uint64_t k0
        uint64_t k1
    void pidld_stream_init(pidld_stream *s, uint64_t seed, uint64_t id) nogil
    uint64_t pidld_raw(pidld_stream *s, uint64_t n) nogil
    double pidld_u53(uint64_t r) nogil

cdef double TWO_PI = 6.283185307179586


cdef inline int _slot_width(int d) noexcept nogil:
    return 2 * ((d + 1) // 2)


cdef inline void _normals_at(pidld_stream *s, int64_t slot, int d, double *out) noexcept nogil:
    cdef int width = _slot_width(d)
    cdef uint64_t base = <uint64_t>slot * <uint64_t>width
    cdef int j
    cdef double u1, u2, rad
    for j in range(0, d, 2):
        u1 = pidld_u53(pidld_raw(s, base + j))
        u2 = pidld_u53(pidld_raw(s, base + j + 1))
        rad = sqrt(-2.0 * log(1.0 - u1))
        out[j] = rad * cos(TWO_PI * u2)
        if j + 1 < d:
            out[j + 1] = rad * sin(TWO_PI * u2)


cdef inline void _gmm_score(const double *x, int d, int K, const double *logw,
                            const double *means, double var, double *lg,
                            double *out) noexcept nogil:
    cdef int j, k
    cdef double sq, diff, mx, z, r
    for k in range(K):
        sq = 0.0
        for j in range(d):
            diff = x[j] - means[k * d + j]
            sq = sq + diff * diff
        lg[k] = logw[k] - 0.5 * sq / var
    mx = lg[0]
    for k in range(1, K):
        if lg[k] > mx:
            mx = lg[k]
    z = 0.0
    for k in range(K):
        lg[k] = exp(lg[k] - mx)
        z = z + lg[k]
    for j in range(d):
        out[j] = 0.0
    for k in range(K):
        r = lg[k]
        for j in range(d):
            out[j] = out[j] + r * (means[k * d + j] - x[j])
    for j in range(d):
        out[j] = out[j] / z / var


cdef inline void _apply_bias(double *s, int d, double frac, const double *direction) noexcept nogil:
    cdef int j
    cdef double sq = 0.0
    cdef double mag
    for j in range(d):
        sq = sq + s[j] * s[j]
    mag = frac * sqrt(sq)
    for j in range(d):
        s[j] = s[j] + direction[j] * mag


def uniforms(uint64_t seed, const uint64_t[::1] ids, int64_t slot, int d):
    """Uniform [0, 1) draws of ``slot`` for each stream, shape (n, d)."""
    cdef Py_ssize_t n = ids.shape[0], i
    cdef int j, width = _slot_width(d)
    cdef pidld_stream s
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef uint64_t base = <uint64_t>slot * <uint64_t>width
    with nogil:
        for i in range(n):
            pidld_stream_init(&s, seed, ids[i])
            for j in range(d):
                o[i, j] = pidld_u53(pidld_raw(&s, base + j))
    return out


def normals(uint64_t seed, const uint64_t[::1] ids, int64_t slot0, Py_ssize_t nslots, int d):
    """Standard normal draws for slots ``slot0 .. slot0+nslots-1``, shape (nslots, n, d)."""
    cdef Py_ssize_t n = ids.shape[0], i, k
    cdef pidld_stream s
    out = np.empty((nslots, n, d), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for i in range(n):
            pidld_stream_init(&s, seed, ids[i])
            for k in range(nslots):
                _normals_at(&s, slot0 + k, d, &o[k, i, 0])
    return out


def raw(uint64_t seed, uint64_t stream_id, uint64_t start, Py_ssize_t count):
    cdef pidld_stream s
    cdef Py_ssize_t k
    out = np.empty(count, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    pidld_stream_init(&s, seed, stream_id)
    for k in range(count):
        o[k] = pidld_raw(&s, start + k)
    return out


def gmm_score(const double[:, ::1] x, const double[::1] logw, const double[:, ::1] means,
              double var, double bias_frac=0.0, const double[::1] bias_dir=None):
    cdef Py_ssize_t n = x.shape[0], i
    cdef int d = x.shape[1], K = means.shape[0]
    cdef bint biased = bias_dir is not None
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double *lg = <double *>malloc(K * sizeof(double))
    try:
        with nogil:
            for i in range(n):
                _gmm_score(&x[i, 0], d, K, &logw[0], &means[0, 0], var, lg, &o[i, 0])
                if biased:
                    _apply_bias(&o[i, 0], d, bias_frac, &bias_dir[0])
    finally:
        free(lg)
    return out


def pid_level_gmm(double[:, ::1] x, double[:, ::1] integral, double[:, ::1] prev,
                  const double[::1] logw, const double[:, ::1] means, double var,
                  double eps, double kp, double kd, const double[::1] ki_sched,
                  int64_t t0, uint64_t seed, const uint64_t[::1] ids,
                  double bias_frac, const double[::1] bias_dir,
                  double[:, :, ::1] snaps, int64_t record_every,
                  double limit, int num_threads=1):
    """Run ``len(ki_sched)`` PID-Langevin steps in place on every particle.

    Global step ``t0 + k`` uses noise slot ``t0 + k + 1`` (slot 0 seeds the
    initial positions). Snapshots land in ``snaps`` whenever the completed
    step count is a multiple of ``record_every``.

    Returns an int64 array holding, per particle, the global step at which a
    coordinate became non-finite or exceeded ``limit`` (-1 if none).
    """
    cdef Py_ssize_t n = x.shape[0], i
    cdef int d = x.shape[1], K = means.shape[0]
    cdef int64_t T = ki_sched.shape[0]
    cdef bint biased = bias_dir is not None and bias_frac != 0.0
    cdef double noise_scale = sqrt(2.0 * eps)
    cdef int64_t rec_base = t0 // record_every if record_every > 0 else 0
    bad = np.full(n, -1, dtype=np.int64)
    cdef int64_t[::1] bad_v = bad
    cdef double *s
    cdef double *z
    cdef double *lg
    cdef pidld_stream *st
    cdef int64_t k, t, ridx
    cdef int j
    cdef double tf, ii, ki
    cdef bint ok
    if d == 0 or n == 0 or T == 0:
        return bad
    with nogil, parallel(num_threads=num_threads):
        s = <double *>malloc(d * sizeof(double))
        z = <double *>malloc(d * sizeof(double))
        lg = <double *>malloc(K * sizeof(double))
        st = <pidld_stream *>malloc(sizeof(pidld_stream))
        for i in prange(n, schedule="static"):
            pidld_stream_init(st, seed, ids[i])
            for k in range(T):
                t = t0 + k
                tf = <double>t
                ki = ki_sched[k]
                _gmm_score(&x[i, 0], d, K, &logw[0], &means[0, 0], var, lg, s)
                if biased:
                    _apply_bias(s, d, bias_frac, &bias_dir[0])
                _normals_at(st, t + 1, d, z)
                ok = True
                for j in range(d):
                    ii = (integral[i, j] * tf + s[j]) / (tf + 1.0)
                    integral[i, j] = ii
                    x[i, j] = x[i, j] + eps * (kp * s[j] + ki * ii + kd * (s[j] - prev[i, j])) + noise_scale * z[j]
                    prev[i, j] = s[j]
                    if not isfinite(x[i, j]) or fabs(x[i, j]) > limit:
                        ok = False
                if record_every > 0 and (t + 1) % record_every == 0:
                    ridx = (t + 1) // record_every - rec_base - 1
                    for j in range(d):
                        snaps[ridx, i, j] = x[i, j]
                if not ok:
                    bad_v[i] = t
                    break
        free(s)
        free(z)
        free(lg)
        free(st)
    return bad


def em_two(const double[:, ::1] x, const double[:, ::1] init, double var,
           double tol, int max_iter):
    """Two-component isotropic EM with fixed shared variance and free weights.

    Returns ``(means, weights, iterations, status)``; status 1 flags a
    component whose total responsibility fell below 1e-6.
    """
    cdef Py_ssize_t n = x.shape[0], i
    cdef int d = x.shape[1], j, it
    means_arr = np.array(init, dtype=np.float64, copy=True)
    cdef double[:, ::1] m = means_arr
    resp_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] r0 = resp_arr
    cdef double w0 = 0.5, w1 = 0.5, l0, l1, mx, e0, e1, r, diff, sq0, sq1
    cdef double n0, n1, change, lw0, lw1
    cdef double acc0[64]
    cdef double acc1[64]
    cdef int status = 0, iters = 0
    if d > 64:
        raise ValueError("em_two supports at most 64 dimensions")
    with nogil:
        for it in range(max_iter):
            iters = it + 1
            lw0 = log(w0)
            lw1 = log(w1)
            change = 0.0
            n0 = 0.0
            n1 = 0.0
            for j in range(d):
                acc0[j] = 0.0
                acc1[j] = 0.0
            for i in range(n):
                sq0 = 0.0
                sq1 = 0.0
                for j in range(d):
                    diff = x[i, j] - m[0, j]
                    sq0 = sq0 + diff * diff
                    diff = x[i, j] - m[1, j]
                    sq1 = sq1 + diff * diff
                l0 = lw0 - 0.5 * sq0 / var
                l1 = lw1 - 0.5 * sq1 / var
                mx = l0 if l0 >= l1 else l1
                e0 = exp(l0 - mx)
                e1 = exp(l1 - mx)
                r = e0 / (e0 + e1)
                if it > 0 and fabs(r - r0[i]) > change:
                    change = fabs(r - r0[i])
                r0[i] = r
                n0 = n0 + r
                n1 = n1 + (1.0 - r)
                for j in range(d):
                    acc0[j] = acc0[j] + r * x[i, j]
                    acc1[j] = acc1[j] + (1.0 - r) * x[i, j]
            if n0 < 1e-6 or n1 < 1e-6:
                status = 1
                break
            if it > 0 and change < tol:
                break
            for j in range(d):
                m[0, j] = acc0[j] / n0
                m[1, j] = acc1[j] / n1
            w0 = n0 / n
            w1 = n1 / n
    return means_arr, np.array([w0, w1]), iters, status


def ar2_filter(double b, double c, const double[::1] w, double y0, double y_prev0):
    """``y_{t+1} = b y_t + c y_{t-1} + w_t``; returns ``y_1 .. y_n``."""
    cdef Py_ssize_t n = w.shape[0], t
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] y = out
    cdef double cur = y0, prv = y_prev0, nxt
    with nogil:
        for t in range(n):
            nxt = b * cur + c * prv + w[t]
            prv = cur
            cur = nxt
            y[t] = cur
    return out
