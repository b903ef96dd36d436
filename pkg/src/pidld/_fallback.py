"""Pure-numpy twins of the compiled kernels in ``_core.pyx``.

Same signatures, same slot layout, same arithmetic order. Noise comes from
:class:`numpy.random.Philox` keyed by ``(seed, stream_id)``, which is the
generator the compiled core re-implements.
"""
from __future__ import annotations

import numpy as np

_U53 = 1.0 / 9007199254740992.0
_TWO_PI = 6.283185307179586


def _slot_width(d: int) -> int:
    return 2 * ((d + 1) // 2)


def raw(seed: int, stream_id: int, start: int, count: int) -> np.ndarray:
    block, lane = divmod(int(start), 4)
    # block b is produced from counter b + 1; the generator increments first
    bitgen = np.random.Philox(
        counter=np.array([block, 0, 0, 0], dtype=np.uint64),
        key=np.array([seed, stream_id], dtype=np.uint64),
    )
    return bitgen.random_raw(lane + count)[lane:]


def _raw_slots(seed, ids, slot0, nslots, width):
    out = np.empty((len(ids), nslots * width), dtype=np.uint64)
    for i, sid in enumerate(ids):
        out[i] = raw(seed, int(sid), slot0 * width, nslots * width)
    return out


def uniforms(seed: int, ids: np.ndarray, slot: int, d: int) -> np.ndarray:
    r = _raw_slots(seed, ids, slot, 1, _slot_width(d))[:, :d]
    return (r >> np.uint64(11)).astype(np.float64) * _U53


def normals(seed: int, ids: np.ndarray, slot0: int, nslots: int, d: int) -> np.ndarray:
    width = _slot_width(d)
    n = len(ids)
    r = _raw_slots(seed, ids, slot0, nslots, width).reshape(n, nslots, width // 2, 2)
    u = (r >> np.uint64(11)).astype(np.float64) * _U53
    rad = np.sqrt(-2.0 * np.log(1.0 - u[..., 0]))
    ang = _TWO_PI * u[..., 1]
    z = np.empty((n, nslots, width), dtype=np.float64)
    z[..., 0::2] = rad * np.cos(ang)
    z[..., 1::2] = rad * np.sin(ang)
    return np.ascontiguousarray(z[..., :d].transpose(1, 0, 2))


def gmm_score(x, logw, means, var, bias_frac=0.0, bias_dir=None):
    x = np.asarray(x, dtype=np.float64)
    diff = x[:, None, :] - means[None, :, :]
    sq = np.zeros(diff.shape[:2])
    for j in range(x.shape[1]):
        sq = sq + diff[:, :, j] * diff[:, :, j]
    lg = logw[None, :] - 0.5 * sq / var
    lg = np.exp(lg - lg.max(axis=1, keepdims=True))
    z = np.zeros(len(x))
    for k in range(means.shape[0]):
        z = z + lg[:, k]
    out = np.zeros_like(x)
    for k in range(means.shape[0]):
        out = out + lg[:, k, None] * (means[k][None, :] - x)
    out = out / z[:, None] / var
    if bias_dir is not None:
        out = _apply_bias(out, bias_frac, bias_dir)
    return out


def _apply_bias(s, frac, direction):
    sq = np.zeros(len(s))
    for j in range(s.shape[1]):
        sq = sq + s[:, j] * s[:, j]
    mag = frac * np.sqrt(sq)
    return s + direction[None, :] * mag[:, None]


def pid_level_gmm(x, integral, prev, logw, means, var, eps, kp, kd, ki_sched,
                  t0, seed, ids, bias_frac, bias_dir, snaps, record_every,
                  limit, num_threads=1):
    n, d = x.shape
    bad = np.full(n, -1, dtype=np.int64)
    T = len(ki_sched)
    if n == 0 or T == 0:
        return bad
    noise = normals(seed, ids, t0 + 1, T, d)
    noise_scale = np.sqrt(2.0 * eps)
    biased = bias_dir is not None and bias_frac != 0.0
    rec_base = t0 // record_every if record_every > 0 else 0
    live = np.ones(n, dtype=bool)
    for k in range(T):
        t = t0 + k
        tf = float(t)
        s = gmm_score(x, logw, means, var)
        if biased:
            s = _apply_bias(s, bias_frac, bias_dir)
        ii = (integral * tf + s) / (tf + 1.0)
        new_x = x + eps * (kp * s + ki_sched[k] * ii + kd * (s - prev)) + noise_scale * noise[k]
        # frozen particles keep their last state, as the compiled loop breaks out
        x[live] = new_x[live]
        integral[live] = ii[live]
        prev[live] = s[live]
        with np.errstate(invalid="ignore"):
            broke = live & ~np.all(np.isfinite(new_x) & (np.abs(new_x) <= limit), axis=1)
        if record_every > 0 and (t + 1) % record_every == 0:
            ridx = (t + 1) // record_every - rec_base - 1
            snaps[ridx][live] = x[live]
        bad[broke] = t
        live &= ~broke
    return bad


def em_two(x, init, var, tol, max_iter):
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    m = np.array(init, dtype=np.float64, copy=True)
    w0 = w1 = 0.5
    r_prev = None
    iters = 0
    status = 0
    for it in range(max_iter):
        iters = it + 1
        d0 = x - m[0]
        d1 = x - m[1]
        sq0 = np.zeros(n)
        sq1 = np.zeros(n)
        for j in range(x.shape[1]):
            sq0 = sq0 + d0[:, j] * d0[:, j]
            sq1 = sq1 + d1[:, j] * d1[:, j]
        l0 = np.log(w0) - 0.5 * sq0 / var
        l1 = np.log(w1) - 0.5 * sq1 / var
        mx = np.maximum(l0, l1)
        e0 = np.exp(l0 - mx)
        e1 = np.exp(l1 - mx)
        r = e0 / (e0 + e1)
        change = np.inf if r_prev is None else np.max(np.abs(r - r_prev))
        r_prev = r
        n0 = r.sum()
        n1 = (1.0 - r).sum()
        if n0 < 1e-6 or n1 < 1e-6:
            status = 1
            break
        if it > 0 and change < tol:
            break
        m[0] = (r[:, None] * x).sum(axis=0) / n0
        m[1] = ((1.0 - r)[:, None] * x).sum(axis=0) / n1
        w0 = n0 / n
        w1 = n1 / n
    return m, np.array([w0, w1]), iters, status


def ar2_filter(b, c, w, y0, y_prev0):
    w = np.asarray(w, dtype=np.float64)
    out = np.empty(len(w))
    cur, prv = float(y0), float(y_prev0)
    for t, wt in enumerate(w.tolist()):
        cur, prv = b * cur + c * prv + wt, cur
        out[t] = cur
    return out
