# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled event loop; the pure-Python twin is _kernels_py.py.

Operation-for-operation mirror of the fallback: same Fenwick tree, same
float arithmetic order, same RNG discipline.  The exponential/uniform
draws call the exact C functions behind Generator.standard_exponential()
and Generator.random() (via the bit-generator capsule), so both backends
walk the same random stream bit for bit.  Any change here must be made
in _kernels_py.py as well, and vice versa.
"""

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from libc.math cimport pow as c_pow
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport (
    random_standard_exponential,
    random_standard_uniform,
)

cnp.import_array()

STATUS_T_END = 0
STATUS_MAX_EVENTS = 1
STATUS_ABSORBED = 2

BACKEND_NAME = "compiled"


cdef inline double _site_rate(int model, cnp.int64_t[:, ::1] hts, int i, int k,
                              double[::1] p, double[::1] q) noexcept:
    cdef cnp.int64_t d = hts[i, k + 1] - 2 * hts[i, k] + hts[i, k - 1]
    if d == 0:
        return 0.0
    if model == 0:  # bridge
        return p[k] if d > 0 else q[k]
    if model == 1:  # wall
        if d > 0:
            return p[k]
        return q[k] if hts[0, k] > 1 else 0.0
    if i == 0:      # pair, upper
        if d > 0:
            return p[k]
        return q[k] if hts[0, k] > hts[1, k] else 0.0
    if d > 0:       # pair, lower
        return q[k] if hts[1, k] < hts[0, k] else 0.0
    return p[k]


cdef inline bint _blocked(int model, cnp.int64_t[:, ::1] hts, int i, int k) noexcept:
    cdef cnp.int64_t d = hts[i, k + 1] - 2 * hts[i, k] + hts[i, k - 1]
    if model == 1:
        return d < 0 and hts[0, k] == 1
    if model == 2:
        if i == 0:
            return d < 0 and hts[0, k] == hts[1, k]
        return d > 0 and hts[1, k] == hts[0, k]
    return False


cdef inline void _fenwick_build(double[::1] rate, double[::1] tree,
                                int n_leaves) noexcept:
    cdef int i, j
    for i in range(1, n_leaves + 1):
        tree[i] = rate[i - 1]
    for i in range(1, n_leaves + 1):
        j = i + (i & (-i))
        if j <= n_leaves:
            tree[j] += tree[i]


cdef inline void _fenwick_update(double[::1] tree, int n_leaves, int leaf,
                                 double delta) noexcept:
    cdef int i = leaf + 1
    while i <= n_leaves:
        tree[i] += delta
        i += i & (-i)


cdef inline int _fenwick_select(double[::1] tree, int n_leaves, int top_bit,
                                double u) noexcept:
    cdef int idx = 0
    cdef int bit = top_bit
    cdef int nxt
    while bit:
        nxt = idx + bit
        if nxt <= n_leaves and tree[nxt] < u:
            idx = nxt
            u -= tree[nxt]
        bit >>= 1
    return idx


cdef cnp.ndarray _grow(cnp.ndarray buf):
    cdef cnp.ndarray out = np.empty((buf.shape[0] * 2, buf.shape[1]),
                                    dtype=np.float64)
    out[:buf.shape[0]] = buf
    return out


def run_gillespie(int model, heights0, p_arr, q_arr, double t_end,
                  snapshot_times, generator, max_events=None,
                  bint record_events=True, long long rebuild_every=4096,
                  bint debug=False):
    """Same contract as _kernels_py.run_gillespie."""
    cdef cnp.ndarray[cnp.int64_t, ndim=2] hts_arr = \
        np.array(heights0, dtype=np.int64, order="C", copy=True)
    cdef cnp.int64_t[:, ::1] hts = hts_arr
    cdef int n_ifaces = hts_arr.shape[0]
    cdef int L = hts_arr.shape[1]
    cdef int two_n = L - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p_np = \
        np.array(p_arr, dtype=np.float64, order="C", copy=True)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] q_np = \
        np.array(q_arr, dtype=np.float64, order="C", copy=True)
    cdef double[::1] p = p_np
    cdef double[::1] q = q_np
    cdef long long max_ev = (1 << 62) if max_events is None else <long long>max_events

    # RNG: the C functions behind Generator.standard_exponential / .random
    capsule = generator.bit_generator.capsule
    if not PyCapsule_IsValid(capsule, "BitGenerator"):
        raise ValueError("generator does not expose a BitGenerator capsule")
    cdef bitgen_t *rng = <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")

    cdef int n_meas = 0
    if model == 1:
        n_meas = 1
    elif model == 2:
        n_meas = 2
    cdef cnp.ndarray[cnp.float64_t, ndim=1] zr_np = np.zeros(L)
    cdef double[::1] zeta_rate = zr_np
    cdef double tn15 = c_pow(<double> two_n, 1.5)
    cdef int k
    for k in range(L):
        zeta_rate[k] = 2.0 * q[k] / tn15

    cdef int n_leaves = n_ifaces * L
    cdef int top_bit = 1
    while (top_bit << 1) <= n_leaves:
        top_bit <<= 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] tree_np = np.zeros(n_leaves + 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] rate_np = np.zeros(n_leaves)
    cdef double[::1] tree = tree_np
    cdef double[::1] rate = rate_np
    cdef int i, base
    for i in range(n_ifaces):
        base = i * L
        for k in range(1, two_n):
            rate[base + k] = _site_rate(model, hts, i, k, p, q)
    _fenwick_build(rate, tree, n_leaves)
    cdef double R = 0.0
    for k in range(n_leaves):
        R += rate[k]

    cdef cnp.ndarray[cnp.float64_t, ndim=2] blk_np = np.full((n_ifaces, L), -1.0)
    cdef double[:, ::1] blk_since = blk_np
    cdef cnp.ndarray[cnp.float64_t, ndim=2] zmass_np = np.zeros((max(n_meas, 1), L))
    cdef double[:, ::1] z_mass = zmass_np
    # interval logs: (site, start, end) rows, grown by doubling
    z_bufs = [np.empty((1024, 3), dtype=np.float64) for _ in range(n_meas)]
    cdef long long z_cnt0 = 0, z_cnt1 = 0
    cdef cnp.float64_t[:, ::1] zb0 = z_bufs[0] if n_meas > 0 else zmass_np
    cdef cnp.float64_t[:, ::1] zb1 = z_bufs[1] if n_meas > 1 else zmass_np
    if n_meas:
        for i in range(n_ifaces):
            for k in range(1, two_n):
                if _blocked(model, hts, i, k):
                    blk_since[i, k] = 0.0

    cdef cnp.ndarray[cnp.float64_t, ndim=1] snap_t = \
        np.array(snapshot_times, dtype=np.float64, order="C", copy=True)
    cdef double[::1] snap_times = snap_t
    cdef long long n_snap = snap_t.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=3] snaps_np = \
        np.zeros((n_snap, n_ifaces, L), dtype=np.int64)
    cdef cnp.int64_t[:, :, ::1] snaps = snaps_np
    cdef long long snap_ptr = 0

    ev_buf = np.empty((4096 if record_events else 1, 4), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] ev = ev_buf
    cdef long long ev_cnt = 0

    cdef double t = 0.0, e, dt, t_new, u, new_rate, delta, was
    cdef long long n_events = 0
    cdef int status = STATUS_T_END
    cdef int leaf, d, j, s, c, m, leaf_js, a_idx
    cdef cnp.int64_t dd
    cdef bint now_blocked
    cdef int aff_j[4]
    cdef int aff_s[4]
    cdef int n_aff

    while True:
        if n_events >= max_ev:
            status = STATUS_MAX_EVENTS
            break
        if R <= 0.0:
            t = t_end
            status = STATUS_ABSORBED
            break
        e = random_standard_exponential(rng)
        dt = e / R
        if t + dt > t_end:
            t = t_end
            break
        t_new = t + dt
        u = random_standard_uniform(rng) * R
        leaf = _fenwick_select(tree, n_leaves, top_bit, u)
        if leaf >= n_leaves:
            leaf = n_leaves - 1
        while rate[leaf] == 0.0:
            leaf -= 1
        i = leaf / L
        k = leaf - i * L

        while snap_ptr < n_snap and snap_times[snap_ptr] < t_new:
            for j in range(n_ifaces):
                for c in range(L):
                    snaps[snap_ptr, j, c] = hts[j, c]
            snap_ptr += 1

        t = t_new
        dd = hts[i, k + 1] - 2 * hts[i, k] + hts[i, k - 1]
        d = 1 if dd > 0 else -1
        hts[i, k] += 2 * d
        if record_events:
            if ev_cnt == ev.shape[0]:
                ev_buf = _grow(ev_buf)
                ev = ev_buf
            ev[ev_cnt, 0] = t
            ev[ev_cnt, 1] = k
            ev[ev_cnt, 2] = i
            ev[ev_cnt, 3] = d
            ev_cnt += 1
        n_events += 1

        if debug:
            assert abs(hts[i, k] - hts[i, k - 1]) == 1
            assert abs(hts[i, k + 1] - hts[i, k]) == 1
            assert hts[0, 0] == 0 and hts[0, two_n] == 0
            if model == 1:
                assert hts[0, k] >= 0
            if model == 2:
                assert hts[0, k] >= hts[1, k]

        aff_j[0] = i; aff_s[0] = k - 1
        aff_j[1] = i; aff_s[1] = k
        aff_j[2] = i; aff_s[2] = k + 1
        if model == 2:
            aff_j[3] = 1 - i; aff_s[3] = k
            n_aff = 4
        else:
            n_aff = 3
        for a_idx in range(n_aff):
            j = aff_j[a_idx]
            s = aff_s[a_idx]
            if s < 1 or s > two_n - 1:
                continue
            leaf_js = j * L + s
            new_rate = _site_rate(model, hts, j, s, p, q)
            delta = new_rate - rate[leaf_js]
            if delta != 0.0:
                rate[leaf_js] = new_rate
                _fenwick_update(tree, n_leaves, leaf_js, delta)
                R += delta
            if n_meas:
                now_blocked = _blocked(model, hts, j, s)
                was = blk_since[j, s]
                if now_blocked and was < 0.0:
                    blk_since[j, s] = t
                elif (not now_blocked) and was >= 0.0:
                    blk_since[j, s] = -1.0
                    m = 0 if model == 1 else j
                    if m == 0:
                        if z_cnt0 == zb0.shape[0]:
                            z_bufs[0] = _grow(z_bufs[0])
                            zb0 = z_bufs[0]
                        zb0[z_cnt0, 0] = s
                        zb0[z_cnt0, 1] = was
                        zb0[z_cnt0, 2] = t
                        z_cnt0 += 1
                    else:
                        if z_cnt1 == zb1.shape[0]:
                            z_bufs[1] = _grow(z_bufs[1])
                            zb1 = z_bufs[1]
                        zb1[z_cnt1, 0] = s
                        zb1[z_cnt1, 1] = was
                        zb1[z_cnt1, 2] = t
                        z_cnt1 += 1
                    z_mass[m, s] += zeta_rate[s] * (t - was)

        if n_events % rebuild_every == 0:
            for j in range(n_ifaces):
                base = j * L
                for s in range(1, two_n):
                    rate[base + s] = _site_rate(model, hts, j, s, p, q)
            _fenwick_build(rate, tree, n_leaves)
            R = 0.0
            for s in range(n_leaves):
                R += rate[s]

    while snap_ptr < n_snap and snap_times[snap_ptr] <= t:
        for j in range(n_ifaces):
            for c in range(L):
                snaps[snap_ptr, j, c] = hts[j, c]
        snap_ptr += 1
    if n_meas:
        for i in range(n_ifaces):
            for k in range(1, two_n):
                was = blk_since[i, k]
                if was >= 0.0 and t > was:
                    m = 0 if model == 1 else i
                    if m == 0:
                        if z_cnt0 == zb0.shape[0]:
                            z_bufs[0] = _grow(z_bufs[0])
                            zb0 = z_bufs[0]
                        zb0[z_cnt0, 0] = k
                        zb0[z_cnt0, 1] = was
                        zb0[z_cnt0, 2] = t
                        z_cnt0 += 1
                    else:
                        if z_cnt1 == zb1.shape[0]:
                            z_bufs[1] = _grow(z_bufs[1])
                            zb1 = z_bufs[1]
                        zb1[z_cnt1, 0] = k
                        zb1[z_cnt1, 1] = was
                        zb1[z_cnt1, 2] = t
                        z_cnt1 += 1
                    z_mass[m, k] += zeta_rate[k] * (t - was)

    z_site, z_start, z_end = [], [], []
    z_counts = [z_cnt0, z_cnt1]
    for m in range(n_meas):
        rows = z_bufs[m][:z_counts[m]]
        z_site.append(rows[:, 0].astype(np.int32))
        z_start.append(rows[:, 1].copy())
        z_end.append(rows[:, 2].copy())

    ev_rows = ev_buf[:ev_cnt]
    return {
        "t_final": t,
        "status": status,
        "n_events": int(n_events),
        "ev_time": ev_rows[:, 0].copy(),
        "ev_site": ev_rows[:, 1].astype(np.int32),
        "ev_iface": ev_rows[:, 2].astype(np.int8),
        "ev_dir": ev_rows[:, 3].astype(np.int8),
        "snap_count": int(snap_ptr),
        "snap_heights": snaps_np[:snap_ptr],
        "z_site": z_site,
        "z_start": z_start,
        "z_end": z_end,
        "z_mass": zmass_np[:n_meas] if n_meas else np.zeros((0, L)),
        "final_heights": hts_arr,
    }
