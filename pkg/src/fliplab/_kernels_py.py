"""Pure-Python event loop: the reference kernel backend.

The compiled backend (_kernels.pyx) mirrors this file operation for
operation -- same Fenwick tree over per-site rates, same float arithmetic
order, same RNG call discipline -- so both backends produce bit-identical
trajectories from the same seed.  Keep the two in lockstep when editing
either one.

Kernel state layout
-------------------
heights : (n_ifaces, 2N+1) integer arrays; n_ifaces is 1 (bridge, wall)
    or 2 (pair; row 0 = upper, row 1 = lower).
Fenwick leaves : one leaf per (interface, site), value = rate of the
    site's unique currently-available flip (0 if none).  Leaf index
    i*(2N+1)+k.  A flip at (i,k) only changes leaves (i,k-1..k+1) and,
    for pairs, (1-i,k), so updates are O(log) per event.
Total rate R is maintained incrementally by the same deltas that go into
the tree and rebuilt exactly (left-to-right sum over leaf rates) every
`rebuild_every` events to stop float drift; the leaves themselves are
exact rate constants at all times.

RNG discipline (per event): draw one standard exponential FIRST; if the
resulting jump time exceeds t_end, stop without drawing the selection
uniform.  Otherwise draw one uniform for the Fenwick selection.
"""

from __future__ import annotations

import numpy as np

STATUS_T_END = 0
STATUS_MAX_EVENTS = 1
STATUS_ABSORBED = 2

MODEL_BRIDGE = 0
MODEL_WALL = 1
MODEL_PAIR = 2


def _site_rate(model, hts, i, k, p, q):
    """Rate of the unique available flip at (interface i, site k); 0 if none."""
    H = hts[i]
    d = H[k + 1] - 2 * H[k] + H[k - 1]
    if d == 0:
        return 0.0
    if model == MODEL_BRIDGE:
        return p[k] if d > 0 else q[k]
    if model == MODEL_WALL:
        if d > 0:
            return p[k]
        return q[k] if H[k] > 1 else 0.0
    # pair
    if i == 0:  # upper: up always allowed, down only if strictly above lower
        if d > 0:
            return p[k]
        return q[k] if H[k] > hts[1][k] else 0.0
    # lower: up only if strictly below upper, down always allowed
    if d > 0:
        return q[k] if H[k] < hts[0][k] else 0.0
    return p[k]


def _blocked(model, hts, i, k):
    """Is (i,k) a geometrically-ready flip suppressed by wall/contact?
    These are exactly the sites where reflection mass accrues."""
    H = hts[i]
    d = H[k + 1] - 2 * H[k] + H[k - 1]
    if model == MODEL_WALL:
        return d < 0 and H[k] == 1
    if model == MODEL_PAIR:
        if i == 0:
            return d < 0 and H[k] == hts[1][k]
        return d > 0 and H[k] == hts[0][k]
    return False


def _fenwick_build(rate, tree, n_leaves):
    for i in range(1, n_leaves + 1):
        tree[i] = rate[i - 1]
    for i in range(1, n_leaves + 1):
        j = i + (i & (-i))
        if j <= n_leaves:
            tree[j] += tree[i]


def _fenwick_update(tree, n_leaves, leaf, delta):
    i = leaf + 1
    while i <= n_leaves:
        tree[i] += delta
        i += i & (-i)


def _fenwick_select(tree, n_leaves, top_bit, u):
    """Largest leaf index whose strict prefix sum is < u."""
    idx = 0
    bit = top_bit
    while bit:
        nxt = idx + bit
        if nxt <= n_leaves and tree[nxt] < u:
            idx = nxt
            u -= tree[nxt]
        bit >>= 1
    return idx  # 0-based leaf


def run_gillespie(model, heights0, p_arr, q_arr, t_end, snapshot_times,
                  generator, max_events=None, record_events=True,
                  rebuild_every=4096, debug=False):
    """Event-driven simulation; see module docstring for conventions.

    Returns a dict shared with the compiled backend:
    t_final, status, n_events, ev_time/ev_site/ev_iface/ev_dir,
    snap_count, snap_heights, z_site/z_start/z_end (lists per measure),
    z_mass, final_heights.
    """
    heights0 = np.asarray(heights0, dtype=np.int64)
    n_ifaces, L = heights0.shape
    two_n = L - 1
    n = two_n // 2
    hts = [list(map(int, heights0[i])) for i in range(n_ifaces)]
    p = list(map(float, p_arr))
    q = list(map(float, q_arr))
    if max_events is None:
        max_events = 1 << 62

    n_meas = 0
    if model == MODEL_WALL:
        n_meas = 1
    elif model == MODEL_PAIR:
        n_meas = 2
    zeta_rate = [2.0 * q[k] / two_n ** 1.5 for k in range(L)]

    n_leaves = n_ifaces * L
    top_bit = 1 << (n_leaves.bit_length() - 1)
    tree = [0.0] * (n_leaves + 1)
    rate = [0.0] * n_leaves
    for i in range(n_ifaces):
        base = i * L
        for k in range(1, two_n):
            rate[base + k] = _site_rate(model, hts, i, k, p, q)
    _fenwick_build(rate, tree, n_leaves)
    R = 0.0
    for v in rate:
        R += v

    # open blocked intervals present at t=0
    blk_since = [[-1.0] * L for _ in range(n_ifaces)]
    z_site = [[] for _ in range(n_meas)]
    z_start = [[] for _ in range(n_meas)]
    z_end = [[] for _ in range(n_meas)]
    z_mass = np.zeros((n_meas, L))
    if n_meas:
        for i in range(n_ifaces):
            for k in range(1, two_n):
                if _blocked(model, hts, i, k):
                    blk_since[i][k] = 0.0

    snap_times = np.asarray(snapshot_times, dtype=np.float64)
    n_snap = len(snap_times)
    snap_heights = np.zeros((n_snap, n_ifaces, L), dtype=np.int64)
    snap_ptr = 0

    ev_time, ev_site, ev_iface, ev_dir = [], [], [], []

    t = 0.0
    n_events = 0
    status = STATUS_T_END

    while True:
        if n_events >= max_events:
            status = STATUS_MAX_EVENTS
            break
        if R <= 0.0:
            # nothing can move; the state persists to t_end (reflection
            # mass keeps accruing on blocked sites)
            t = t_end
            status = STATUS_ABSORBED
            break
        e = float(generator.standard_exponential())
        dt = e / R
        if t + dt > t_end:
            t = t_end
            break
        t_new = t + dt
        u = float(generator.random()) * R
        leaf = _fenwick_select(tree, n_leaves, top_bit, u)
        if leaf >= n_leaves:
            leaf = n_leaves - 1
        while rate[leaf] == 0.0:
            leaf -= 1  # float-drift landing on a dead leaf: clamp back
        i = leaf // L
        k = leaf - i * L

        while snap_ptr < n_snap and snap_times[snap_ptr] < t_new:
            for j in range(n_ifaces):
                snap_heights[snap_ptr, j, :] = hts[j]
            snap_ptr += 1

        t = t_new
        H = hts[i]
        d = 1 if (H[k + 1] - 2 * H[k] + H[k - 1]) > 0 else -1
        H[k] += 2 * d
        if record_events:
            ev_time.append(t)
            ev_site.append(k)
            ev_iface.append(i)
            ev_dir.append(d)
        n_events += 1

        if debug:
            assert abs(H[k] - H[k - 1]) == 1 and abs(H[k + 1] - H[k]) == 1
            assert hts[0][0] == 0 and hts[0][two_n] == 0
            if model == MODEL_WALL:
                assert H[k] >= 0
            if model == MODEL_PAIR:
                assert hts[0][k] >= hts[1][k]

        # refresh rates and blocked status around the flip
        if model == MODEL_PAIR:
            affected = ((i, k - 1), (i, k), (i, k + 1), (1 - i, k))
        else:
            affected = ((i, k - 1), (i, k), (i, k + 1))
        for (j, s) in affected:
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
                was = blk_since[j][s]
                if now_blocked and was < 0.0:
                    blk_since[j][s] = t
                elif not now_blocked and was >= 0.0:
                    blk_since[j][s] = -1.0
                    m = 0 if model == MODEL_WALL else j
                    z_site[m].append(s)
                    z_start[m].append(was)
                    z_end[m].append(t)
                    z_mass[m, s] += zeta_rate[s] * (t - was)

        if n_events % rebuild_every == 0:
            for j in range(n_ifaces):
                base = j * L
                for s in range(1, two_n):
                    rate[base + s] = _site_rate(model, hts, j, s, p, q)
            _fenwick_build(rate, tree, n_leaves)
            R = 0.0
            for v in rate:
                R += v

    # close out: remaining snapshots get the final state, open blocked
    # intervals close at t_final
    while snap_ptr < n_snap and snap_times[snap_ptr] <= t:
        for j in range(n_ifaces):
            snap_heights[snap_ptr, j, :] = hts[j]
        snap_ptr += 1
    if n_meas:
        for i in range(n_ifaces):
            for k in range(1, two_n):
                was = blk_since[i][k]
                if was >= 0.0 and t > was:
                    m = 0 if model == MODEL_WALL else i
                    z_site[m].append(k)
                    z_start[m].append(was)
                    z_end[m].append(t)
                    z_mass[m, k] += zeta_rate[k] * (t - was)

    final = np.array(hts, dtype=np.int64)
    return {
        "t_final": t,
        "status": status,
        "n_events": n_events,
        "ev_time": np.asarray(ev_time, dtype=np.float64),
        "ev_site": np.asarray(ev_site, dtype=np.int32),
        "ev_iface": np.asarray(ev_iface, dtype=np.int8),
        "ev_dir": np.asarray(ev_dir, dtype=np.int8),
        "snap_count": snap_ptr,
        "snap_heights": snap_heights[:snap_ptr],
        "z_site": [np.asarray(a, dtype=np.int32) for a in z_site],
        "z_start": [np.asarray(a, dtype=np.float64) for a in z_start],
        "z_end": [np.asarray(a, dtype=np.float64) for a in z_end],
        "z_mass": z_mass,
        "final_heights": final,
    }


BACKEND_NAME = "python"
