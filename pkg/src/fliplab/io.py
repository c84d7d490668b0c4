"""Flat-file persistence: interface text blocks and CSV exports.

Everything here is deliberately dumb — line-oriented text for states,
plain CSV for the rest.  Floats are printed with 17 significant digits
so a re-run can be diffed byte-for-byte against an archived artifact.
"""

import csv
from typing import Iterable, Sequence, Tuple

import numpy as np
from scipy import sparse

from .continuum import GridFunction, HeatKernelTable
from .dynamics import ReflectionMeasure, Trajectory
from .gibbs import GibbsMeasure
from .lattice_core import IntegerInterface, PairInterface

FLOAT_FMT = "%.17g"


def _fmt(x) -> str:
    return FLOAT_FMT % float(x)


# ---------------------------------------------------------------------------
# interface text format:  "N <n>" header, then one line of space-separated
# integer heights; a pair is two such blocks tagged upper / lower.

def interface_to_text(state) -> str:
    if isinstance(state, PairInterface):
        return ("upper\n" + interface_to_text(state.upper)
                + "lower\n" + interface_to_text(state.lower))
    return "N %d\n%s\n" % (state.n, " ".join(str(int(h)) for h in state.heights))


def write_interface(path, state) -> None:
    with open(path, "w") as fh:
        fh.write(interface_to_text(state))


def interface_from_text(text: str):
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty interface text")

    def block(at: int) -> Tuple[IntegerInterface, int]:
        if at + 1 >= len(lines):
            raise ValueError("truncated interface text")
        head = lines[at].split()
        if len(head) != 2 or head[0] != "N":
            raise ValueError(f"bad interface header: {lines[at]!r}")
        try:
            n = int(head[1])
            heights = np.array([int(tok) for tok in lines[at + 1].split()],
                               dtype=np.int64)
        except ValueError:
            raise ValueError(f"non-integer entries near line {at + 1}")
        return IntegerInterface(n, heights), at + 2

    if lines[0] == "upper":
        up, at = block(1)
        if at >= len(lines) or lines[at] != "lower":
            raise ValueError("pair text must contain an upper and a lower block")
        lo, _ = block(at + 1)
        return PairInterface(up, lo)
    iface, _ = block(0)
    return iface


def read_interface(path):
    with open(path) as fh:
        return interface_from_text(fh.read())


# ---------------------------------------------------------------------------
# CSV writers.  All of them take a path, write a header row, and promise a
# stable byte-level layout for identical inputs.

def _open_csv(path):
    # newline="" so the csv module controls line endings (plain \n).
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_events_csv(path, traj: Trajectory) -> None:
    """Flip log: one row per accepted flip."""
    if not traj.record_events:
        raise ValueError("trajectory was run with record_events=False")
    fh, w = _open_csv(path)
    with fh:
        w.writerow(["time", "site", "interface_id", "direction"])
        for t, k, i, d in zip(traj.times, traj.sites, traj.ifaces, traj.dirs):
            w.writerow([_fmt(t), int(k), int(i) + 1, int(d)])


def write_snapshots_csv(path, times: Sequence[float], heights: np.ndarray) -> None:
    """Snapshot table (time, k, height[, height2]).

    heights: (n_times, L) for a single interface or (n_times, 2, L) for a
    pair; the second interface lands in the height2 column.  Works for
    integer lattice snapshots and float SPDE snapshots alike.
    """
    heights = np.asarray(heights)
    if heights.ndim == 2:
        heights = heights[:, None, :]
    n_times, n_if, L = heights.shape
    if len(times) != n_times:
        raise ValueError("times and heights disagree on the number of snapshots")
    if n_if not in (1, 2):
        raise ValueError("expected one or two interfaces")
    fh, w = _open_csv(path)
    with fh:
        w.writerow(["time", "k", "height"] + (["height2"] if n_if == 2 else []))
        for it, t in enumerate(times):
            for k in range(L):
                row = [_fmt(t), k, _fmt(heights[it, 0, k])]
                if n_if == 2:
                    row.append(_fmt(heights[it, 1, k]))
                w.writerow(row)


def write_trajectory_snapshots_csv(path, traj: Trajectory) -> None:
    H = traj.snapshot_heights
    if H.shape[0] == 0:
        raise ValueError("trajectory carries no snapshots")
    write_snapshots_csv(path, traj.snapshot_times,
                        H if H.shape[1] == 2 else H[:, 0, :])


def write_spde_snapshots_csv(path, times: Sequence[float],
                             fields: Sequence[GridFunction]) -> None:
    vals = np.stack([f.values for f in fields])
    write_snapshots_csv(path, times, vals)


def write_zeta_csv(path, measure: ReflectionMeasure) -> None:
    """Reflection-measure export, one row per maximal blocked interval."""
    if not measure.has_intervals:
        raise ValueError("measure has no interval log "
                         "(run was made with record_events=False)")
    fh, w = _open_csv(path)
    with fh:
        w.writerow(["site", "t_start", "t_end", "mass"])
        for k, a, b in zip(measure.sites, measure.starts, measure.ends):
            mass = measure.line_rate[int(k)] * (float(b) - float(a))
            w.writerow([int(k), _fmt(a), _fmt(b), _fmt(mass)])


def _serialize_heights(state) -> str:
    if isinstance(state, PairInterface):
        return (_serialize_heights(state.upper) + ";"
                + _serialize_heights(state.lower))
    return " ".join(str(int(h)) for h in state.heights)


def write_gibbs_csv(path, mu: GibbsMeasure) -> None:
    fh, w = _open_csv(path)
    with fh:
        w.writerow(["state_id", "serialized_heights", "log_weight"])
        for i, state in enumerate(mu.states):
            w.writerow([i, _serialize_heights(state), _fmt(mu.log_weights[i])])


def write_generator_csv(path, gen) -> None:
    """Coordinate-list dump of a (sparse or dense) generator matrix."""
    coo = sparse.coo_matrix(gen)
    order = np.lexsort((coo.col, coo.row))
    fh, w = _open_csv(path)
    with fh:
        w.writerow(["row", "col", "rate"])
        for i in order:
            w.writerow([int(coo.row[i]), int(coo.col[i]), _fmt(coo.data[i])])


def write_kernel_csv(path, table: HeatKernelTable) -> None:
    fh, w = _open_csv(path)
    with fh:
        w.writerow(["t", "k", "l", "value"])
        L = table.values.shape[0]
        for k in range(L):
            for l in range(L):
                w.writerow([_fmt(table.t), k, l, _fmt(table.values[k, l])])


def write_observables_csv(path, rows: Iterable[Tuple]) -> None:
    """rows: iterables of (time, name, value, run_id, seed)."""
    fh, w = _open_csv(path)
    with fh:
        w.writerow(["time", "name", "value", "run_id", "seed"])
        for t, name, value, run_id, seed in rows:
            w.writerow([_fmt(t), str(name), _fmt(value), int(run_id), int(seed)])


__all__ = [
    "FLOAT_FMT", "interface_to_text", "interface_from_text",
    "write_interface", "read_interface",
    "write_events_csv", "write_snapshots_csv",
    "write_trajectory_snapshots_csv", "write_spde_snapshots_csv",
    "write_zeta_csv", "write_gibbs_csv", "write_generator_csv",
    "write_kernel_csv", "write_observables_csv",
]
