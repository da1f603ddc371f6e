"""Snapshot-based construction of separable ansatz data.

The offline stage has two steps: per-snapshot shift paths are estimated from
the data (phase cross-correlation for periodic transport, leading-front
tracking for profiles that leave the domain), and spatial modes are fitted
by alternating linear least squares so that shifted modes scaled by
per-snapshot amplitudes reconstruct the snapshots.  A plain proper
orthogonal decomposition is provided as the linear-subspace baseline.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .ansatz import (
    ExtendedShift,
    ModeSet,
    PeriodicShift,
    Separable,
    build_separable_from_shifts,
)
from .timestep import Trajectory

__all__ = [
    "SnapshotSet",
    "OfflineResult",
    "FlatSnapshotError",
    "snapshots_from_trajectory",
    "estimate_shift_paths",
    "fit_modes",
    "pod",
    "write_paths_csv",
    "read_paths_csv",
]


class FlatSnapshotError(ValueError):
    """Raised when a snapshot carries no detectable wave."""


@dataclass(frozen=True)
class SnapshotSet:
    """Snapshot matrix with its spatial grid and field-block structure.

    ``nodes`` is the grid of one field block; multi-field snapshots stack
    their blocks rowwise, all sharing the grid.
    """

    nodes: np.ndarray
    data: np.ndarray
    times: np.ndarray
    n_blocks: int = 1

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=float))
        nodes = np.asarray(self.nodes, dtype=float)
        times = np.asarray(self.times, dtype=float)
        if data.shape[1] != times.size:
            raise ValueError("snapshot count does not match the time stamps")
        if data.shape[0] != nodes.size * self.n_blocks:
            raise ValueError("snapshot rows do not match grid times blocks")
        if not np.all(np.isfinite(data)):
            raise ValueError("snapshots contain non-finite entries")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "times", times)

    @property
    def n_t(self) -> int:
        return self.times.size

    @property
    def block_rows(self) -> int:
        return self.nodes.size

    def block(self, b: int) -> np.ndarray:
        r = self.block_rows
        return self.data[b * r:(b + 1) * r, :]


def snapshots_from_trajectory(traj: Trajectory, nodes, n_blocks: int = 1,
                              stride: int = 1) -> SnapshotSet:
    """Subsample a trajectory into a snapshot set on a known grid."""
    sel = np.arange(0, traj.times.size, stride)
    if sel[-1] != traj.times.size - 1:
        sel = np.append(sel, traj.times.size - 1)
    return SnapshotSet(nodes=np.asarray(nodes, dtype=float),
                       data=traj.states[:, sel], times=traj.times[sel],
                       n_blocks=n_blocks)


# -- shift path estimation ----------------------------------------------------


def _moving_average(values, window):
    if window <= 1:
        return values.copy()
    if window % 2 == 0:
        window += 1
    half = window // 2
    # odd reflection keeps linear trends (and in particular endpoints) unbiased
    padded = np.pad(values, half, mode="reflect", reflect_type="odd")
    kernel = np.full(window, 1.0 / window)
    return np.convolve(padded, kernel, mode="valid")


def _correlation_peaks(corr):
    """All significant circular local maxima, with subgrid refinement."""
    n = corr.size
    left = np.roll(corr, 1)
    right = np.roll(corr, -1)
    is_max = (corr >= left) & (corr >= right)
    floor = 0.05 * float(np.max(corr))
    candidates = np.nonzero(is_max & (corr >= floor))[0]
    if candidates.size == 0:
        candidates = np.array([int(np.argmax(corr))])
    refined = []
    for idx in candidates:
        cm, c0, cp = corr[(idx - 1) % n], corr[idx], corr[(idx + 1) % n]
        denom = cm - 2.0 * c0 + cp
        delta = 0.5 * (cm - cp) / denom if abs(denom) > 0 else 0.0
        refined.append(idx + float(np.clip(delta, -0.5, 0.5)))
    return refined


def _periodic_paths(s: SnapshotSet, n_waves, reference, smooth_window):
    """Track each wave through the correlation peak nearest to its prediction.

    Correlating a multi-wave snapshot with a multi-wave reference produces
    self- and cross-correlation peaks; magnitude alone cannot separate them,
    so every wave follows the candidate peak closest to the linear
    continuation of its own path.
    """
    n = s.block_rows
    h = float(s.nodes[1] - s.nodes[0])
    length = n * h
    ref = np.asarray(reference if reference is not None else s.data[:, 0],
                     dtype=float)
    # remove per-block means so that constant backgrounds (burnt-fuel
    # plateaus and the like) do not flatten the correlation peaks
    ref_fft = []
    for b in range(s.n_blocks):
        block = ref[b * n:(b + 1) * n]
        ref_fft.append(np.fft.rfft(block - block.mean()))
    scale = float(np.max(np.abs(s.data)))
    paths = np.empty((n_waves, s.n_t))
    prev = np.zeros(n_waves)
    trend = np.zeros(n_waves)
    for j in range(s.n_t):
        snap = s.data[:, j]
        if np.max(snap) - np.min(snap) <= 1e-13 * (1.0 + scale):
            raise FlatSnapshotError(f"snapshot {j} carries no detectable wave")
        corr = np.zeros(n)
        for b in range(s.n_blocks):
            block = snap[b * n:(b + 1) * n]
            f = np.fft.rfft(block - block.mean())
            corr += np.fft.irfft(f * np.conj(ref_fft[b]), n=n)
        offsets = np.array(_correlation_peaks(corr)) * h

        def nearest(predicted, skip=()):
            best_q, best_d, best_cand = None, np.inf, predicted
            for q, off in enumerate(offsets):
                if q in skip:
                    continue
                wraps = np.round((predicted - off) / length)
                cand = off + wraps * length
                dist = abs(cand - predicted)
                if dist < best_d:
                    best_q, best_d, best_cand = q, dist, cand
            return best_q, best_d, best_cand

        taken = set()
        assigned = np.empty(n_waves)
        for i in range(n_waves):
            predicted = prev[i] + trend[i] if j > 0 else 0.0
            q, dist, cand = nearest(predicted, skip=taken)
            # initially coincident waves share one correlation peak; prefer
            # a clearly closer taken peak over a distant exclusive one
            q_any, dist_any, cand_any = nearest(predicted)
            if q is None or (dist > 5.0 * h and dist_any <= 2.0 * h):
                q, cand = q_any, cand_any
            taken.add(q)
            assigned[i] = cand
        if j > 0:
            trend = 0.5 * trend + 0.5 * (assigned - prev)
        paths[:, j] = assigned
        prev = assigned
    for i in range(n_waves):
        paths[i] = _moving_average(paths[i], smooth_window)
    return paths


def _leading_front(values, nodes, threshold):
    """Rightmost downward crossing of the threshold level."""
    above = values >= threshold
    if not np.any(above):
        return None
    idx = np.nonzero(above)[0]
    i = idx[-1]
    if i == values.size - 1:
        return float(nodes[-1])
    # linear interpolation between the last point above and its right neighbor
    frac = (values[i] - threshold) / (values[i] - values[i + 1])
    return float(nodes[i] + frac * (nodes[i + 1] - nodes[i]))


def _extended_paths(s: SnapshotSet, reference, smooth_window, front_level):
    nodes = s.nodes
    h = float(nodes[1] - nodes[0])
    global_peak = float(np.max(np.abs(s.data)))
    if global_peak <= 0.0:
        raise FlatSnapshotError("snapshot 0 carries no detectable wave")
    raw = np.full(s.n_t, np.nan)
    reliable = np.zeros(s.n_t, dtype=bool)
    for j in range(s.n_t):
        vals = np.abs(s.block(0)[:, j])
        peak = float(np.max(vals))
        if peak <= 1e-13 * (1.0 + global_peak):
            raise FlatSnapshotError(f"snapshot {j} carries no detectable wave")
        pos = _leading_front(vals, nodes, front_level * peak)
        if pos is None:
            continue
        raw[j] = pos
        # tracking is unreliable when the front leaves through the boundary
        # or the wave has mostly decayed
        reliable[j] = (pos <= nodes[-1] - 3 * h) and (peak >= 0.05 * global_peak)
    if not np.any(reliable):
        raise FlatSnapshotError("no snapshot exposes a trackable front")
    first = int(np.nonzero(reliable)[0][0])
    path = np.empty(s.n_t)
    offset = -raw[first]
    path[: first + 1] = 0.0
    recent = []
    prev = 0.0
    for j in range(first + 1, s.n_t):
        slope = np.median(recent) if recent else 0.0
        expected = prev + slope
        if reliable[j] and np.isfinite(raw[j]):
            cand = raw[j] + offset
            if abs(cand - expected) > 10.0 * h + 0.05 * abs(expected):
                # the tracker jumped to a different wave; re-anchor the offset
                offset += expected - cand
                cand = expected
            path[j] = cand
            recent.append(path[j] - prev)
            if len(recent) > 5:
                recent.pop(0)
        else:
            path[j] = expected
        prev = path[j]
    return _moving_average(path, smooth_window)[None, :]


def estimate_shift_paths(s: SnapshotSet, n_waves: int, kind: str,
                         reference=None, smooth_window: int = 5,
                         front_level: float = 0.5) -> np.ndarray:
    """Per-snapshot shift amounts for each transported wave.

    Periodic transport is detected by phase cross-correlation against a
    reference profile (the first snapshot unless given explicitly); paths
    are unwrapped to stay continuous across the domain boundary.  For the
    extended kind a single leading front is tracked by threshold crossing,
    with unreliable samples (front at the outflow boundary, decayed wave)
    bridged by local linear extrapolation.  All paths are smoothed by a
    short moving average.  Returns an ``(n_waves, n_t)`` array.
    """
    if n_waves < 1:
        raise ValueError("need at least one wave")
    if kind == "periodic":
        return _periodic_paths(s, n_waves, reference, smooth_window)
    if kind == "extended":
        if n_waves != 1:
            raise ValueError("front tracking follows a single leading wave; "
                             "use the periodic kind for several waves")
        return _extended_paths(s, reference, smooth_window, front_level)
    raise ValueError(f"unknown shift kind {kind!r}")


# -- alternating least-squares mode fit ---------------------------------------


@dataclass
class OfflineResult:
    """Fitted modes, paths and amplitudes with the reconstruction error."""

    modes: ModeSet
    paths: np.ndarray
    amplitudes: np.ndarray
    rel_error: float
    sweeps: int
    layout: str
    shift: object
    objective_history: list = field(default_factory=list)

    def ansatz(self) -> Separable:
        return build_separable_from_shifts(self.shift, self.modes, self.layout)

    def initial_reduced_state(self) -> np.ndarray:
        return np.concatenate([self.amplitudes[:, 0], self.paths[:, 0]])


def _build_shift(s: SnapshotSet, kind, paths, margin):
    if kind == "periodic":
        return PeriodicShift(s.nodes)
    h = float(s.nodes[1] - s.nodes[0])
    lo, hi = float(np.min(paths)), float(np.max(paths))
    pad = margin * max(hi - lo, 1.0) + 4.0 * h
    cells_left = int(np.ceil((hi + pad) / h))
    cells_right = int(np.ceil((pad - lo) / h))
    src = np.arange(-cells_left, s.nodes.size + cells_right) * h + s.nodes[0]
    return ExtendedShift(src, s.nodes)


def _sparsify(mat, rel_tol=1e-12):
    mat = np.where(np.abs(mat) < rel_tol * np.max(np.abs(mat)), 0.0, mat)
    return scipy.sparse.csr_matrix(mat)


def _unshift_matrix(s: SnapshotSet, shift, amount):
    """Map snapshot values back to the extended grid (zero off the window)."""
    if isinstance(shift, PeriodicShift):
        return shift.matrix(-amount)
    src, tgt = shift.source_nodes, shift.target_nodes
    query = src + amount
    inside = (query >= tgt[0] - 1e-12) & (query <= tgt[-1] + 1e-12)
    out = np.zeros((src.size, tgt.size))
    if np.count_nonzero(inside) >= 4:
        probe = ExtendedShift(tgt, query[inside])
        out[inside, :] = probe.matrix(0.0)
    return out


def fit_modes(s: SnapshotSet, paths, layout: str, k_modes: int, kind: str,
              margin: float = 0.1, max_sweeps: int = 50,
              rel_tol: float = 1e-6, ridge: float = 1e-10,
              weight=None) -> OfflineResult:
    """Fit shifted modes and amplitudes to snapshots by alternating solves.

    Given per-snapshot paths, the amplitudes solve one dense least-squares
    problem per snapshot and the modes solve a sparse normal system over the
    extended/periodic grid; both half-steps are exact, so the squared
    reconstruction objective is nonincreasing across sweeps.  Iteration
    stops at a relative objective decrease below ``rel_tol`` or after
    ``max_sweeps`` sweeps.  A rank-deficient mode system falls back to a
    ridge-regularized solve with a warning.

    ``weight`` only affects the reported relative error (an energy norm for
    the advection--diffusion model), not the fit itself.
    """
    paths = np.atleast_2d(np.asarray(paths, dtype=float))
    if layout == "shared":
        if paths.shape[0] != 1:
            raise ValueError("shared layout expects a single path")
        wave_of_mode = [0] * k_modes
    elif layout == "per-mode":
        if paths.shape[0] != k_modes:
            raise ValueError("per-mode layout expects one path per mode")
        wave_of_mode = list(range(k_modes))
    else:
        raise ValueError(f"unknown layout {layout!r}")
    if paths.shape[1] != s.n_t:
        raise ValueError("paths and snapshots disagree in length")
    if kind not in ("periodic", "extended"):
        raise ValueError("kind must be 'periodic' or 'extended'")

    shift = _build_shift(s, kind, paths, margin)
    d_phi = shift.source_size
    n_b = shift.target_size
    B = s.n_blocks
    n_t = s.n_t

    # shift matrices are fixed by the paths; precompute them sparsified,
    # together with the pairwise products entering the mode normal system
    # and the data back-projections entering its right-hand side
    uniq = {}
    for i in range(paths.shape[0]):
        for j in range(n_t):
            key = round(float(paths[i, j]), 14)
            if key not in uniq:
                uniq[key] = _sparsify(shift.matrix(paths[i, j]))
    T = [[uniq[round(float(paths[wave_of_mode[i], j]), 14)]
          for j in range(n_t)] for i in range(k_modes)]
    pair = []
    proj = []
    for j in range(n_t):
        pj = {}
        for i in range(k_modes):
            for k in range(i, k_modes):
                pj[(i, k)] = (T[i][j].T @ T[k][j]).tocsr()
                pj[(k, i)] = pj[(i, k)].T.tocsr()
        pair.append(pj)
        proj.append([[T[i][j].T @ s.block(b)[:, j] for b in range(B)]
                     for i in range(k_modes)])

    modes = _initial_modes(s, shift, paths, wave_of_mode, k_modes)
    amplitudes = np.zeros((k_modes, n_t))
    history = []
    prev_obj = np.inf
    data_scale = float(np.sum(s.data ** 2))
    roughness = _roughness_gram(k_modes, d_phi)
    use_ridge = False
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        # amplitudes given modes: one small least-squares problem per snapshot
        for j in range(n_t):
            A = np.empty((B * n_b, k_modes))
            for i in range(k_modes):
                for b in range(B):
                    A[b * n_b:(b + 1) * n_b, i] = T[i][j] @ modes[
                        b * d_phi:(b + 1) * d_phi, i]
            amplitudes[:, j] = np.linalg.lstsq(A, s.data[:, j], rcond=None)[0]

        # modes given amplitudes: sparse normal system, block by block
        G = None
        for j in range(n_t):
            w = amplitudes[:, j]
            Gj = scipy.sparse.bmat(
                [[w[i] * w[k] * pair[j][(i, k)] for k in range(k_modes)]
                 for i in range(k_modes)], format="csr")
            G = Gj if G is None else G + Gj
        G = G.tocsc()
        for b in range(B):
            rhs = np.concatenate(
                [sum(amplitudes[i, j] * proj[j][i][b] for j in range(n_t))
                 for i in range(k_modes)])
            phi, use_ridge = _solve_mode_system(G, rhs, ridge, roughness,
                                                use_ridge)
            modes[b * d_phi:(b + 1) * d_phi, :] = phi.reshape(
                (k_modes, d_phi)).T

        obj = 0.0
        for j in range(n_t):
            rec = np.zeros(B * n_b)
            for i in range(k_modes):
                for b in range(B):
                    rec[b * n_b:(b + 1) * n_b] += amplitudes[i, j] * (
                        T[i][j] @ modes[b * d_phi:(b + 1) * d_phi, i])
            obj += float(np.sum((s.data[:, j] - rec) ** 2))
        history.append(obj)
        if obj <= 1e-24 * data_scale:
            break  # reconstruction exact to round-off
        if obj > prev_obj * (1.0 + 1e-9) + 1e-14 * data_scale:
            warnings.warn("alternating fit objective increased; stopping",
                          RuntimeWarning)
            break
        if prev_obj < np.inf and prev_obj > 0 and \
                (prev_obj - obj) / prev_obj < rel_tol:
            break
        prev_obj = obj

    mode_set = ModeSet(modes, n_blocks=B)
    ansatz = build_separable_from_shifts(shift, mode_set, layout)
    err = _relative_offline_error(s, ansatz, amplitudes, paths, weight)
    return OfflineResult(modes=mode_set, paths=paths, amplitudes=amplitudes,
                         rel_error=err, sweeps=sweeps, layout=layout,
                         shift=shift, objective_history=history)


def _roughness_gram(k_modes, d_phi):
    """Gram matrix of unscaled second differences along every mode segment."""
    e = np.ones(d_phi)
    D = scipy.sparse.diags([e[:-2], -2.0 * e[:-1], e], [0, 1, 2],
                           shape=(d_phi - 2, d_phi))
    return scipy.sparse.kron(scipy.sparse.identity(k_modes), D.T @ D,
                             format="csc")


def _solve_mode_system(G, rhs, ridge, roughness, use_ridge):
    """Solve the mode normal system, regularizing on rank deficiency.

    Extension cells that no snapshot window touches make the plain system
    singular, and barely covered cells can pick up node-scale oscillations
    that blow up the spline derivatives of the modes.  The fallback
    therefore combines a relative ridge with a small second-difference
    penalty that suppresses exactly those oscillations while leaving smooth
    mode shapes essentially untouched.
    """
    if not use_ridge:
        try:
            lu = scipy.sparse.linalg.splu(G)
            phi = lu.solve(rhs)
            if np.all(np.isfinite(phi)) and \
                    np.linalg.norm(G @ phi - rhs) <= 1e-8 * (1.0 + np.linalg.norm(rhs)):
                return phi, False
        except RuntimeError:
            pass
        warnings.warn("mode normal system is rank deficient; "
                      "using a ridge-regularized solve", RuntimeWarning)
    scale = ridge * (1.0 + float(np.max(np.abs(G.diagonal()))))
    reg = G + scale * scipy.sparse.identity(G.shape[0], format="csc") \
        + 1e4 * scale * roughness
    return scipy.sparse.linalg.splu(reg).solve(rhs), True


def _initial_modes(s: SnapshotSet, shift, paths, wave_of_mode, k_modes):
    d_phi = shift.source_size
    B = s.n_blocks
    modes = np.zeros((B * d_phi, k_modes))
    shared = len(set(wave_of_mode)) == 1
    if shared:
        # stack the unshifted snapshots and keep their leading directions
        stacked = np.zeros((B * d_phi, s.n_t))
        for j in range(s.n_t):
            U = _unshift_matrix(s, shift, paths[0, j])
            for b in range(B):
                stacked[b * d_phi:(b + 1) * d_phi, j] = U @ s.block(b)[:, j]
        u, _, _ = np.linalg.svd(stacked, full_matrices=False)
        avail = min(k_modes, u.shape[1])
        modes[:, :avail] = u[:, :avail]
        if avail < k_modes:
            rng = np.random.default_rng(0)
            modes[:, avail:] = 1e-3 * rng.standard_normal(
                (B * d_phi, k_modes - avail))
    else:
        for i in range(k_modes):
            acc = np.zeros(B * d_phi)
            for j in range(s.n_t):
                U = _unshift_matrix(s, shift, paths[wave_of_mode[i], j])
                for b in range(B):
                    acc[b * d_phi:(b + 1) * d_phi] += U @ s.block(b)[:, j]
            modes[:, i] = acc / s.n_t
    return modes


def _relative_offline_error(s: SnapshotSet, ansatz: Separable, amplitudes,
                            paths, weight):
    num = np.empty(s.n_t)
    den = np.empty(s.n_t)
    for j in range(s.n_t):
        rec = ansatz.Vs(paths[:, j]) @ amplitudes[:, j]
        err = s.data[:, j] - rec
        if weight is None:
            num[j] = float(err @ err)
            den[j] = float(s.data[:, j] @ s.data[:, j])
        else:
            num[j] = float(err @ (weight @ err))
            den[j] = float(s.data[:, j] @ (weight @ s.data[:, j]))
    return float(np.sqrt(np.trapezoid(num, s.times) / np.trapezoid(den, s.times)))


def pod(s: SnapshotSet, r: int) -> np.ndarray:
    """Leading left singular vectors of the snapshot matrix."""
    if r > min(s.data.shape):
        raise ValueError(f"rank {r} exceeds the snapshot matrix rank bound "
                         f"{min(s.data.shape)}")
    u, _, _ = np.linalg.svd(s.data, full_matrices=False)
    return u[:, :r]


def write_paths_csv(path, times, paths):
    paths = np.atleast_2d(paths)
    lines = [",".join(repr(float(v)) for v in (t, *paths[:, j]))
             for j, t in enumerate(times)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_paths_csv(path):
    data = np.array([[float(v) for v in line.split(",")]
                     for line in Path(path).read_text().strip().splitlines()])
    return data[:, 0], data[:, 1:].T
