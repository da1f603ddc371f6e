"""Approximation ansatzes mapping reduced states to full-order states.

Four families are provided, all of the factorized form ``x ~ V(t, xt) xt``:

* :class:`LinearTI` -- constant basis matrix.
* :class:`LinearTV` -- time-dependent basis with its time derivative.
* :class:`Factorizable` -- basis depending on time and the reduced state,
  with directional-derivative callbacks.
* :class:`Separable` -- ``x ~ Vs(p) a`` with the reduced state split into
  amplitudes ``a`` and transformation paths ``p``.

Shifted-mode separable ansatzes are assembled from spatial modes and a
spline-based shift operator (periodic wrap or evaluation on an extended
domain), see :func:`build_separable_from_shifts`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy.interpolate import CubicSpline

__all__ = [
    "LinearTI",
    "LinearTV",
    "Factorizable",
    "Separable",
    "Ansatz",
    "UnsupportedAnsatzError",
    "ShiftRangeError",
    "reduced_dim",
    "eval_basis",
    "eval_vhat",
    "lift",
    "split_state",
    "separable_as_factorizable",
    "PeriodicShift",
    "ExtendedShift",
    "shift_apply",
    "ModeSet",
    "build_separable_from_shifts",
    "read_modes_csv",
    "write_modes_csv",
]


class UnsupportedAnsatzError(TypeError):
    """Raised when an operation is not defined for the ansatz variant."""


class ShiftRangeError(ValueError):
    """Raised when a shifted window leaves the extended domain."""


@dataclass(frozen=True)
class LinearTI:
    Vr: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Vr", np.atleast_2d(np.asarray(self.Vr, dtype=float)))


@dataclass(frozen=True)
class LinearTV:
    Vr: Callable[[float], np.ndarray]
    dVr_dt: Callable[[float], np.ndarray]


@dataclass(frozen=True)
class Factorizable:
    """Basis ``Vr(t, xt)`` with time and state derivative callbacks.

    ``dVr_dxtilde(t, xt, d)`` must return the directional derivative of the
    basis in the reduced-state direction ``d``.
    """

    Vr: Callable[[float, np.ndarray], np.ndarray]
    dVr_dt: Callable[[float, np.ndarray], np.ndarray]
    dVr_dxtilde: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    r: int


@dataclass(frozen=True)
class Separable:
    """Amplitude/path split ansatz ``x ~ Vs(p) a``.

    ``Vs(p)`` maps an ``r_p``-vector of paths to an ``n x r_alpha`` basis;
    ``dVs(p, d)`` is its directional derivative in the path direction ``d``.
    The reduced state is the stacked vector ``[a; p]``.
    """

    Vs: Callable[[np.ndarray], np.ndarray]
    dVs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    r_alpha: int
    r_p: int


Ansatz = Union[LinearTI, LinearTV, Factorizable, Separable]


def reduced_dim(a: Ansatz) -> int:
    """Dimension of the reduced state the ansatz expects."""
    if isinstance(a, LinearTI):
        return a.Vr.shape[1]
    if isinstance(a, Separable):
        return a.r_alpha + a.r_p
    if isinstance(a, LinearTV):
        return a.Vr(0.0).shape[1]
    if isinstance(a, Factorizable):
        return a.r
    raise TypeError(f"unsupported ansatz type {type(a)!r}")


def split_state(a: Separable, xt):
    """Split a stacked reduced state into ``(amplitudes, paths)``."""
    xt = np.asarray(xt, dtype=float)
    if xt.shape != (a.r_alpha + a.r_p,):
        raise ValueError(
            f"reduced state has shape {xt.shape}, expected ({a.r_alpha + a.r_p},)"
        )
    return xt[: a.r_alpha], xt[a.r_alpha:]


def eval_basis(a: Ansatz, t, xt) -> np.ndarray:
    """Basis matrix at ``(t, xt)``; for Separable the block ``[Vs(p) | 0]``."""
    xt = np.asarray(xt, dtype=float)
    if isinstance(a, LinearTI):
        if xt.shape != (a.Vr.shape[1],):
            raise ValueError(f"reduced state has shape {xt.shape}, "
                             f"expected ({a.Vr.shape[1]},)")
        return a.Vr
    if isinstance(a, LinearTV):
        return np.asarray(a.Vr(t), dtype=float)
    if isinstance(a, Factorizable):
        return np.asarray(a.Vr(t, xt), dtype=float)
    if isinstance(a, Separable):
        alpha, p = split_state(a, xt)
        Vs = np.asarray(a.Vs(p), dtype=float)
        return np.hstack([Vs, np.zeros((Vs.shape[0], a.r_p))])
    raise TypeError(f"unsupported ansatz type {type(a)!r}")


def eval_vhat(a: Ansatz, t, xt) -> np.ndarray:
    """Rearranged directional derivative of the basis applied to the state.

    Column ``k`` is the derivative of the basis with respect to the ``k``-th
    reduced-state component (Factorizable) or path component (Separable),
    applied to the state resp. amplitude vector.  This is the matrix that
    enters the reduced mass matrix next to the plain basis.
    """
    xt = np.asarray(xt, dtype=float)
    if isinstance(a, Factorizable):
        r = xt.size
        cols = []
        for k in range(r):
            ek = np.zeros(r)
            ek[k] = 1.0
            cols.append(np.asarray(a.dVr_dxtilde(t, xt, ek), dtype=float) @ xt)
        return np.column_stack(cols)
    if isinstance(a, Separable):
        alpha, p = split_state(a, xt)
        cols = []
        for k in range(a.r_p):
            ek = np.zeros(a.r_p)
            ek[k] = 1.0
            cols.append(np.asarray(a.dVs(p, ek), dtype=float) @ alpha)
        return np.column_stack(cols)
    raise UnsupportedAnsatzError(
        "derivative matrix is only defined for factorizable and separable ansatzes"
    )


def lift(a: Ansatz, t, xt) -> np.ndarray:
    """Full-order state reconstructed from the reduced state."""
    xt = np.asarray(xt, dtype=float)
    if isinstance(a, Separable):
        alpha, p = split_state(a, xt)
        return np.asarray(a.Vs(p), dtype=float) @ alpha
    return eval_basis(a, t, xt) @ xt


def separable_as_factorizable(a: Separable) -> Factorizable:
    """Embed a separable ansatz as a factorizable one via ``[Vs(p) | 0]``."""

    def Vr(t, xt):
        return eval_basis(a, t, xt)

    def dVr_dt(t, xt):
        xt = np.asarray(xt, dtype=float)
        return np.zeros((a.Vs(split_state(a, xt)[1]).shape[0], xt.size))

    def dVr_dxtilde(t, xt, direction):
        _, p = split_state(a, xt)
        dp = np.asarray(direction, dtype=float)[a.r_alpha:]
        dVs = np.asarray(a.dVs(p, dp), dtype=float)
        return np.hstack([dVs, np.zeros((dVs.shape[0], a.r_p))])

    return Factorizable(Vr=Vr, dVr_dt=dVr_dt, dVr_dxtilde=dVr_dxtilde,
                        r=a.r_alpha + a.r_p)


# -- shift operators ----------------------------------------------------------


def _check_equidistant(nodes):
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.size < 4:
        raise ValueError("shift grids need at least four nodes")
    d = np.diff(nodes)
    if np.any(d <= 0) or np.max(np.abs(d - d[0])) > 1e-9 * (1.0 + abs(d[0])):
        raise ValueError("shift grids must be strictly increasing and equidistant")
    return nodes, float(d[0])


class PeriodicShift:
    """Translation of a periodic grid profile via periodic cubic splines.

    The grid covers one period: ``length = n * spacing`` with the right
    endpoint identified with the left one.  ``shift_apply(values, amount)``
    returns the profile translated by ``+amount``, sampled on the same grid.
    """

    kind = "periodic"

    def __init__(self, nodes):
        self.nodes, self.spacing = _check_equidistant(nodes)
        self.length = self.nodes.size * self.spacing
        self._x_aug = np.append(self.nodes, self.nodes[0] + self.length)
        self._cardinal = None

    def _spline(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.nodes.size:
            raise ValueError(f"values have {values.shape[0]} rows, "
                             f"grid has {self.nodes.size} nodes")
        y_aug = np.concatenate([values, values[:1]], axis=0)
        return CubicSpline(self._x_aug, y_aug, axis=0, bc_type="periodic")

    def _wrap(self, x):
        return (x - self.nodes[0]) % self.length + self.nodes[0]

    def shift_apply(self, values, amount):
        return self._spline(values)(self._wrap(self.nodes - amount))

    def shift_derivative(self, values, amount):
        """Derivative of :meth:`shift_apply` with respect to the amount."""
        return -self._spline(values).derivative()(self._wrap(self.nodes - amount))

    def matrix(self, amount) -> np.ndarray:
        """Dense matrix of the (linear) shift operation.

        Spline interpolation is linear in the interpolated values, so the
        matrix is the cardinal-function spline (interpolant of the identity)
        evaluated at the displaced nodes; the cardinal spline is cached.
        """
        if self._cardinal is None:
            self._cardinal = self._spline(np.eye(self.nodes.size))
        return self._cardinal(self._wrap(self.nodes - amount))

    @property
    def source_size(self) -> int:
        return self.nodes.size

    @property
    def target_size(self) -> int:
        return self.nodes.size


class ExtendedShift:
    """Shift via interpolation of profiles living on an extended domain.

    Profiles are defined on ``source_nodes`` (the extended domain) and are
    evaluated, after translation by ``+amount``, on ``target_nodes`` (the
    computational window).  A not-a-knot cubic spline is used, and shifts
    that move the window outside the extended domain raise
    :class:`ShiftRangeError`.
    """

    kind = "extended"

    def __init__(self, source_nodes, target_nodes):
        self.source_nodes, self.spacing = _check_equidistant(source_nodes)
        self.target_nodes, target_h = _check_equidistant(target_nodes)
        if abs(target_h - self.spacing) > 1e-9 * self.spacing:
            raise ValueError("source and target grids must share the spacing")
        self._cardinal = None

    def _query(self, amount):
        q = self.target_nodes - amount
        if q[0] < self.source_nodes[0] - 1e-12 or q[-1] > self.source_nodes[-1] + 1e-12:
            raise ShiftRangeError(
                f"shift by {amount} moves the window [{q[0]}, {q[-1]}] outside "
                f"the extended domain [{self.source_nodes[0]}, {self.source_nodes[-1]}]"
            )
        return q

    def _spline(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.source_nodes.size:
            raise ValueError(f"values have {values.shape[0]} rows, "
                             f"grid has {self.source_nodes.size} nodes")
        return CubicSpline(self.source_nodes, values, axis=0, bc_type="not-a-knot")

    def shift_apply(self, values, amount):
        return self._spline(values)(self._query(amount))

    def shift_derivative(self, values, amount):
        return -self._spline(values).derivative()(self._query(amount))

    def matrix(self, amount) -> np.ndarray:
        if self._cardinal is None:
            self._cardinal = self._spline(np.eye(self.source_nodes.size))
        return self._cardinal(self._query(amount))

    @property
    def source_size(self) -> int:
        return self.source_nodes.size

    @property
    def target_size(self) -> int:
        return self.target_nodes.size


ShiftOperator = Union[PeriodicShift, ExtendedShift]


def shift_apply(s: ShiftOperator, values, amount):
    """Translate grid values by ``+amount`` using the shift operator."""
    return s.shift_apply(values, amount)


@dataclass(frozen=True)
class ModeSet:
    """Spatial modes, stored block-stacked for multi-field states.

    ``modes`` has ``n_blocks * d_phi`` rows and one column per mode, where
    ``d_phi`` is the size of the shift operator's source grid.  All field
    blocks of one mode are shifted by the same amount.
    """

    modes: np.ndarray
    n_blocks: int = 1

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.modes, dtype=float))
        if m.ndim != 2 or m.shape[1] < 1:
            raise ValueError("modes must form a matrix with at least one column")
        if self.n_blocks < 1 or m.shape[0] % self.n_blocks:
            raise ValueError(
                f"{m.shape[0]} mode rows do not split into {self.n_blocks} blocks"
            )
        object.__setattr__(self, "modes", m)

    @property
    def k(self) -> int:
        return self.modes.shape[1]

    @property
    def block_rows(self) -> int:
        return self.modes.shape[0] // self.n_blocks


def build_separable_from_shifts(s: ShiftOperator, modes: ModeSet,
                                layout: str = "shared") -> Separable:
    """Separable ansatz whose basis columns are shifted modes.

    ``layout`` selects how many path variables drive the shifts: ``"shared"``
    moves every mode with one common path (r_p = 1), ``"per-mode"`` gives
    each mode its own path (r_p = number of modes).  Multi-block modes are
    shifted blockwise by the same amount.  Basis derivatives come from the
    analytic derivative of the mode splines.
    """
    if layout not in ("shared", "per-mode"):
        raise ValueError(f"unknown layout {layout!r}")
    if modes.block_rows != s.source_size:
        raise ValueError(
            f"mode blocks have {modes.block_rows} rows, "
            f"shift source grid has {s.source_size} nodes"
        )
    k, B = modes.k, modes.n_blocks
    r_p = 1 if layout == "shared" else k
    n = B * s.target_size

    if isinstance(s, PeriodicShift):
        def make(vals):
            sp = s._spline(vals)
            return sp, sp.derivative()

        def query(amount):
            return s._wrap(s.nodes - amount)
    else:
        def make(vals):
            sp = s._spline(vals)
            return sp, sp.derivative()

        def query(amount):
            return s._query(amount)

    splines = [[make(modes.modes[b * s.source_size:(b + 1) * s.source_size, i])
                for b in range(B)] for i in range(k)]

    def path_of(p, i):
        return p[0] if r_p == 1 else p[i]

    def Vs(p):
        p = np.asarray(p, dtype=float)
        out = np.empty((n, k))
        for i in range(k):
            q = query(path_of(p, i))
            for b in range(B):
                out[b * s.target_size:(b + 1) * s.target_size, i] = splines[i][b][0](q)
        return out

    def dVs(p, direction):
        p = np.asarray(p, dtype=float)
        d = np.asarray(direction, dtype=float)
        out = np.zeros((n, k))
        for i in range(k):
            scale = path_of(d, i)
            if scale == 0.0:
                continue
            q = query(path_of(p, i))
            for b in range(B):
                out[b * s.target_size:(b + 1) * s.target_size, i] = (
                    -scale * splines[i][b][1](q)
                )
        return out

    return Separable(Vs=Vs, dVs=dVs, r_alpha=k, r_p=r_p)


# -- CSV interchange ----------------------------------------------------------


def write_modes_csv(path, nodes, modes: ModeSet):
    """Write modes as CSV, grid nodes first, one column per mode.

    For block-stacked modes the grid column repeats per block.
    """
    nodes = np.asarray(nodes, dtype=float)
    grid = np.tile(nodes, modes.n_blocks)
    if grid.size != modes.modes.shape[0]:
        raise ValueError("grid size does not match the mode rows")
    data = np.column_stack([grid, modes.modes])
    lines = [f"# n_blocks={modes.n_blocks}"]
    for row in data:
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_modes_csv(path):
    """Read modes written by :func:`write_modes_csv` -> (nodes, ModeSet)."""
    lines = Path(path).read_text().strip().splitlines()
    n_blocks = 1
    if lines and lines[0].startswith("#"):
        header, lines = lines[0], lines[1:]
        n_blocks = int(header.split("n_blocks=")[1])
    data = np.array([[float(v) for v in line.split(",")] for line in lines])
    rows = data.shape[0] // n_blocks
    return data[:rows, 0], ModeSet(data[:, 1:], n_blocks=n_blocks)
