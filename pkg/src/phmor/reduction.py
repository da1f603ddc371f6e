"""Projection-based reduced-order models for port-Hamiltonian systems.

All constructors produce a :class:`Rom` of the single template

    Et(t,xt) xt' + rt(t,xt) = (Jt(t,xt) - Rt(t,xt)) Qt(t,xt) xt + Bt(t,xt) u,
    yt = Bt^T Qt xt,

with a reduced Hamiltonian obtained by composing the full-order one with the
ansatz.  The structure-preserving constructors test the residual against the
Q-weighted column space of the (state-dependent) basis, which keeps the
interconnection skew, the dissipation positive semidefinite and the
Hamiltonian identities intact; for linear full-order models the same choice
minimizes the residual in the inverse-mass-weighted energy norm, which
:func:`verify_optimality` checks against an independent least-squares oracle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .ansatz import (
    Ansatz,
    Factorizable,
    LinearTI,
    LinearTV,
    Separable,
    eval_vhat,
    lift as ansatz_lift,
    split_state,
)
from .systems import PhLti, PhLtv, PhNonlinearQ, PhSystem

__all__ = [
    "Rom",
    "OptimalityReport",
    "RankError",
    "reduce_lti",
    "reduce_ltv",
    "reduce_factorizable",
    "reduce_separable_ltv",
    "reduce_separable_nonlinear",
    "reduce_galerkin_baseline",
    "rom_from_system",
    "project_initial_lti",
    "verify_optimality",
    "coefficient_snapshot",
]


class RankError(ValueError):
    """Raised when a basis matrix is rank deficient."""


def _single_slot(fn):
    """Memoize an assembly function on its last (t, xt) argument pair."""
    slot = {"key": None}

    def wrapped(t, xt):
        xt = np.asarray(xt, dtype=float)
        key = (float(t), xt.tobytes())
        if slot["key"] != key:
            slot["key"] = key
            slot["val"] = fn(t, xt)
        return slot["val"]

    return wrapped


@dataclass
class Rom:
    """Reduced-order model with on-demand coefficient evaluators."""

    r: int
    m: int
    E: Callable[[float, np.ndarray], np.ndarray]
    J: Callable[[float, np.ndarray], np.ndarray]
    R: Callable[[float, np.ndarray], np.ndarray]
    Q: Callable[[float, np.ndarray], np.ndarray]
    r_drift: Callable[[float, np.ndarray], np.ndarray]
    B: Callable[[float, np.ndarray], np.ndarray]
    hamiltonian: Callable[[float, np.ndarray], float]
    ansatz: Optional[Ansatz] = None
    structure_preserving: bool = True

    def residual(self, t, xt, xtdot, u) -> np.ndarray:
        """Implicit-form defect of the reduced state equation.

        An empty or ``None`` input stands for an unforced run.
        """
        xt = np.asarray(xt, dtype=float)
        res = self.E(t, xt) @ xtdot + self.r_drift(t, xt)
        res = res - (self.J(t, xt) - self.R(t, xt)) @ (self.Q(t, xt) @ xt)
        if self.m and u is not None and np.size(u):
            res = res - self.B(t, xt) @ np.atleast_1d(u)
        return res

    def rhs(self, t, xt, u=None) -> np.ndarray:
        """Right-hand side ``(Jt-Rt) Qt xt - rt + Bt u`` of the template."""
        xt = np.asarray(xt, dtype=float)
        out = (self.J(t, xt) - self.R(t, xt)) @ (self.Q(t, xt) @ xt)
        out = out - self.r_drift(t, xt)
        if self.m and u is not None:
            out = out + self.B(t, xt) @ np.atleast_1d(u)
        return out

    def output(self, t, xt) -> np.ndarray:
        xt = np.asarray(xt, dtype=float)
        return self.B(t, xt).T @ (self.Q(t, xt) @ xt)

    def lift(self, t, xt) -> np.ndarray:
        if self.ansatz is None:
            return np.asarray(xt, dtype=float)
        return ansatz_lift(self.ansatz, t, xt)


def _require_full_rank(V, what="basis"):
    s = np.linalg.svd(V, compute_uv=False)
    if s.size == 0 or s[-1] <= max(V.shape) * np.finfo(float).eps * s[0]:
        raise RankError(f"{what} matrix is rank deficient")


def _warn_conditioning(mat, name, limit):
    if np.linalg.cond(mat) > limit:
        warnings.warn(f"{name} is nearly singular (condition number above "
                      f"{limit:.1e}); the reduction weight is unreliable",
                      RuntimeWarning)


def reduce_lti(sys: PhLti, Vr, cond_limit: float = 1e12) -> Rom:
    """Structure-preserving reduction of an LTI system with a constant basis.

    Tests the residual against the columns of ``Q Vr``, giving the reduced
    matrices ``Et = Vr^T Q^T E Vr``, ``Jt = Vr^T Q^T (J Q - K) Vr``,
    ``Rt = Vr^T Q^T R Q Vr``, ``Qt = I`` and ``Bt = Vr^T Q^T B``, with the
    quadratic reduced Hamiltonian ``xt^T Et xt / 2``.
    """
    Vr = np.atleast_2d(np.asarray(Vr, dtype=float))
    if Vr.shape[0] != sys.n:
        raise ValueError(f"basis has {Vr.shape[0]} rows, system has {sys.n}")
    _require_full_rank(Vr)
    _warn_conditioning(sys.E, "E", cond_limit)
    _warn_conditioning(sys.Q, "Q", cond_limit)
    r = Vr.shape[1]
    WT = Vr.T @ sys.Q.T
    Et = WT @ sys.E @ Vr
    Jt = WT @ (sys.J @ sys.Q - sys.K) @ Vr
    Rt = WT @ sys.R @ sys.Q @ Vr
    Bt = WT @ sys.B
    eye = np.eye(r)
    zero = np.zeros(r)
    return Rom(
        r=r, m=sys.m,
        E=lambda t, xt: Et, J=lambda t, xt: Jt, R=lambda t, xt: Rt,
        Q=lambda t, xt: eye, r_drift=lambda t, xt: zero, B=lambda t, xt: Bt,
        hamiltonian=lambda t, xt: 0.5 * float(np.asarray(xt) @ (Et @ np.asarray(xt))),
        ansatz=LinearTI(Vr), structure_preserving=True,
    )


def project_initial_lti(sys: PhLti, Vr, x0) -> np.ndarray:
    """Initial reduced state from the energy-weighted projection of ``x0``."""
    Vr = np.atleast_2d(np.asarray(Vr, dtype=float))
    WT = Vr.T @ sys.Q.T @ sys.E
    return np.linalg.solve(WT @ Vr, WT @ np.asarray(x0, dtype=float))


def reduce_ltv(sys: PhLtv, a: LinearTV) -> Rom:
    """Structure-preserving reduction of an LTV system with a moving basis.

    The extra drift produced by the basis motion,
    ``Kt(t) = Vr^T Q^T (K Vr + E dVr/dt)``, is folded into the template drift
    ``rt(t, xt) = Kt(t) xt`` so the result matches the shared template.
    """

    def parts(t):
        V = np.asarray(a.Vr(t), dtype=float)
        Vdot = np.asarray(a.dVr_dt(t), dtype=float)
        Q, E = sys.Q(t), sys.E(t)
        WT = V.T @ Q.T
        return {
            "E": WT @ E @ V,
            "J": WT @ sys.J(t) @ Q @ V,
            "R": WT @ sys.R(t) @ Q @ V,
            "K": WT @ (sys.K(t) @ V + E @ Vdot),
            "B": WT @ sys.B(t),
        }

    slot = {"t": None}

    def at(t):
        if slot["t"] != t:
            slot["t"] = t
            slot["val"] = parts(t)
        return slot["val"]

    r = np.asarray(a.Vr(0.0)).shape[1]
    m = np.asarray(sys.B(0.0)).shape[1]
    eye = np.eye(r)
    return Rom(
        r=r, m=m,
        E=lambda t, xt: at(t)["E"], J=lambda t, xt: at(t)["J"],
        R=lambda t, xt: at(t)["R"], Q=lambda t, xt: eye,
        r_drift=lambda t, xt: at(t)["K"] @ np.asarray(xt, dtype=float),
        B=lambda t, xt: at(t)["B"],
        hamiltonian=lambda t, xt: 0.5 * float(
            np.asarray(xt) @ (at(t)["E"] @ np.asarray(xt))),
        ansatz=a, structure_preserving=True,
    )


def reduce_factorizable(sys: PhNonlinearQ, a: Factorizable) -> Rom:
    """Structure-preserving reduction with a state-dependent basis.

    The reduced mass matrix picks up the basis sensitivity:
    ``Et = Vr^T Q^T E (Vr + Vhat xt)`` with ``Vhat xt`` assembled column by
    column from the directional derivatives of the basis.  All full-order
    coefficients are evaluated at the lifted state.
    """

    def assemble(t, xt):
        V = np.asarray(a.Vr(t, xt), dtype=float)
        x = V @ xt
        Vhat_xt = eval_vhat(a, t, xt)
        Q = sys.Q(t, x)
        QV = Q @ V
        E = sys.E(t, x)
        return {
            "E": QV.T @ (E @ (V + Vhat_xt)),
            "J": QV.T @ (sys.J(t, x) @ QV),
            "R": QV.T @ (sys.R(t, x) @ QV),
            "r": QV.T @ (sys.r_drift(t, x)
                         + E @ (np.asarray(a.dVr_dt(t, xt), dtype=float) @ xt)),
            "B": QV.T @ sys.B(t, x),
            "lifted": x,
        }

    parts = _single_slot(assemble)
    eye = np.eye(a.r)
    m = np.asarray(sys.B(0.0, np.zeros(sys.n))).shape[1]
    return Rom(
        r=a.r, m=m,
        E=lambda t, xt: parts(t, xt)["E"],
        J=lambda t, xt: parts(t, xt)["J"],
        R=lambda t, xt: parts(t, xt)["R"],
        Q=lambda t, xt: eye,
        r_drift=lambda t, xt: parts(t, xt)["r"],
        B=lambda t, xt: parts(t, xt)["B"],
        hamiltonian=lambda t, xt: float(
            sys.hamiltonian(t, parts(t, xt)["lifted"])),
        ansatz=a, structure_preserving=True,
    )


def _separable_blocks(Vs, Vh, E, J, R, Q, drift, B, weighted, nonlinear_E21):
    """Assemble the block coefficients shared by the separable reductions.

    The residual is tested against ``Q [Vs, Vh]`` when ``weighted`` (the
    structure-preserving choice) and against ``[Vs, Vh]`` for the Galerkin
    baseline.  ``nonlinear_E21`` selects whether the lower-left mass block
    is assembled independently (general nonlinear coefficients) or taken as
    the transpose of the upper-right one.  Everything is evaluated through
    thin products, so a coefficient evaluation costs O(n^2 (r_a + r_p)).
    """
    r_a, r_p = Vs.shape[1], Vh.shape[1]
    W = np.hstack([Vs, Vh])
    QW = Q @ W
    left = QW if weighted else W
    EW = E @ W
    Et = left.T @ EW
    if not nonlinear_E21:
        Et[r_a:, :r_a] = Et[:r_a, r_a:].T
    JQVs = J @ QW[:, :r_a]
    Jcol = left.T @ JQVs
    Jt = np.zeros((r_a + r_p, r_a + r_p))
    Jt[:, :r_a] = Jcol
    Jt[:r_a, r_a:] = -Jcol[r_a:, :].T
    RQW = R @ QW
    Rt = left.T @ RQW
    Rt[:r_a, r_a:] = Rt[r_a:, :r_a].T
    rt = left.T @ drift
    Bt = left.T @ B
    return Et, Jt, Rt, rt, Bt


def _block_Qt(r_alpha, r_p):
    Qt = np.zeros((r_alpha + r_p, r_alpha + r_p))
    Qt[:r_alpha, :r_alpha] = np.eye(r_alpha)
    return Qt


def reduce_separable_ltv(sys: PhLtv, a: Separable) -> Rom:
    """Residual-minimizing reduction of an LTV system with a separable ansatz.

    The residual is tested against the columns of
    ``Q [Vs(p), Vhat(p) a]``, which simultaneously preserves the structure
    and minimizes the residual in the inverse-mass-weighted energy norm.
    The reduced mass matrix is singular at ``a = 0`` by construction.
    """
    Qt = _block_Qt(a.r_alpha, a.r_p)

    def assemble(t, xt):
        alpha, p = split_state(a, xt)
        Vs = np.asarray(a.Vs(p), dtype=float)
        Vh = eval_vhat(a, t, xt)
        E, Q, J, R, K, B = (sys.E(t), sys.Q(t), sys.J(t), sys.R(t),
                            sys.K(t), sys.B(t))
        Et, Jt, Rt, rt, Bt = _separable_blocks(
            Vs, Vh, E, J, R, Q, K @ (Vs @ alpha), B,
            weighted=True, nonlinear_E21=False)
        EQVs = E.T @ (Q @ Vs)
        ham = 0.5 * float(alpha @ (Vs.T @ (EQVs @ alpha)))
        return {"E": Et, "J": Jt, "R": Rt, "r": rt, "B": Bt, "H": ham}

    parts = _single_slot(assemble)
    m = np.asarray(sys.B(0.0)).shape[1]
    return Rom(
        r=a.r_alpha + a.r_p, m=m,
        E=lambda t, xt: parts(t, xt)["E"],
        J=lambda t, xt: parts(t, xt)["J"],
        R=lambda t, xt: parts(t, xt)["R"],
        Q=lambda t, xt: Qt,
        r_drift=lambda t, xt: parts(t, xt)["r"],
        B=lambda t, xt: parts(t, xt)["B"],
        hamiltonian=lambda t, xt: parts(t, xt)["H"],
        ansatz=a, structure_preserving=True,
    )


def _separable_nonlinear_rom(sys: PhNonlinearQ, a: Separable,
                             weighted: bool) -> Rom:
    Qt = _block_Qt(a.r_alpha, a.r_p)

    def assemble(t, xt):
        alpha, p = split_state(a, xt)
        Vs = np.asarray(a.Vs(p), dtype=float)
        Vh = eval_vhat(a, t, xt)
        x = Vs @ alpha
        Et, Jt, Rt, rt, Bt = _separable_blocks(
            Vs, Vh, sys.E(t, x), sys.J(t, x), sys.R(t, x), sys.Q(t, x),
            np.asarray(sys.r_drift(t, x), dtype=float), sys.B(t, x),
            weighted=weighted, nonlinear_E21=True)
        return {"E": Et, "J": Jt, "R": Rt, "r": rt, "B": Bt,
                "H": float(sys.hamiltonian(t, x))}

    parts = _single_slot(assemble)
    m = np.asarray(sys.B(0.0, np.zeros(sys.n))).shape[1]
    return Rom(
        r=a.r_alpha + a.r_p, m=m,
        E=lambda t, xt: parts(t, xt)["E"],
        J=lambda t, xt: parts(t, xt)["J"],
        R=lambda t, xt: parts(t, xt)["R"],
        Q=lambda t, xt: Qt,
        r_drift=lambda t, xt: parts(t, xt)["r"],
        B=lambda t, xt: parts(t, xt)["B"],
        hamiltonian=lambda t, xt: parts(t, xt)["H"],
        ansatz=a, structure_preserving=weighted,
    )


def reduce_separable_nonlinear(sys: PhNonlinearQ, a: Separable) -> Rom:
    """Structure-preserving separable reduction of a nonlinear system.

    All full-order coefficients are evaluated at the lifted state
    ``Vs(p) a``.  Unlike the linear case the lower-left mass block is not
    the transpose of the upper-right one, since ``E^T Q`` need not be
    symmetric here.
    """
    return _separable_nonlinear_rom(sys, a, weighted=True)


def reduce_galerkin_baseline(sys: PhNonlinearQ, a: Separable) -> Rom:
    """Plain Galerkin separable reduction (no energy weighting).

    The residual is tested against ``[Vs(p), Vhat(p) a]`` itself.  The block
    layout matches the structure-preserving constructor with every left
    ``Q^T`` factor removed; no port-Hamiltonian properties are claimed.
    """
    return _separable_nonlinear_rom(sys, a, weighted=False)


def rom_from_system(sys: PhSystem) -> Rom:
    """Wrap a full-order system in the reduced template (identity ansatz).

    Useful for running the energy diagnostics directly on a full-order
    trajectory.
    """
    if isinstance(sys, PhLti):
        eye = np.eye(sys.n)
        return Rom(
            r=sys.n, m=sys.m,
            E=lambda t, x: sys.E, J=lambda t, x: sys.J, R=lambda t, x: sys.R,
            Q=lambda t, x: sys.Q,
            r_drift=lambda t, x: sys.K @ np.asarray(x, dtype=float),
            B=lambda t, x: sys.B,
            hamiltonian=lambda t, x: sys.hamiltonian(x),
            ansatz=None, structure_preserving=True,
        )
    if isinstance(sys, PhLtv):
        m = np.asarray(sys.B(0.0)).shape[1]
        return Rom(
            r=np.asarray(sys.E(0.0)).shape[0], m=m,
            E=lambda t, x: sys.E(t), J=lambda t, x: sys.J(t),
            R=lambda t, x: sys.R(t), Q=lambda t, x: sys.Q(t),
            r_drift=lambda t, x: sys.K(t) @ np.asarray(x, dtype=float),
            B=lambda t, x: sys.B(t),
            hamiltonian=lambda t, x: sys.hamiltonian(t, x),
            ansatz=None, structure_preserving=True,
        )
    if isinstance(sys, PhNonlinearQ):
        m = np.asarray(sys.B(0.0, np.zeros(sys.n))).shape[1]
        return Rom(
            r=sys.n, m=m,
            E=sys.E, J=sys.J, R=sys.R, Q=sys.Q,
            r_drift=sys.r_drift, B=sys.B,
            hamiltonian=lambda t, x: float(sys.hamiltonian(t, x)),
            ansatz=None, structure_preserving=True,
        )
    raise TypeError(f"unsupported system type {type(sys)!r}")


@dataclass
class OptimalityReport:
    """Comparison of the ROM state derivative with a least-squares oracle."""

    probe_count: int
    degenerate_count: int
    max_rel_deviation: float
    deviations: list = field(default_factory=list)
    rom_residual_norms: list = field(default_factory=list)
    optimal_residual_norms: list = field(default_factory=list)


def _linear_matrices(sys, t):
    if isinstance(sys, PhLti):
        return sys.E, sys.J, sys.R, sys.Q, sys.K, sys.B
    if isinstance(sys, PhLtv):
        return sys.E(t), sys.J(t), sys.R(t), sys.Q(t), sys.K(t), sys.B(t)
    raise TypeError("optimality verification needs a linear system class")


def verify_optimality(rom: Rom, sys, t, xt, u) -> OptimalityReport:
    """Check that the ROM derivative minimizes the weighted residual norm.

    For each probe the full-order residual is linear in the candidate
    derivative, ``res(eta) = A eta - b``, and the minimizer of
    ``|res|_{E^{-T} Q^T}`` is computed independently through a Cholesky
    factor of the weight and a minimum-norm least-squares solve.  The
    derivative determined by the ROM state equation is compared against it.
    Probes with a singular reduced Hessian are flagged as degenerate and
    excluded from the reported maximum.
    """
    probes = _normalize_probes(t, xt, u)
    deviations, rom_norms, opt_norms = [], [], []
    degenerate = 0
    for tp, xp, up in probes:
        E, J, R, Q, K, B = _linear_matrices(sys, tp)
        A, b = _residual_operator(rom, sys, tp, xp, up, E, J, R, Q, K, B)
        W = np.linalg.solve(E.T, Q.T)
        W = 0.5 * (W + W.T)
        L = scipy.linalg.cholesky(W, lower=True)
        LA = L.T @ A
        Lb = L.T @ b
        s = np.linalg.svd(LA, compute_uv=False)
        is_degenerate = s[-1] <= 1e-10 * max(s[0], 1.0)
        eta_opt = np.linalg.lstsq(LA, Lb, rcond=None)[0]

        Et = rom.E(tp, xp)
        rhs = rom.rhs(tp, xp, up)
        try:
            eta_rom = np.linalg.solve(Et, rhs)
        except np.linalg.LinAlgError:
            eta_rom = np.linalg.lstsq(Et, rhs, rcond=None)[0]
            is_degenerate = True
        rom_norms.append(float(np.linalg.norm(LA @ eta_rom - Lb)))
        opt_norms.append(float(np.linalg.norm(LA @ eta_opt - Lb)))
        if is_degenerate:
            degenerate += 1
            deviations.append(None)
        else:
            dev = np.linalg.norm(eta_rom - eta_opt) / max(np.linalg.norm(eta_opt), 1.0)
            deviations.append(float(dev))
    finite = [d for d in deviations if d is not None]
    return OptimalityReport(
        probe_count=len(probes),
        degenerate_count=degenerate,
        max_rel_deviation=max(finite) if finite else 0.0,
        deviations=deviations,
        rom_residual_norms=rom_norms,
        optimal_residual_norms=opt_norms,
    )


def _normalize_probes(t, xt, u):
    if np.isscalar(t):
        return [(float(t), np.asarray(xt, dtype=float),
                 np.atleast_1d(np.asarray(u, dtype=float)))]
    return [(float(tp), np.asarray(xp, dtype=float),
             np.atleast_1d(np.asarray(up, dtype=float)))
            for tp, xp, up in zip(t, xt, u)]


def _residual_operator(rom, sys, t, xt, u, E, J, R, Q, K, B):
    """Full-order residual ``A eta - b`` as a function of the derivative."""
    sysmat = (J - R) @ Q - K
    a = rom.ansatz
    if isinstance(a, LinearTI):
        A = E @ a.Vr
        b = sysmat @ (a.Vr @ xt)
    elif isinstance(a, LinearTV):
        V = np.asarray(a.Vr(t), dtype=float)
        A = E @ V
        b = sysmat @ (V @ xt) - E @ (np.asarray(a.dVr_dt(t), dtype=float) @ xt)
    elif isinstance(a, Separable):
        alpha, p = split_state(a, xt)
        Vs = np.asarray(a.Vs(p), dtype=float)
        Vh = eval_vhat(a, t, xt)
        A = E @ np.hstack([Vs, Vh])
        b = sysmat @ (Vs @ alpha)
    else:
        raise TypeError("optimality verification supports constant, "
                        "time-varying and separable ansatzes")
    if B.shape[1]:
        b = b + B @ np.atleast_1d(u)
    return A, b


def coefficient_snapshot(rom: Rom, t, xt) -> dict:
    """JSON-exportable snapshot of the ROM coefficients at one probe."""
    xt = np.asarray(xt, dtype=float)
    return {
        "t": float(t),
        "xt": xt.tolist(),
        "E": rom.E(t, xt).tolist(),
        "J": rom.J(t, xt).tolist(),
        "R": rom.R(t, xt).tolist(),
        "Q": rom.Q(t, xt).tolist(),
        "r_drift": np.asarray(rom.r_drift(t, xt)).tolist(),
        "B": rom.B(t, xt).tolist(),
        "hamiltonian": float(rom.hamiltonian(t, xt)),
        "structure_preserving": rom.structure_preserving,
    }
