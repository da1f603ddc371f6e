"""Energy-consistency, error and stability diagnostics.

The discrete power balance compares the difference quotient of the reduced
Hamiltonian along an implicit-midpoint trajectory with the supplied and
dissipated power evaluated at the interval midpoints.  For quadratic
Hamiltonians the midpoint rule renders this balance exact up to the
nonlinear-solver tolerance; for non-quadratic reduced Hamiltonians the
balance error decays with second order in the step size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.integrate import cumulative_trapezoid

from .ansatz import Factorizable, LinearTI, LinearTV, Separable, eval_basis
from .reduction import Rom
from .systems import PhLti, PhLtv, PhNonlinearQ, check_equilibrium_origin
from .timestep import Trajectory

__all__ = [
    "PowerBalanceRecord",
    "power_balance_series",
    "write_power_balance_csv",
    "relative_l2_error",
    "StabilityCertificate",
    "stability_certificate",
    "weighted_state_norm",
    "weighted_error_curve",
    "lifted_residual_norms",
    "logarithmic_norm_weighted",
    "error_bound_eval",
    "write_bound_csv",
]


@dataclass(frozen=True)
class PowerBalanceRecord:
    """Energy bookkeeping for one time step, attributed to its midpoint.

    ``balance_error`` is the absolute defect of the discrete power balance
    ``dH/dt = supply - dissipation``.  For structure-preserving models the
    dissipation entry is nonnegative up to round-off; a plain Galerkin
    baseline carries no such guarantee.
    """

    t_mid: float
    dH_dt: float
    dissipation: float
    supply: float
    balance_error: float


def power_balance_series(rom: Rom, traj: Trajectory, input=None):
    """Per-step power-balance records of an integrated model.

    The Hamiltonian rate uses the difference quotient of consecutive states;
    dissipation and supply are evaluated at the midpoint state, matching the
    integrator's collocation point.
    """
    times, states = traj.times, traj.states
    if states.shape[0] != rom.r and rom.r >= 0:
        raise ValueError(
            f"trajectory carries states of dimension {states.shape[0]}, "
            f"the model expects {rom.r}")
    records = []
    for j in range(times.size - 1):
        tau = times[j + 1] - times[j]
        t_mid = 0.5 * (times[j] + times[j + 1])
        x_mid = 0.5 * (states[:, j] + states[:, j + 1])
        z = rom.Q(t_mid, x_mid) @ x_mid
        dissipation = float(z @ (rom.R(t_mid, x_mid) @ z))
        if rom.m and input is not None:
            u = np.atleast_1d(np.asarray(input(t_mid), dtype=float))
            supply = float((rom.B(t_mid, x_mid).T @ z) @ u)
        else:
            supply = 0.0
        dH = (rom.hamiltonian(times[j + 1], states[:, j + 1])
              - rom.hamiltonian(times[j], states[:, j])) / tau
        records.append(PowerBalanceRecord(
            t_mid=float(t_mid), dH_dt=float(dH), dissipation=dissipation,
            supply=supply,
            balance_error=abs(dH - (supply - dissipation))))
    return records


def write_power_balance_csv(records, path):
    lines = ["t,dH,dissipation,supply,error"]
    for rec in records:
        lines.append(",".join(repr(v) for v in
                              (rec.t_mid, rec.dH_dt, rec.dissipation,
                               rec.supply, rec.balance_error)))
    Path(path).write_text("\n".join(lines) + "\n")


def relative_l2_error(reference: Trajectory, approx: Trajectory,
                      weight=None) -> float:
    """Relative space-time error in the (weighted) discretized L2 norm.

    Time integration uses the composite trapezoidal rule; the spatial norm
    is ``|v|_W = sqrt(v^T W v)`` with ``W`` defaulting to the identity.
    """
    if reference.times.shape != approx.times.shape or \
            not np.allclose(reference.times, approx.times):
        raise ValueError("trajectories live on different time grids")
    if reference.states.shape != approx.states.shape:
        raise ValueError("trajectories have different state dimensions")
    err = reference.states - approx.states
    if weight is None:
        err_sq = np.einsum("ij,ij->j", err, err)
        ref_sq = np.einsum("ij,ij->j", reference.states, reference.states)
    else:
        err_sq = np.einsum("ij,ij->j", err, weight @ err)
        ref_sq = np.einsum("ij,ij->j", reference.states,
                           weight @ reference.states)
    num = np.trapezoid(err_sq, reference.times)
    den = np.trapezoid(ref_sq, reference.times)
    if den == 0.0:
        raise ValueError("reference trajectory vanishes; relative error undefined")
    return float(np.sqrt(num / den))


@dataclass
class StabilityCertificate:
    """Numerical evidence for the stability and boundedness estimates.

    All quantities are probe-based: singular-value extremes of the basis
    over the probe set, Hamiltonian norm-equivalence constants from the
    extreme eigenvalues of the symmetrized energy weight, and the implied
    amplitude-bound constant ``c = sqrt(c3 s_max^2 / (c2 s_min^2))``.
    Entries that cannot be established are ``None`` with a note.
    """

    sigma_max: Optional[float] = None
    sigma_min: Optional[float] = None
    c2: Optional[float] = None
    c3: Optional[float] = None
    amplitude_bound_constant: Optional[float] = None
    lifted_bound_constant: Optional[float] = None
    equilibrium_ok: Optional[bool] = None
    mass_condition_numbers: Optional[list] = None
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "sigma_max", "sigma_min", "c2", "c3",
            "amplitude_bound_constant", "lifted_bound_constant",
            "equilibrium_ok", "mass_condition_numbers", "notes")}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.as_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _basis_sigma_extremes(a, probes):
    if isinstance(a, LinearTI):
        s = np.linalg.svd(a.Vr, compute_uv=False)
        return float(s[0]), float(s[-1])
    if probes is None:
        return None, None
    smax, smin = 0.0, np.inf
    for probe in probes:
        if isinstance(a, LinearTV):
            V = np.asarray(a.Vr(float(probe)), dtype=float)
        elif isinstance(a, Separable):
            V = np.asarray(a.Vs(np.atleast_1d(np.asarray(probe, dtype=float))),
                           dtype=float)
        elif isinstance(a, Factorizable):
            t, xt = probe
            V = eval_basis(a, t, np.asarray(xt, dtype=float))
        else:
            raise TypeError(f"unsupported ansatz type {type(a)!r}")
        s = np.linalg.svd(V, compute_uv=False)
        smax, smin = max(smax, float(s[0])), min(smin, float(s[-1]))
    return smax, smin


def _energy_eig_extremes(sys, probes):
    def extremes(M):
        w = np.linalg.eigvalsh(0.5 * (M + M.T))
        return float(w[0]), float(w[-1])

    if isinstance(sys, PhLti):
        return extremes(sys.E.T @ sys.Q)
    lo, hi = np.inf, -np.inf
    if isinstance(sys, PhLtv):
        for t in (probes if probes is not None else (0.0,)):
            t = float(t) if np.isscalar(t) else float(t[0])
            a, b = extremes(sys.E(t).T @ sys.Q(t))
            lo, hi = min(lo, a), max(hi, b)
        return lo, hi
    if isinstance(sys, PhNonlinearQ):
        origin = np.zeros(sys.n)
        a, b = extremes(sys.E(0.0, origin).T @ sys.Q(0.0, origin))
        return a, b
    raise TypeError(f"unsupported system type {type(sys)!r}")


def stability_certificate(a, sys, probes=None, traj: Trajectory = None,
                          rom: Rom = None) -> StabilityCertificate:
    """Assemble probe-based stability evidence for an ansatz/system pair.

    ``probes`` holds basis evaluation points appropriate to the ansatz
    variant (times for a time-varying basis, path vectors for a separable
    one, ``(t, xt)`` pairs for a factorizable one).  When ``rom`` and
    ``traj`` are supplied the conditioning of the reduced mass matrix along
    the trajectory is reported as well.
    """
    cert = StabilityCertificate()
    cert.sigma_max, cert.sigma_min = _basis_sigma_extremes(a, probes)
    if cert.sigma_max is None:
        cert.notes.append("no probes supplied; basis singular values not estimated")
    cert.c2, cert.c3 = _energy_eig_extremes(sys, probes)
    if isinstance(sys, PhNonlinearQ):
        cert.notes.append(
            "energy equivalence constants evaluated from E^T Q at the origin; "
            "they certify quadratic Hamiltonians of the form x^T E^T Q x / 2")
    if cert.c2 is not None and cert.c2 <= 0:
        cert.notes.append("energy weight is not positive definite; "
                          "bound constants are inconclusive")
    elif cert.sigma_min is not None and cert.sigma_min > 0 and cert.c2 > 0:
        cert.amplitude_bound_constant = float(
            np.sqrt(cert.c3 * cert.sigma_max ** 2 /
                    (cert.c2 * cert.sigma_min ** 2)))
    if cert.c2 is not None and cert.c2 > 0:
        cert.lifted_bound_constant = float(np.sqrt(cert.c3 / cert.c2))
    cert.equilibrium_ok = check_equilibrium_origin(sys)
    if rom is not None and traj is not None:
        cert.mass_condition_numbers = [
            float(np.linalg.cond(rom.E(t, traj.states[:, j])))
            for j, t in enumerate(traj.times)]
    return cert


def weighted_state_norm(sys: PhLti, v) -> float:
    """Energy norm ``|v| = sqrt(v^T E^T Q v)`` of a full-order vector."""
    W = 0.5 * (sys.E.T @ sys.Q + sys.Q.T @ sys.E)
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ (W @ v), 0.0)))


def weighted_error_curve(sys: PhLti, reference: Trajectory,
                         lifted: Trajectory) -> np.ndarray:
    """Energy norm of the state error at every grid time."""
    if reference.states.shape != lifted.states.shape:
        raise ValueError("trajectories have different shapes")
    return np.array([weighted_state_norm(sys, reference.states[:, j]
                                         - lifted.states[:, j])
                     for j in range(reference.times.size)])


def lifted_residual_norms(sys: PhLti, rom: Rom, traj: Trajectory,
                          input=None) -> np.ndarray:
    """Full-order residual of a lifted ROM trajectory in the dual norm.

    The reduced derivative is recovered from the discrete states by central
    difference quotients (one-sided at the ends); the residual is measured
    in the ``E^{-T} Q^T`` norm that also drives the residual minimization.
    """
    if not isinstance(rom.ansatz, LinearTI):
        raise TypeError("residual norms are implemented for constant-basis models")
    Vr = rom.ansatz.Vr
    E, Q = sys.E, sys.Q
    sysmat = sys.rhs_matrix()
    times, states = traj.times, traj.states
    nt = times.size
    norms = np.empty(nt)
    for j in range(nt):
        if j == 0:
            dxt = (states[:, 1] - states[:, 0]) / (times[1] - times[0])
        elif j == nt - 1:
            dxt = (states[:, -1] - states[:, -2]) / (times[-1] - times[-2])
        else:
            dxt = (states[:, j + 1] - states[:, j - 1]) / (times[j + 1] - times[j - 1])
        res = E @ (Vr @ dxt) - sysmat @ (Vr @ states[:, j])
        if sys.m and input is not None:
            res = res - sys.B @ np.atleast_1d(np.asarray(input(times[j]), dtype=float))
        w = np.linalg.solve(E.T, Q.T @ res)
        norms[j] = np.sqrt(max(float(res @ w), 0.0))
    return norms


def logarithmic_norm_weighted(sys: PhLti) -> float:
    """Logarithmic norm of the system operator in the energy inner product.

    Computed as the largest eigenvalue of the symmetrized weighted operator
    against the energy weight; the flow map is then bounded by
    ``exp(omega t)`` in the energy norm.
    """
    M = 0.5 * (sys.E.T @ sys.Q + sys.Q.T @ sys.E)
    A = np.linalg.solve(sys.E, sys.rhs_matrix())
    S = 0.5 * (M @ A + A.T @ M)
    try:
        w = scipy.linalg.eigh(S, M, eigvals_only=True)
    except scipy.linalg.LinAlgError as err:
        raise ValueError(
            "decay-rate estimation failed; supply M and omega explicitly"
        ) from err
    return float(w[-1])


def error_bound_eval(sys: PhLti, times, residual_norms, err0: float = 0.0,
                     M: float = None, omega: float = None) -> np.ndarray:
    """Residual-based a-posteriori bound on the energy-norm state error.

    Evaluates ``M exp(omega t) (err0 + int_0^t exp(-omega s) rho(s) ds)``
    with the integral by the composite trapezoidal rule over the supplied
    residual norms.  When ``omega`` is absent it is set to the logarithmic
    norm of the system operator in the energy inner product, in which the
    flow is a strict ``exp(omega t)`` contraction, so ``M`` defaults to 1.
    """
    times = np.asarray(times, dtype=float)
    rho = np.asarray(residual_norms, dtype=float)
    if rho.shape != times.shape:
        raise ValueError("need one residual norm per grid time")
    if omega is None:
        omega = logarithmic_norm_weighted(sys)
    if M is None:
        M = 1.0
    t0 = times[0]
    integrand = np.exp(-omega * (times - t0)) * rho
    integral = cumulative_trapezoid(integrand, times, initial=0.0)
    return M * np.exp(omega * (times - t0)) * (err0 + integral)


def write_bound_csv(path, times, bound, measured):
    lines = ["t,bound,measured"]
    for t, b, e in zip(times, bound, measured):
        lines.append(f"{t!r},{b!r},{e!r}")
    Path(path).write_text("\n".join(lines) + "\n")
