"""Port-Hamiltonian system descriptions and structural validation.

Three classes of systems are supported:

* :class:`PhLti` -- linear time-invariant,
  ``E x' = ((J - R) Q - K) x + B u`` with quadratic Hamiltonian
  ``H(x) = x^T E^T Q x / 2``.
* :class:`PhLtv` -- linear time-varying, same template with matrix-valued
  callbacks of time.
* :class:`PhNonlinearQ` -- nonlinear systems
  ``E(t,x) x' + r(t,x) = (J(t,x) - R(t,x)) Q(t,x) x + B(t,x) u`` whose
  Hamiltonian gradient factorizes as ``grad_x H = E^T Q x``.

All structural requirements (skew interconnection, positive semidefinite
dissipation, Hamiltonian compatibility) are checked numerically by
:func:`validate` with scale-invariant tolerances.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "PhLti",
    "PhLtv",
    "PhNonlinearQ",
    "PhSystem",
    "StructureError",
    "Tolerances",
    "CheckResult",
    "ValidationReport",
    "validate",
    "hamiltonian_quadratic",
    "dissipation_supply",
    "check_equilibrium_origin",
    "finite_difference_gradient",
    "lti_as_ltv",
    "read_matrix_csv",
    "write_matrix_csv",
    "load_lti_csv",
]

_EPS = float(np.finfo(float).eps)


class StructureError(ValueError):
    """Raised when a system description is structurally inconsistent."""


def _as_matrix(a, name):
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise StructureError(f"{name} must be a 2-d array, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class PhLti:
    """Linear time-invariant port-Hamiltonian system.

    The state equation is ``E x' = ((J - R) Q - K) x + B u`` with output
    ``y = B^T Q x``.  Structural requirements: J skew-symmetric, R symmetric
    positive semidefinite, E^T Q symmetric positive semidefinite and Q^T K
    skew-symmetric.
    """

    E: np.ndarray
    J: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    K: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        for name in ("E", "J", "R", "Q", "K"):
            m = _as_matrix(getattr(self, name), name)
            object.__setattr__(self, name, m)
            if m.shape != (self.n, self.n):
                raise StructureError(
                    f"{name} has shape {m.shape}, expected {(self.n, self.n)}"
                )
        b = np.asarray(self.B, dtype=float)
        if b.ndim == 1:
            b = b.reshape(-1, 1)
        if b.ndim != 2 or b.shape[0] != self.n:
            raise StructureError(f"B has shape {b.shape}, expected ({self.n}, m)")
        object.__setattr__(self, "B", b)

    @property
    def n(self) -> int:
        return np.asarray(self.E).shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def hamiltonian(self, x) -> float:
        return hamiltonian_quadratic(self, x)

    def grad_hamiltonian(self, x) -> np.ndarray:
        return self.E.T @ (self.Q @ np.asarray(x, dtype=float))

    def rhs_matrix(self) -> np.ndarray:
        """System matrix ``(J - R) Q - K`` acting on the state."""
        return (self.J - self.R) @ self.Q - self.K

    def residual(self, t, x, xdot, u) -> np.ndarray:
        """Implicit-form residual ``E x' - ((J-R)Q - K) x - B u``."""
        res = self.E @ xdot - self.rhs_matrix() @ x
        if self.m and u is not None and np.size(u):
            res = res - self.B @ np.atleast_1d(u)
        return res

    def residual_jacobians(self, t, x=None):
        """Jacobians of :meth:`residual` with respect to ``x`` and ``x'``."""
        return -self.rhs_matrix(), self.E


@dataclass(frozen=True)
class PhLtv:
    """Linear time-varying port-Hamiltonian system given by matrix callbacks.

    ``d_dt_QtE`` must return the time derivative of ``Q(t)^T E(t)``; the
    compatibility ``d/dt (Q^T E) = Q^T K + K^T Q`` is cross-checked by
    :func:`validate` against finite differences.
    """

    E: Callable[[float], np.ndarray]
    J: Callable[[float], np.ndarray]
    R: Callable[[float], np.ndarray]
    Q: Callable[[float], np.ndarray]
    K: Callable[[float], np.ndarray]
    B: Callable[[float], np.ndarray]
    d_dt_QtE: Callable[[float], np.ndarray]

    def hamiltonian(self, t, x) -> float:
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ (self.E(t).T @ (self.Q(t) @ x)))

    def grad_hamiltonian(self, t, x) -> np.ndarray:
        return self.E(t).T @ (self.Q(t) @ np.asarray(x, dtype=float))

    def rhs_matrix(self, t) -> np.ndarray:
        return (self.J(t) - self.R(t)) @ self.Q(t) - self.K(t)

    def residual(self, t, x, xdot, u) -> np.ndarray:
        res = self.E(t) @ xdot - self.rhs_matrix(t) @ x
        b = self.B(t)
        if b.shape[1] and u is not None and np.size(u):
            res = res - b @ np.atleast_1d(u)
        return res

    def residual_jacobians(self, t, x=None):
        return -self.rhs_matrix(t), self.E(t)


@dataclass(frozen=True)
class PhNonlinearQ:
    """Nonlinear port-Hamiltonian system with factorized gradient.

    The drift ``r_drift`` absorbs explicit time dependence of the
    Hamiltonian: ``dH/dt(t,x) = r(t,x)^T Q(t,x) x``.  If
    ``grad_x_hamiltonian`` is omitted the gradient identity is checked with
    central finite differences of ``hamiltonian``.
    """

    n: int
    E: Callable[[float, np.ndarray], np.ndarray]
    J: Callable[[float, np.ndarray], np.ndarray]
    R: Callable[[float, np.ndarray], np.ndarray]
    Q: Callable[[float, np.ndarray], np.ndarray]
    r_drift: Callable[[float, np.ndarray], np.ndarray]
    B: Callable[[float, np.ndarray], np.ndarray]
    hamiltonian: Callable[[float, np.ndarray], float]
    grad_x_hamiltonian: Optional[Callable[[float, np.ndarray], np.ndarray]] = None

    def rhs(self, t, x, u=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = (self.J(t, x) - self.R(t, x)) @ (self.Q(t, x) @ x) - self.r_drift(t, x)
        b = self.B(t, x)
        if b.shape[1] and u is not None:
            out = out + b @ np.atleast_1d(u)
        return out

    def residual(self, t, x, xdot, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        res = self.E(t, x) @ xdot + self.r_drift(t, x)
        res = res - (self.J(t, x) - self.R(t, x)) @ (self.Q(t, x) @ x)
        b = self.B(t, x)
        if b.shape[1] and u is not None and np.size(u):
            res = res - b @ np.atleast_1d(u)
        return res


PhSystem = Union[PhLti, PhLtv, PhNonlinearQ]


@dataclass(frozen=True)
class Tolerances:
    """Scale-invariant tolerances for the structural checks.

    Skew/symmetry checks pass when the maximum entry of the defect is below
    ``skew_rel * (1 + |M|_F)``; definiteness checks compare the smallest
    eigenvalue of the symmetrized matrix against ``-psd_rel * (1 + |M|_2)``.
    """

    skew_rel: float = 1e-10
    sym_rel: float = 1e-10
    psd_rel: float = 1e-8
    grad_rel: float = 1e-5
    deriv_rel: float = 1e-6
    equilibrium_abs: float = 1e-10

    def skew_tol(self, mat) -> float:
        return self.skew_rel * (1.0 + np.linalg.norm(mat, "fro"))

    def sym_tol(self, mat) -> float:
        return self.sym_rel * (1.0 + np.linalg.norm(mat, "fro"))

    def psd_tol(self, mat) -> float:
        return self.psd_rel * (1.0 + np.linalg.norm(mat, 2))


@dataclass(frozen=True)
class CheckResult:
    name: str
    violation: float
    passed: bool


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    passed: bool = True

    def add(self, name: str, violation: float, tol: float):
        ok = bool(violation <= tol)
        self.checks.append(CheckResult(name, float(violation), ok))
        self.passed = self.passed and ok

    def as_dict(self) -> dict:
        return {
            "checks": [
                {"name": c.name, "violation": c.violation, "pass": c.passed}
                for c in self.checks
            ],
            "pass": self.passed,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.as_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def finite_difference_gradient(f, x, h=None) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = math.sqrt(_EPS) * (1.0 + np.linalg.norm(x))
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def _skew_violation(mat) -> float:
    return float(np.max(np.abs(mat + mat.T))) if mat.size else 0.0

def _sym_violation(mat) -> float:
    return float(np.max(np.abs(mat - mat.T))) if mat.size else 0.0

def _psd_violation(mat) -> float:
    if not mat.size:
        return 0.0
    w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    return float(max(0.0, -w[0]))


def _validate_lti(sys: PhLti, tol: Tolerances) -> ValidationReport:
    rep = ValidationReport()
    EtQ = sys.E.T @ sys.Q
    rep.add("J_skew", _skew_violation(sys.J), tol.skew_tol(sys.J))
    rep.add("R_sym", _sym_violation(sys.R), tol.sym_tol(sys.R))
    rep.add("R_psd", _psd_violation(sys.R), tol.psd_tol(sys.R))
    rep.add("EtQ_sym", _sym_violation(EtQ), tol.sym_tol(EtQ))
    rep.add("EtQ_psd", _psd_violation(EtQ), tol.psd_tol(EtQ))
    QtK = sys.Q.T @ sys.K
    rep.add("QtK_skew", _skew_violation(QtK), tol.skew_tol(QtK))
    return rep


def _validate_ltv(sys: PhLtv, times, tol: Tolerances) -> ValidationReport:
    rep = ValidationReport()
    viol = {k: 0.0 for k in
            ("J_skew", "R_sym", "R_psd", "EtQ_sym", "EtQ_psd",
             "dQtE_vs_fd", "dQtE_identity")}
    scale = {k: 0.0 for k in viol}

    def upd(key, v, s):
        viol[key] = max(viol[key], v)
        scale[key] = max(scale[key], s)

    for t in times:
        J, R, E, Q, K = sys.J(t), sys.R(t), sys.E(t), sys.Q(t), sys.K(t)
        _check_square(J, "J", E.shape[0])
        EtQ = E.T @ Q
        upd("J_skew", _skew_violation(J), tol.skew_tol(J))
        upd("R_sym", _sym_violation(R), tol.sym_tol(R))
        upd("R_psd", _psd_violation(R), tol.psd_tol(R))
        upd("EtQ_sym", _sym_violation(EtQ), tol.sym_tol(EtQ))
        upd("EtQ_psd", _psd_violation(EtQ), tol.psd_tol(EtQ))
        # derivative callback against central differences of Q^T E
        ht = _EPS ** (1.0 / 3.0) * (1.0 + abs(t))
        fd = (sys.Q(t + ht).T @ sys.E(t + ht)
              - sys.Q(t - ht).T @ sys.E(t - ht)) / (2.0 * ht)
        d = sys.d_dt_QtE(t)
        s = tol.deriv_rel * (1.0 + np.linalg.norm(d, "fro"))
        upd("dQtE_vs_fd", float(np.max(np.abs(d - fd))), s)
        ident = Q.T @ K + K.T @ Q
        upd("dQtE_identity", float(np.max(np.abs(d - ident))), s)
    for key in viol:
        rep.add(key, viol[key], scale[key])
    return rep


def _validate_nonlinear(sys: PhNonlinearQ, points, tol: Tolerances) -> ValidationReport:
    rep = ValidationReport()
    viol = {k: 0.0 for k in
            ("J_skew", "R_sym", "R_psd", "grad_identity", "dt_identity")}
    scale = {k: 0.0 for k in viol}

    def upd(key, v, s):
        viol[key] = max(viol[key], v)
        scale[key] = max(scale[key], s)

    for t, x in points:
        x = np.asarray(x, dtype=float)
        J, R, E, Q = sys.J(t, x), sys.R(t, x), sys.E(t, x), sys.Q(t, x)
        _check_square(J, "J", x.size)
        _check_square(R, "R", x.size)
        _check_square(E, "E", x.size)
        _check_square(Q, "Q", x.size)
        upd("J_skew", _skew_violation(J), tol.skew_tol(J))
        upd("R_sym", _sym_violation(R), tol.sym_tol(R))
        upd("R_psd", _psd_violation(R), tol.psd_tol(R))

        target = E.T @ (Q @ x)
        if sys.grad_x_hamiltonian is not None:
            grad = np.asarray(sys.grad_x_hamiltonian(t, x), dtype=float)
        else:
            grad = finite_difference_gradient(lambda z: sys.hamiltonian(t, z), x)
        upd("grad_identity", float(np.linalg.norm(grad - target)),
            tol.grad_rel * (1.0 + np.linalg.norm(target)))

        ht = math.sqrt(_EPS) * (1.0 + abs(t))
        dH = (sys.hamiltonian(t + ht, x) - sys.hamiltonian(t - ht, x)) / (2.0 * ht)
        target_t = float(sys.r_drift(t, x) @ (Q @ x))
        upd("dt_identity", abs(dH - target_t), tol.grad_rel * (1.0 + abs(target_t)))
    for key in viol:
        rep.add(key, viol[key], scale[key])
    return rep


def _check_square(mat, name, n):
    if mat.shape != (n, n):
        raise StructureError(f"{name} returned shape {mat.shape}, expected {(n, n)}")


def validate(system: PhSystem, sample_points: Sequence = (),
             tolerances: Tolerances = Tolerances()) -> ValidationReport:
    """Check the structural invariants of a port-Hamiltonian system.

    ``sample_points`` is a list of ``(t, x)`` pairs for the nonlinear class,
    and a list of times (or ``(t, x)`` pairs whose states are ignored) for
    the time-varying class.  For :class:`PhLti` the checks are pointwise
    constant and the sample list may be empty.  Returns a
    :class:`ValidationReport` with one entry per structural condition.
    """
    if isinstance(system, PhLti):
        return _validate_lti(system, tolerances)
    if isinstance(system, PhLtv):
        if len(sample_points) == 0:
            raise ValueError("time-varying validation needs sample points")
        times = [p[0] if isinstance(p, (tuple, list)) else float(p)
                 for p in sample_points]
        return _validate_ltv(system, times, tolerances)
    if isinstance(system, PhNonlinearQ):
        if len(sample_points) == 0:
            raise ValueError("nonlinear validation needs (t, x) sample points")
        return _validate_nonlinear(system, sample_points, tolerances)
    raise TypeError(f"unsupported system type {type(system)!r}")


def hamiltonian_quadratic(system: PhLti, x) -> float:
    """Stored energy ``x^T E^T Q x / 2`` of a linear time-invariant system."""
    x = np.asarray(x, dtype=float)
    if x.shape != (system.n,):
        raise StructureError(f"state has shape {x.shape}, expected ({system.n},)")
    return 0.5 * float(x @ (system.E.T @ (system.Q @ x)))


def dissipation_supply(system: PhSystem, t, x, u):
    """Dissipated and supplied power at a state.

    Returns ``(dissipation, supply, output)`` with ``z = Q x`` evaluated for
    the appropriate system class: dissipation ``z^T R z``, output
    ``y = B^T z`` and supply ``y^T u``.
    """
    x = np.asarray(x, dtype=float)
    if isinstance(system, PhLti):
        z = system.Q @ x
        R, B = system.R, system.B
    elif isinstance(system, PhLtv):
        z = system.Q(t) @ x
        R, B = system.R(t), system.B(t)
    elif isinstance(system, PhNonlinearQ):
        z = system.Q(t, x) @ x
        R, B = system.R(t, x), system.B(t, x)
    else:
        raise TypeError(f"unsupported system type {type(system)!r}")
    dissipation = float(z @ (R @ z))
    y = B.T @ z
    supply = float(y @ np.atleast_1d(u)) if B.shape[1] else 0.0
    return dissipation, supply, y


def check_equilibrium_origin(system: PhSystem, time_samples=(0.0,),
                             tol: float = 1e-10) -> bool:
    """True when the origin is an equilibrium of the unforced state equation.

    For the linear classes this always holds.  For the nonlinear class the
    condition reduces to ``r(t, 0) = (J(t,0) - R(t,0)) Q(t,0) 0 = 0`` at the
    sampled times.
    """
    if isinstance(system, (PhLti, PhLtv)):
        return True
    origin = np.zeros(system.n)
    for t in time_samples:
        if np.linalg.norm(system.r_drift(t, origin)) > tol:
            return False
    return True


def lti_as_ltv(sys: PhLti) -> PhLtv:
    """View a time-invariant system through the time-varying interface."""
    zero = np.zeros_like(sys.E)
    return PhLtv(
        E=lambda t: sys.E, J=lambda t: sys.J, R=lambda t: sys.R,
        Q=lambda t: sys.Q, K=lambda t: sys.K, B=lambda t: sys.B,
        d_dt_QtE=lambda t: zero,
    )


# -- CSV interchange ---------------------------------------------------------

def write_matrix_csv(path, mat):
    """Write a dense matrix as CSV with a ``rows,cols`` header line."""
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    lines = [f"{mat.shape[0]},{mat.shape[1]}"]
    for row in mat:
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    """Read a dense matrix written by :func:`write_matrix_csv`."""
    lines = Path(path).read_text().strip().splitlines()
    rows, cols = (int(v) for v in lines[0].split(","))
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    if data.shape != (rows, cols):
        raise ValueError(f"{path}: header says {(rows, cols)}, data is {data.shape}")
    return data


def load_lti_csv(directory) -> PhLti:
    """Assemble a :class:`PhLti` from ``E,J,R,Q,K,B.csv`` in a directory."""
    directory = Path(directory)
    mats = {}
    for name in ("E", "J", "R", "Q", "K", "B"):
        f = directory / f"{name}.csv"
        if not f.exists():
            raise FileNotFoundError(f)
        mats[name] = read_matrix_csv(f)
    return PhLti(**mats)
