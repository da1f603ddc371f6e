"""Full-order benchmark models.

* :func:`build_ade_fom` -- linear advection--diffusion equation on (0, 1)
  with an inflow Robin condition and an outflow Neumann condition
  (Danckwerts boundary conditions), discretized by piecewise-linear finite
  elements on an equidistant mesh.  The result is a linear time-invariant
  port-Hamiltonian system with symmetric positive definite mass matrix.
* :func:`build_wildfire_fom` -- coupled temperature/supply-mass-fraction
  reaction--diffusion system for a spreading combustion front, discretized
  by central finite differences with periodic boundary conditions and
  assembled in dissipative-Hamiltonian form (no external ports).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np

from .systems import PhLti, PhNonlinearQ

__all__ = [
    "AdeParams",
    "WildfireParams",
    "ade_boundary_signal",
    "ade_initial_profile",
    "build_ade_fom",
    "build_wildfire_fom",
    "wildfire_direct_rhs",
    "wildfire_rhs_jacobian",
    "wildfire_rhs_equivalence_check",
]


def ade_boundary_signal(t: float) -> float:
    """Compactly supported inflow bump active on (0.175, 0.275)."""
    s = 20.0 * (t - 0.225)
    if abs(s) >= 1.0:
        return 0.0
    return 0.5 * math.exp(1.0 - 1.0 / (1.0 - s * s))


def ade_initial_profile(xi: float) -> float:
    """Compactly supported initial bump on (0.45, 0.55)."""
    s = 20.0 * (xi - 0.5)
    if abs(s) >= 1.0:
        return 0.0
    return math.exp(1.0 - 1.0 / (1.0 - s * s))


@dataclass(frozen=True)
class AdeParams:
    """Parameters of the advection--diffusion benchmark.

    The interval (0, 1) is split into ``N + 1`` equidistant elements, giving
    ``n = N + 2`` nodal unknowns.
    """

    c: float = 1.0
    d: float = 1e-3
    N: int = 999
    t_end: float = 1.2
    g: Callable[[float], float] = ade_boundary_signal
    x0: Callable[[float], float] = ade_initial_profile

    def __post_init__(self):
        if self.c <= 0 or self.d <= 0:
            raise ValueError("advection speed and diffusion must be positive")
        if self.N < 2:
            raise ValueError("need at least two interior intervals")
        if self.t_end <= 0:
            raise ValueError("final time must be positive")

    @property
    def h(self) -> float:
        return 1.0 / (self.N + 1)

    @property
    def n(self) -> int:
        return self.N + 2

    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)


def build_ade_fom(p: AdeParams) -> Tuple[PhLti, np.ndarray, Callable[[float], np.ndarray]]:
    """Assemble the finite element system, initial state and input signal.

    Returns ``(system, x_init, input)`` where the system matrices are the
    piecewise-linear mass matrix, the skew advection matrix and the
    diffusion stiffness matrix augmented by the boundary contributions;
    the single input port feeds the inflow node.
    """
    n, h, c, d = p.n, p.h, p.c, p.d
    main = np.full(n, 4.0)
    main[0] = main[-1] = 2.0
    E = (h / 6.0) * (np.diag(main) + np.diag(np.ones(n - 1), 1)
                     + np.diag(np.ones(n - 1), -1))
    J = (c / 2.0) * (np.diag(np.ones(n - 1), -1) - np.diag(np.ones(n - 1), 1))
    stiff_main = np.full(n, 2.0)
    stiff_main[0] = stiff_main[-1] = 1.0
    R = (d / h) * (np.diag(stiff_main) - np.diag(np.ones(n - 1), 1)
                   - np.diag(np.ones(n - 1), -1))
    R[0, 0] += c / 2.0
    R[-1, -1] += c / 2.0
    B = np.zeros((n, 1))
    B[0, 0] = c
    sys = PhLti(E=E, J=J, R=R, Q=np.eye(n), K=np.zeros((n, n)), B=B)
    x_init = np.array([p.x0(xi) for xi in p.nodes()])
    signal = p.g
    return sys, x_init, lambda t: np.array([signal(t)])


def _default_temperature(xi: float) -> float:
    # single central ignition spot; the outward fronts form the two waves
    return 6.0 * math.exp(-((xi - 50.0) / 2.5) ** 2)


def _default_supply(xi: float) -> float:
    return 1.0


@dataclass(frozen=True)
class WildfireParams:
    """Parameters of the wildland fire benchmark.

    The physical constants are configuration, not reference values: the
    defaults are chosen so that a desk-scale run develops two traveling
    combustion waves from a single central ignition spot.  The derived
    constant ``eta = alpha / (4 gamma zeta)`` weights the supply block in
    the energy.
    """

    k: float = 0.5
    alpha: float = 2.0
    beta: float = 1.0
    gamma: float = 0.1
    zeta: float = 0.5
    w: float = 0.0
    N: int = 127
    domain: Tuple[float, float] = (0.0, 100.0)
    t_end: float = 60.0
    T0: Callable[[float], float] = _default_temperature
    S0: Callable[[float], float] = _default_supply

    def __post_init__(self):
        for name in ("k", "alpha", "beta", "gamma", "zeta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.domain[1] <= self.domain[0]:
            raise ValueError("empty spatial domain")
        if self.N < 3:
            raise ValueError("need at least four grid points")

    @property
    def eta(self) -> float:
        return self.alpha / (4.0 * self.gamma * self.zeta)

    @property
    def h(self) -> float:
        return (self.domain[1] - self.domain[0]) / (self.N + 1)

    @property
    def n_points(self) -> int:
        return self.N + 1

    def nodes(self) -> np.ndarray:
        a = self.domain[0]
        return a + self.h * np.arange(1, self.N + 2)


def _difference_matrices(p: WildfireParams):
    n, h = p.n_points, p.h
    D1 = np.zeros((n, n))
    D2 = np.zeros((n, n))
    idx = np.arange(n)
    D1[idx, (idx + 1) % n] = 1.0 / (2.0 * h)
    D1[idx, (idx - 1) % n] = -1.0 / (2.0 * h)
    D2[idx, idx] = -2.0 / h ** 2
    D2[idx, (idx + 1) % n] = 1.0 / h ** 2
    D2[idx, (idx - 1) % n] = 1.0 / h ** 2
    return D1, D2


def _reaction(temps: np.ndarray, beta: float) -> np.ndarray:
    """Arrhenius-type factor exp(-beta/T) with a hard zero for T <= 0."""
    out = np.zeros_like(temps)
    mask = temps > 0
    out[mask] = np.exp(-beta / temps[mask])
    return out


def _reaction_derivative(temps: np.ndarray, beta: float) -> np.ndarray:
    out = np.zeros_like(temps)
    # below beta/700 the exponential underflows and the product vanishes
    mask = temps > beta / 700.0
    tm = temps[mask]
    out[mask] = np.exp(-beta / tm) * beta / tm ** 2
    return out


def build_wildfire_fom(p: WildfireParams) -> Tuple[PhNonlinearQ, np.ndarray]:
    """Assemble the wildfire system in dissipative-Hamiltonian form.

    The state stacks temperature and supply values, ``x = [x1; x2]``.  The
    interconnection splits into the constant wind transport and a
    reaction coupling block; the dissipation splits into diffusion/cooling
    and a reaction block that is pointwise positive semidefinite by a
    completed-square argument.  The energy weight is
    ``Q = diag(I, eta I)`` and the Hamiltonian ``x^T Q x / 2``; the system
    has no external ports.
    """
    D1, D2 = _difference_matrices(p)
    n = p.n_points
    eta = p.eta
    alpha, beta, gamma, zeta, k, w = p.alpha, p.beta, p.gamma, p.zeta, p.k, p.w
    J1 = np.zeros((2 * n, 2 * n))
    J1[:n, :n] = -w * D1
    R1 = np.zeros((2 * n, 2 * n))
    R1[:n, :n] = -k * D2
    Q = np.eye(2 * n)
    Q[n:, n:] *= eta
    coup = alpha / (2.0 * eta)

    def J(t, x):
        v = _reaction(np.asarray(x)[:n], beta)
        out = J1.copy()
        out[:n, n:] = np.diag(coup * v)
        out[n:, :n] = -np.diag(coup * v)
        return out

    def R(t, x):
        v = _reaction(np.asarray(x)[:n], beta)
        out = R1.copy()
        out[:n, :n] += alpha * gamma * np.eye(n)
        out[:n, n:] = -np.diag(coup * v)
        out[n:, :n] = -np.diag(coup * v)
        out[n:, n:] = np.diag((zeta / eta) * v)
        return out

    identity = np.eye(2 * n)
    no_ports = np.zeros((2 * n, 0))

    sys = PhNonlinearQ(
        n=2 * n,
        E=lambda t, x: identity,
        J=J,
        R=R,
        Q=lambda t, x: Q,
        r_drift=lambda t, x: np.zeros(2 * n),
        B=lambda t, x: no_ports,
        hamiltonian=lambda t, x: 0.5 * float(np.asarray(x) @ (Q @ np.asarray(x))),
        grad_x_hamiltonian=lambda t, x: Q @ np.asarray(x, dtype=float),
    )
    nodes = p.nodes()
    x_init = np.concatenate([[p.T0(xi) for xi in nodes],
                             [p.S0(xi) for xi in nodes]]).astype(float)
    return sys, x_init


def wildfire_direct_rhs(p: WildfireParams) -> Callable[[np.ndarray], np.ndarray]:
    """Right-hand side of the semi-discrete equations in their plain form.

    Kept separate from the dissipative-Hamiltonian assembly so that the two
    forms can be compared against each other.
    """
    D1, D2 = _difference_matrices(p)
    n = p.n_points
    A = p.k * D2 - p.w * D1 - p.alpha * p.gamma * np.eye(n)

    def rhs(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[:n], x[n:]
        v = _reaction(x1, p.beta)
        return np.concatenate([A @ x1 + p.alpha * v * x2, -p.zeta * v * x2])

    return rhs


def wildfire_rhs_jacobian(p: WildfireParams):
    """Jacobian of :func:`wildfire_direct_rhs` (for the Newton corrector)."""
    D1, D2 = _difference_matrices(p)
    n = p.n_points
    A = p.k * D2 - p.w * D1 - p.alpha * p.gamma * np.eye(n)

    def jac(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[:n], x[n:]
        v = _reaction(x1, p.beta)
        dv = _reaction_derivative(x1, p.beta)
        out = np.zeros((2 * n, 2 * n))
        out[:n, :n] = A + p.alpha * np.diag(x2 * dv)
        out[:n, n:] = p.alpha * np.diag(v)
        out[n:, :n] = -p.zeta * np.diag(x2 * dv)
        out[n:, n:] = -p.zeta * np.diag(v)
        return out

    return jac


def wildfire_rhs_equivalence_check(p: WildfireParams, samples) -> float:
    """Largest relative deviation between the plain and Hamiltonian forms.

    ``samples`` is an iterable of full states.  Both right-hand sides are
    assembled independently; agreement certifies the splitting into
    interconnection and dissipation blocks.
    """
    sys, _ = build_wildfire_fom(p)
    direct = wildfire_direct_rhs(p)
    worst = 0.0
    for x in samples:
        x = np.asarray(x, dtype=float)
        a = direct(x)
        b = sys.rhs(0.0, x)
        worst = max(worst, float(np.linalg.norm(a - b) / (1.0 + np.linalg.norm(a))))
    return worst
