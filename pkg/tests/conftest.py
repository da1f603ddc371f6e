import numpy as np
import pytest

from phmor.ansatz import Factorizable, Separable
from phmor.models import WildfireParams, build_wildfire_fom
from phmor.systems import PhLti, PhLtv, PhNonlinearQ


@pytest.fixture
def fix_a():
    """Two-state LTI system: rotation coupling, one lossy channel, one port."""
    return PhLti(
        E=np.eye(2),
        J=np.array([[0.0, 1.0], [-1.0, 0.0]]),
        R=np.diag([1.0, 0.0]),
        Q=np.eye(2),
        K=np.zeros((2, 2)),
        B=np.array([[1.0], [0.0]]),
    )


@pytest.fixture
def fix_s():
    """Unit-circle separable ansatz: one amplitude riding a rotating column."""

    def Vs(p):
        return np.array([[np.cos(p[0])], [np.sin(p[0])]])

    def dVs(p, d):
        return d[0] * np.array([[-np.sin(p[0])], [np.cos(p[0])]])

    return Separable(Vs=Vs, dVs=dVs, r_alpha=1, r_p=1)


def _normalized(rng, n, m=None):
    a = rng.standard_normal((n, m if m is not None else n))
    return a / np.linalg.norm(a, 2)


def make_random_ltv(n=4, m=2, seed=0):
    """Smooth random time-varying system satisfying all structure conditions.

    Built from a smooth SPD product P(t) = Q(t)^T E(t) and the drift
    compensation K(t) = Q(t)^{-T} P'(t) / 2, which satisfies the derivative
    compatibility identically.
    """
    rng = np.random.default_rng(seed)
    P0 = _normalized(rng, n)
    P0 = P0.T @ P0 + 4.0 * np.eye(n)
    P1 = _normalized(rng, n)
    P1 = 0.5 * (P1 + P1.T)
    Q0 = 5.0 * np.eye(n) + _normalized(rng, n)
    Q1 = _normalized(rng, n)
    J0 = _normalized(rng, n)
    J0 = 0.5 * (J0 - J0.T)
    J1 = _normalized(rng, n)
    J1 = 0.5 * (J1 - J1.T)
    C0 = _normalized(rng, n)
    R0 = C0.T @ C0
    B0 = rng.standard_normal((n, m))
    B1 = rng.standard_normal((n, m))

    P = lambda t: P0 + 0.3 * np.sin(t) * P1
    Pdot = lambda t: 0.3 * np.cos(t) * P1
    Q = lambda t: Q0 + 0.2 * np.cos(t) * Q1

    return PhLtv(
        E=lambda t: np.linalg.solve(Q(t).T, P(t)),
        J=lambda t: J0 + np.sin(t) * J1,
        R=lambda t: (1.2 + np.cos(t)) * R0,
        Q=Q,
        K=lambda t: 0.5 * np.linalg.solve(Q(t).T, Pdot(t)),
        B=lambda t: B0 + np.sin(t) * B1,
        d_dt_QtE=Pdot,
    )


@pytest.fixture
def random_ltv():
    return make_random_ltv(seed=0)


def make_quadratic_lti(n=3, m=1, seed=0, lossless=False):
    """Random LTI system with SPD energy product E^T Q (Q chosen SPD)."""
    rng = np.random.default_rng(seed)
    Q = _normalized(rng, n)
    Q = Q.T @ Q + 2.0 * np.eye(n)
    G = _normalized(rng, n)
    P = G.T @ G + 3.0 * np.eye(n)   # target E^T Q
    E = np.linalg.solve(Q.T, P)     # E = Q^{-T} P, so E^T Q = P
    J = _normalized(rng, n)
    J = J - J.T
    if lossless:
        R = np.zeros((n, n))
    else:
        C = _normalized(rng, n)
        R = C.T @ C
    B = rng.standard_normal((n, m))
    return PhLti(E=E, J=J, R=R, Q=Q, K=np.zeros((n, n)), B=B)


def wrap_lti_as_nonlinear(sys: PhLti) -> PhNonlinearQ:
    """Present a constant-coefficient system through the nonlinear interface."""
    n = sys.n
    return PhNonlinearQ(
        n=n,
        E=lambda t, x: sys.E,
        J=lambda t, x: sys.J,
        R=lambda t, x: sys.R,
        Q=lambda t, x: sys.Q,
        r_drift=lambda t, x: np.zeros(n),
        B=lambda t, x: sys.B,
        hamiltonian=lambda t, x: 0.5 * float(
            np.asarray(x) @ (sys.E.T @ (sys.Q @ np.asarray(x)))),
        grad_x_hamiltonian=lambda t, x: sys.E.T @ (sys.Q @ np.asarray(x, dtype=float)),
    )


def make_quadratic_factorizable(n=3, r=2, seed=0):
    """Affine-in-state basis (quadratic lift) over a wrapped linear system."""
    rng = np.random.default_rng(seed)
    V0 = np.linalg.qr(rng.standard_normal((n, r)))[0]
    V1 = 0.1 * rng.standard_normal((n, r))
    W = [0.15 * rng.standard_normal((n, r)) for _ in range(r)]

    def Vr(t, xt):
        out = V0 + t * V1
        for k in range(r):
            out = out + xt[k] * W[k]
        return out

    def dVr_dt(t, xt):
        return V1

    def dVr_dxtilde(t, xt, d):
        out = np.zeros((n, r))
        for k in range(r):
            out = out + d[k] * W[k]
        return out

    return Factorizable(Vr=Vr, dVr_dt=dVr_dt, dVr_dxtilde=dVr_dxtilde, r=r)


@pytest.fixture
def small_wildfire():
    params = WildfireParams(N=15, t_end=4.0)
    sys, x0 = build_wildfire_fom(params)
    return params, sys, x0


def random_wildfire_states(params, count, seed=0, signed=False):
    rng = np.random.default_rng(seed)
    n = params.n_points
    states = []
    for _ in range(count):
        t_part = rng.uniform(0.0, 5.0, n) if not signed else rng.uniform(-3.0, 5.0, n)
        s_part = rng.uniform(0.0, 1.0, n)
        states.append(np.concatenate([t_part, s_part]))
    return states
