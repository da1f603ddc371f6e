import numpy as np
import pytest

from phmor.ansatz import LinearTI, LinearTV, Separable, eval_vhat, split_state
from phmor.reduction import (
    RankError,
    coefficient_snapshot,
    project_initial_lti,
    reduce_factorizable,
    reduce_galerkin_baseline,
    reduce_lti,
    reduce_ltv,
    reduce_separable_ltv,
    reduce_separable_nonlinear,
    rom_from_system,
    verify_optimality,
)
from phmor.systems import PhLti, lti_as_ltv, validate
from conftest import (
    make_quadratic_factorizable,
    make_quadratic_lti,
    make_random_ltv,
    random_wildfire_states,
    wrap_lti_as_nonlinear,
)


def fd_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def assert_structure(rom, probes, skew_tol=1e-10, psd_tol=1e-8, grad_tol=1e-5):
    """Skewness, semidefiniteness and the Hamiltonian identities at probes."""
    for t, xt in probes:
        J = rom.J(t, xt)
        assert np.linalg.norm(J + J.T) <= skew_tol * (1 + np.linalg.norm(J))
        R = rom.R(t, xt)
        w = np.linalg.eigvalsh(0.5 * (R + R.T))
        assert w.min() >= -psd_tol * (1 + np.linalg.norm(R))
        target = rom.E(t, xt).T @ (rom.Q(t, xt) @ xt)
        grad = fd_gradient(lambda z: rom.hamiltonian(t, z), xt)
        assert np.linalg.norm(grad - target) <= grad_tol * (1 + np.linalg.norm(target))
        ht = 1e-6 * (1 + abs(t))
        dH = (rom.hamiltonian(t + ht, xt) - rom.hamiltonian(t - ht, xt)) / (2 * ht)
        target_t = float(rom.r_drift(t, xt) @ (rom.Q(t, xt) @ xt))
        assert abs(dH - target_t) <= grad_tol * (1 + abs(target_t))


class TestReduceLti:
    def test_two_state_fixture(self, fix_a):
        Vr = np.array([[1.0], [0.0]])
        rom = reduce_lti(fix_a, Vr)
        # oracle: dense products assembled by hand
        assert rom.E(0, np.zeros(1)) == pytest.approx(np.array([[1.0]]))
        assert rom.J(0, np.zeros(1)) == pytest.approx(np.array([[0.0]]))
        assert rom.R(0, np.zeros(1)) == pytest.approx(np.array([[1.0]]))
        assert rom.B(0, np.zeros(1)) == pytest.approx(np.array([[1.0]]))
        assert rom.hamiltonian(0.0, np.array([2.0])) == pytest.approx(2.0)

    def test_identity_basis_reproduces_dynamics(self):
        sys = make_quadratic_lti(n=4, seed=2)
        rom = reduce_lti(sys, np.eye(4))
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = rng.standard_normal(4)
            u = rng.standard_normal(1)
            full = np.linalg.solve(sys.E, sys.rhs_matrix() @ x + sys.B @ u)
            red = np.linalg.solve(rom.E(0, x), rom.rhs(0.0, x, u))
            assert np.allclose(full, red, atol=1e-10 * (1 + np.linalg.norm(full)))

    def test_identity_weight_is_galerkin(self):
        sys = make_quadratic_lti(n=5, seed=3)
        sys = PhLti(E=sys.E, J=sys.J, R=sys.R, Q=np.eye(5),
                    K=np.zeros((5, 5)), B=sys.B)
        Vr = np.linalg.qr(np.random.default_rng(1).standard_normal((5, 2)))[0]
        rom = reduce_lti(sys, Vr)
        assert np.allclose(rom.E(0, np.zeros(2)), Vr.T @ sys.E @ Vr)
        assert np.allclose(rom.J(0, np.zeros(2)), Vr.T @ sys.J @ Vr)

    def test_rank_deficient_basis_rejected(self, fix_a):
        with pytest.raises(RankError):
            reduce_lti(fix_a, np.array([[1.0, 2.0], [0.0, 0.0]]))

    def test_near_singular_weight_warns(self, fix_a):
        bad = PhLti(E=np.diag([1.0, 1e-15]), J=fix_a.J, R=np.zeros((2, 2)),
                    Q=np.eye(2), K=fix_a.K, B=fix_a.B)
        with pytest.warns(RuntimeWarning):
            reduce_lti(bad, np.array([[1.0], [0.0]]))

    def test_structure_probes(self, fix_a):
        rom = reduce_lti(fix_a, np.array([[1.0], [0.5]]))
        rng = np.random.default_rng(4)
        assert_structure(rom, [(rng.uniform(0, 2), rng.standard_normal(1))
                               for _ in range(10)])


class TestReduceLtv:
    @staticmethod
    def constant_basis(Vr):
        return LinearTV(Vr=lambda t: Vr, dVr_dt=lambda t: np.zeros_like(Vr))

    def test_constant_basis_matches_lti(self, fix_a):
        Vr = np.array([[1.0], [0.4]])
        rom_ti = reduce_lti(fix_a, Vr)
        rom_tv = reduce_ltv(lti_as_ltv(fix_a), self.constant_basis(Vr))
        xt = np.array([0.7])
        for f in ("E", "J", "R", "B"):
            assert np.allclose(getattr(rom_tv, f)(1.3, xt),
                               getattr(rom_ti, f)(1.3, xt), atol=1e-12)
        assert np.allclose(rom_tv.r_drift(1.3, xt), 0.0)

    def test_energy_rate_compatibility(self):
        # d/dt of the reduced energy product equals the symmetrized drift map
        sys = make_random_ltv(seed=5)
        rng = np.random.default_rng(5)
        W = rng.standard_normal((4, 2))

        def Vr(t):
            return W + 0.2 * np.sin(t) * np.ones((4, 2))

        def dVr(t):
            return 0.2 * np.cos(t) * np.ones((4, 2))

        rom = reduce_ltv(sys, LinearTV(Vr=Vr, dVr_dt=dVr))
        for t in (0.2, 0.9, 1.7):
            ht = 1e-5
            dE = (rom.E(t + ht, np.zeros(2)) - rom.E(t - ht, np.zeros(2))) / (2 * ht)
            # recover the drift matrix from its action on basis vectors
            Kt = np.column_stack([rom.r_drift(t, e) for e in np.eye(2)])
            assert np.linalg.norm(dE - (Kt + Kt.T)) <= 1e-6 * (1 + np.linalg.norm(dE))

    def test_skewness_preserved(self):
        sys = make_random_ltv(seed=6)
        rng = np.random.default_rng(6)
        W = rng.standard_normal((4, 2))
        rom = reduce_ltv(sys, self.constant_basis(W))
        for t in rng.uniform(0, 3, 10):
            J = rom.J(t, np.zeros(2))
            assert np.linalg.norm(J + J.T) <= 1e-12 * (1 + np.linalg.norm(J))

    def test_structure_probes(self):
        sys = make_random_ltv(seed=7)
        rng = np.random.default_rng(7)
        W = rng.standard_normal((4, 2))

        def Vr(t):
            return W + 0.1 * np.cos(t) * np.outer(np.arange(4.0), [1.0, -1.0])

        def dVr(t):
            return -0.1 * np.sin(t) * np.outer(np.arange(4.0), [1.0, -1.0])

        rom = reduce_ltv(sys, LinearTV(Vr=Vr, dVr_dt=dVr))
        assert_structure(rom, [(rng.uniform(0, 2), rng.standard_normal(2))
                               for _ in range(10)])


class TestReduceFactorizable:
    def test_state_independent_matches_ltv(self):
        lti = make_quadratic_lti(n=3, seed=8)
        nsys = wrap_lti_as_nonlinear(lti)
        rng = np.random.default_rng(8)
        W = rng.standard_normal((3, 2))
        from phmor.ansatz import Factorizable

        a = Factorizable(Vr=lambda t, xt: W, dVr_dt=lambda t, xt: 0.0 * W,
                         dVr_dxtilde=lambda t, xt, d: 0.0 * W, r=2)
        rom_f = reduce_factorizable(nsys, a)
        rom_l = reduce_ltv(lti_as_ltv(lti),
                           LinearTV(Vr=lambda t: W,
                                    dVr_dt=lambda t: np.zeros_like(W)))
        xt = rng.standard_normal(2)
        for f in ("E", "J", "R", "B"):
            assert np.allclose(getattr(rom_f, f)(0.4, xt),
                               getattr(rom_l, f)(0.4, xt), atol=1e-12)

    def test_origin_mass_invertible(self):
        lti = make_quadratic_lti(n=3, seed=9)
        nsys = wrap_lti_as_nonlinear(lti)
        a = make_quadratic_factorizable(n=3, r=2, seed=9)
        rom = reduce_factorizable(nsys, a)
        E0 = rom.E(0.3, np.zeros(2))
        V = a.Vr(0.3, np.zeros(2))
        assert np.allclose(E0, V.T @ lti.Q.T @ lti.E @ V, atol=1e-12)
        assert np.linalg.cond(E0) < 1e6

    def test_gradient_identity(self):
        lti = make_quadratic_lti(n=3, seed=10)
        nsys = wrap_lti_as_nonlinear(lti)
        a = make_quadratic_factorizable(n=3, r=2, seed=10)
        rom = reduce_factorizable(nsys, a)
        rng = np.random.default_rng(10)
        for _ in range(20):
            t = rng.uniform(0, 2)
            xt = rng.uniform(-0.8, 0.8, 2)
            target = rom.E(t, xt).T @ xt
            grad = fd_gradient(lambda z: rom.hamiltonian(t, z), xt)
            assert np.linalg.norm(grad - target) <= 1e-6 * (1 + np.linalg.norm(target))

    def test_structure_probes(self):
        lti = make_quadratic_lti(n=3, seed=11)
        nsys = wrap_lti_as_nonlinear(lti)
        a = make_quadratic_factorizable(n=3, r=2, seed=11)
        rom = reduce_factorizable(nsys, a)
        rng = np.random.default_rng(11)
        assert_structure(rom, [(rng.uniform(0, 2), rng.uniform(-0.8, 0.8, 2))
                               for _ in range(10)])


class TestReduceSeparableLtv:
    def test_rotation_mass_matrix(self, fix_s):
        sys = lti_as_ltv(PhLti(E=np.eye(2), J=np.zeros((2, 2)),
                               R=np.zeros((2, 2)), Q=np.eye(2),
                               K=np.zeros((2, 2)), B=np.zeros((2, 1))))
        rom = reduce_separable_ltv(sys, fix_s)
        for alpha, p in ((1.3, 0.4), (-0.6, 2.2)):
            E = rom.E(0.0, np.array([alpha, p]))
            # rotation identity makes the off-diagonal coupling vanish
            assert np.allclose(E, np.diag([1.0, alpha ** 2]), atol=1e-12)
        assert np.linalg.matrix_rank(rom.E(0.0, np.array([0.0, 0.7]))) == 1

    def test_zero_system_propagates(self, fix_s):
        zero = lti_as_ltv(PhLti(E=np.eye(2), J=np.zeros((2, 2)),
                                R=np.zeros((2, 2)), Q=np.eye(2),
                                K=np.zeros((2, 2)), B=np.zeros((2, 1))))
        rom = reduce_separable_ltv(zero, fix_s)
        xt = np.array([0.8, 1.1])
        assert np.allclose(rom.J(0, xt), 0.0)
        assert np.allclose(rom.R(0, xt), 0.0)
        assert np.allclose(rom.r_drift(0, xt), 0.0)
        assert np.allclose(rom.B(0, xt), 0.0)

    def test_block_energy_weight(self, fix_s):
        sys = lti_as_ltv(make_quadratic_lti(n=2, seed=12))
        rom = reduce_separable_ltv(sys, fix_s)
        Q = rom.Q(0.0, np.array([1.0, 0.0]))
        assert np.allclose(Q, np.diag([1.0, 0.0]))

    def test_structure_probes(self, fix_s):
        sys = lti_as_ltv(make_quadratic_lti(n=2, seed=13))
        rom = reduce_separable_ltv(sys, fix_s)
        rng = np.random.default_rng(13)
        probes = [(rng.uniform(0, 2),
                   np.array([rng.uniform(0.2, 2.0), rng.uniform(-3, 3)]))
                  for _ in range(10)]
        assert_structure(rom, probes)


class TestReduceSeparableNonlinear:
    def test_specializes_to_linear(self, fix_s):
        lti = make_quadratic_lti(n=2, seed=14)
        rom_l = reduce_separable_ltv(lti_as_ltv(lti), fix_s)
        rom_n = reduce_separable_nonlinear(wrap_lti_as_nonlinear(lti), fix_s)
        rng = np.random.default_rng(14)
        for _ in range(10):
            xt = np.array([rng.uniform(0.3, 1.5), rng.uniform(-3, 3)])
            for f in ("E", "J", "R", "B"):
                assert np.allclose(getattr(rom_n, f)(0.7, xt),
                                   getattr(rom_l, f)(0.7, xt), atol=1e-12)
            assert np.allclose(rom_n.r_drift(0.7, xt), rom_l.r_drift(0.7, xt),
                               atol=1e-12)

    def test_wildfire_structure(self, small_wildfire):
        params, sys, _ = small_wildfire
        ansatz = _wildfire_ansatz(params)
        rom = reduce_separable_nonlinear(sys, ansatz)
        rng = np.random.default_rng(15)
        for _ in range(100):
            t = rng.uniform(0, params.t_end)
            xt = np.concatenate([rng.uniform(-1, 1, 2),
                                 rng.uniform(0, params.domain[1], 2)])
            J = rom.J(t, xt)
            assert np.linalg.norm(J + J.T) <= 1e-10 * (1 + np.linalg.norm(J))
            R = rom.R(t, xt)
            w = np.linalg.eigvalsh(0.5 * (R + R.T))
            assert w.min() >= -1e-8 * (1 + np.linalg.norm(R))

    def test_zero_amplitude_drift_vanishes(self, small_wildfire):
        params, sys, _ = small_wildfire
        rom = reduce_separable_nonlinear(sys, _wildfire_ansatz(params))
        xt = np.array([0.0, 0.0, 3.0, 7.0])
        assert np.allclose(rom.r_drift(1.0, xt), 0.0)


class TestGalerkinBaseline:
    def test_identity_weight_matches_structure_preserving(self, fix_s):
        lti = make_quadratic_lti(n=2, seed=16)
        lti = PhLti(E=lti.E, J=lti.J, R=lti.R, Q=np.eye(2),
                    K=np.zeros((2, 2)), B=lti.B)
        nsys = wrap_lti_as_nonlinear(lti)
        rom_sp = reduce_separable_nonlinear(nsys, fix_s)
        rom_b = reduce_galerkin_baseline(nsys, fix_s)
        rng = np.random.default_rng(16)
        for _ in range(10):
            xt = np.array([rng.uniform(0.3, 1.5), rng.uniform(-3, 3)])
            for f in ("E", "J", "R", "B"):
                assert np.allclose(getattr(rom_b, f)(0.2, xt),
                                   getattr(rom_sp, f)(0.2, xt), atol=1e-12)
        assert not rom_b.structure_preserving

    def test_wildfire_structure_loss(self, small_wildfire):
        params, sys, _ = small_wildfire
        rom = reduce_galerkin_baseline(sys, _wildfire_ansatz(params))
        rng = np.random.default_rng(17)
        worst = 0.0
        for _ in range(20):
            t = rng.uniform(0, params.t_end)
            xt = np.concatenate([rng.uniform(0.5, 1.5, 2),
                                 rng.uniform(0, params.domain[1], 2)])
            J = rom.J(t, xt)
            worst = max(worst, np.linalg.norm(J + J.T) / (1 + np.linalg.norm(J)))
        assert worst > 1e-6

    def test_zero_amplitude_mass_singular(self, small_wildfire):
        params, sys, _ = small_wildfire
        rom = reduce_galerkin_baseline(sys, _wildfire_ansatz(params))
        E = rom.E(0.0, np.array([0.0, 0.0, 1.0, 2.0]))
        assert np.linalg.matrix_rank(E) < 4


def _wildfire_ansatz(params):
    from phmor.ansatz import ModeSet, PeriodicShift, build_separable_from_shifts

    nodes = params.nodes()
    shift = PeriodicShift(nodes)
    L = params.domain[1] - params.domain[0]
    xi = (nodes - nodes[0]) / L
    modes = np.column_stack([
        np.concatenate([np.exp(np.sin(2 * np.pi * xi)),
                        0.5 + 0.3 * np.cos(2 * np.pi * xi)]),
        np.concatenate([1.0 + 0.5 * np.sin(4 * np.pi * xi),
                        np.exp(-np.cos(2 * np.pi * xi))]),
    ])
    return build_separable_from_shifts(shift, ModeSet(modes, n_blocks=2),
                                       "per-mode")


class TestOptimality:
    def test_constant_basis(self, fix_a):
        rng = np.random.default_rng(18)
        Vr = np.linalg.qr(rng.standard_normal((2, 1)))[0]
        rom = reduce_lti(fix_a, Vr)
        ts = rng.uniform(0, 1, 50)
        xts = [rng.standard_normal(1) for _ in range(50)]
        us = [rng.standard_normal(1) for _ in range(50)]
        report = verify_optimality(rom, fix_a, ts, xts, us)
        assert report.probe_count == 50
        assert report.degenerate_count == 0
        assert report.max_rel_deviation <= 1e-10

    def test_time_varying_basis(self):
        sys = make_random_ltv(seed=19)
        rng = np.random.default_rng(19)
        W = rng.standard_normal((4, 2))

        def Vr(t):
            return W + 0.2 * np.sin(t) * np.ones((4, 2))

        def dVr(t):
            return 0.2 * np.cos(t) * np.ones((4, 2))

        rom = reduce_ltv(sys, LinearTV(Vr=Vr, dVr_dt=dVr))
        ts = rng.uniform(0, 2, 50)
        xts = [rng.standard_normal(2) for _ in range(50)]
        us = [rng.standard_normal(2) for _ in range(50)]
        report = verify_optimality(rom, sys, ts, xts, us)
        assert report.max_rel_deviation <= 1e-8

    def test_separable(self, fix_s):
        sys = lti_as_ltv(make_quadratic_lti(n=2, seed=20))
        rom = reduce_separable_ltv(sys, fix_s)
        rng = np.random.default_rng(20)
        ts = rng.uniform(0, 2, 50)
        xts = [np.array([rng.uniform(0.3, 2.0) * rng.choice([-1, 1]),
                         rng.uniform(-3, 3)]) for _ in range(50)]
        us = [rng.standard_normal(1) for _ in range(50)]
        report = verify_optimality(rom, sys, ts, xts, us)
        assert report.degenerate_count == 0
        assert report.max_rel_deviation <= 1e-8

    def test_zero_amplitude_probe_degenerate(self, fix_s):
        sys = lti_as_ltv(make_quadratic_lti(n=2, seed=21))
        rom = reduce_separable_ltv(sys, fix_s)
        report = verify_optimality(rom, sys, 0.3, np.array([0.0, 1.0]),
                                   np.array([0.2]))
        assert report.degenerate_count == 1
        assert report.deviations == [None]


def test_rom_from_system_wraps_full_order(fix_a):
    rom = rom_from_system(fix_a)
    x = np.array([0.3, -0.8])
    assert rom.hamiltonian(0.0, x) == pytest.approx(fix_a.hamiltonian(x))
    assert np.allclose(rom.residual(0.0, x, x, np.array([1.0])),
                       fix_a.residual(0.0, x, x, np.array([1.0])))


def test_project_initial_state(fix_a):
    Vr = np.array([[1.0], [0.0]])
    x0 = np.array([0.7, 0.9])
    xt0 = project_initial_lti(fix_a, Vr, x0)
    assert xt0 == pytest.approx([0.7])


def test_coefficient_snapshot_roundtrips_to_json(fix_a):
    import json

    rom = reduce_lti(fix_a, np.array([[1.0], [0.0]]))
    snap = coefficient_snapshot(rom, 0.0, np.array([1.0]))
    payload = json.loads(json.dumps(snap))
    assert payload["E"] == [[1.0]]
    assert payload["structure_preserving"] is True
