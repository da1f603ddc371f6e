import json

import numpy as np
import pytest

from phmor.systems import (
    PhLti,
    PhNonlinearQ,
    StructureError,
    check_equilibrium_origin,
    dissipation_supply,
    hamiltonian_quadratic,
    lti_as_ltv,
    load_lti_csv,
    read_matrix_csv,
    validate,
    write_matrix_csv,
)
from conftest import make_random_ltv, make_quadratic_lti, wrap_lti_as_nonlinear


def test_validate_passes_on_plain_system(fix_a):
    report = validate(fix_a)
    assert report.passed
    names = {c.name for c in report.checks}
    assert {"J_skew", "R_sym", "R_psd", "EtQ_sym", "EtQ_psd", "QtK_skew"} == names
    # oracle: evaluate every condition directly on the dense matrices
    assert np.max(np.abs(fix_a.J + fix_a.J.T)) == 0.0
    assert np.linalg.eigvalsh(fix_a.R).min() >= 0.0
    EtQ = fix_a.E.T @ fix_a.Q
    assert np.max(np.abs(EtQ - EtQ.T)) == 0.0
    assert np.linalg.eigvalsh(0.5 * (EtQ + EtQ.T)).min() >= 0.0


def test_validate_flags_indefinite_dissipation(fix_a):
    bad = PhLti(E=fix_a.E, J=fix_a.J, R=np.diag([1.0, -1.0]), Q=fix_a.Q,
                K=fix_a.K, B=fix_a.B)
    report = validate(bad)
    assert not report.passed
    assert report["R_psd"].violation == pytest.approx(1.0)
    assert not report["R_psd"].passed


def test_validate_wildfire_at_positive_temperatures(small_wildfire):
    from conftest import random_wildfire_states

    params, sys, _ = small_wildfire
    points = [(0.5 * j, x) for j, x in
              enumerate(random_wildfire_states(params, 10, seed=3))]
    report = validate(sys, points)
    assert report.passed
    # eigenvalue oracle on the assembled blocks at one probe
    t, x = points[0]
    assert np.max(np.abs(sys.J(t, x) + sys.J(t, x).T)) < 1e-12
    assert np.linalg.eigvalsh(sys.R(t, x)).min() >= -1e-12


def test_validate_is_pure(fix_a):
    r1 = validate(fix_a)
    r2 = validate(fix_a)
    assert r1.as_dict() == r2.as_dict()


def test_validate_dimension_mismatch_names_field(fix_a):
    with pytest.raises(StructureError, match="B"):
        PhLti(E=fix_a.E, J=fix_a.J, R=fix_a.R, Q=fix_a.Q, K=fix_a.K,
              B=np.ones((3, 1)))


def test_validate_ltv_fixture():
    sys = make_random_ltv(seed=1)
    report = validate(sys, [0.0, 0.4, 1.3, 2.5])
    assert report.passed, report.as_dict()


def test_validate_ltv_flags_wrong_derivative():
    sys = make_random_ltv(seed=1)
    broken = type(sys)(E=sys.E, J=sys.J, R=sys.R, Q=sys.Q, K=sys.K, B=sys.B,
                       d_dt_QtE=lambda t: sys.d_dt_QtE(t) + 0.1 * np.eye(4))
    report = validate(broken, [0.3, 1.1])
    assert not report["dQtE_vs_fd"].passed


def test_hamiltonian_quadratic_values():
    sys = PhLti(E=np.eye(2), J=np.zeros((2, 2)), R=np.zeros((2, 2)),
                Q=np.eye(2), K=np.zeros((2, 2)), B=np.zeros((2, 1)))
    assert hamiltonian_quadratic(sys, np.array([1.0, 2.0])) == pytest.approx(2.5)
    assert hamiltonian_quadratic(sys, np.zeros(2)) == 0.0
    sys2 = PhLti(E=np.diag([2.0, 1.0]), J=np.zeros((2, 2)), R=np.zeros((2, 2)),
                 Q=np.eye(2), K=np.zeros((2, 2)), B=np.zeros((2, 1)))
    # oracle: direct product x^T E^T Q x / 2
    x = np.array([1.0, 1.0])
    assert hamiltonian_quadratic(sys2, x) == pytest.approx(
        0.5 * x @ (sys2.E.T @ (sys2.Q @ x))) == pytest.approx(1.5)


def test_hamiltonian_nonnegative_when_valid():
    sys = make_quadratic_lti(seed=4)
    rng = np.random.default_rng(0)
    assert validate(sys).passed
    for _ in range(50):
        assert hamiltonian_quadratic(sys, rng.standard_normal(sys.n)) >= 0.0


def test_dissipation_supply(fix_a):
    d, s, y = dissipation_supply(fix_a, 0.0, np.array([0.3, -0.7]), np.zeros(1))
    assert s == 0.0
    lossless = PhLti(E=fix_a.E, J=fix_a.J, R=np.zeros((2, 2)), Q=fix_a.Q,
                     K=fix_a.K, B=fix_a.B)
    d, s, y = dissipation_supply(lossless, 0.0, np.array([1.0, 2.0]),
                                 np.array([3.0]))
    assert d == 0.0
    d, s, y = dissipation_supply(fix_a, 0.0, np.array([1.0, 0.0]), np.array([1.0]))
    assert d == pytest.approx(1.0)
    assert s == pytest.approx(1.0)
    assert y == pytest.approx([1.0])


def test_equilibrium_origin(fix_a, small_wildfire):
    assert check_equilibrium_origin(fix_a)
    params, sys, _ = small_wildfire
    assert check_equilibrium_origin(sys, (0.0, params.t_end / 2, params.t_end))
    n = 2
    offset = PhNonlinearQ(
        n=n,
        E=lambda t, x: np.eye(n), J=lambda t, x: np.zeros((n, n)),
        R=lambda t, x: np.zeros((n, n)), Q=lambda t, x: np.eye(n),
        r_drift=lambda t, x: np.array([1.0, 0.0]),
        B=lambda t, x: np.zeros((n, 0)),
        hamiltonian=lambda t, x: 0.5 * float(np.dot(x, x)),
    )
    assert not check_equilibrium_origin(offset)


def test_gradient_check_by_finite_differences():
    sys = make_quadratic_lti(seed=7)
    wrapped = wrap_lti_as_nonlinear(sys)
    # drop the analytic gradient so validation falls back to differences
    nograd = type(wrapped)(
        n=wrapped.n, E=wrapped.E, J=wrapped.J, R=wrapped.R, Q=wrapped.Q,
        r_drift=wrapped.r_drift, B=wrapped.B, hamiltonian=wrapped.hamiltonian)
    rng = np.random.default_rng(11)
    points = [(rng.uniform(0, 2), rng.standard_normal(sys.n)) for _ in range(100)]
    report = validate(nograd, points)
    assert report["grad_identity"].passed


def test_lti_as_ltv_consistency(fix_a):
    ltv = lti_as_ltv(fix_a)
    assert validate(ltv, [0.0, 1.0]).passed
    x = np.array([0.4, -1.2])
    assert np.allclose(ltv.residual(0.7, x, x, np.array([0.5])),
                       fix_a.residual(0.7, x, x, np.array([0.5])))


def test_matrix_csv_roundtrip(tmp_path):
    m = np.array([[1.5, -2.25], [0.0, 3.125], [4.0, 5.0]])
    f = tmp_path / "m.csv"
    write_matrix_csv(f, m)
    assert f.read_text().splitlines()[0] == "3,2"
    assert np.array_equal(read_matrix_csv(f), m)


def test_load_lti_csv(tmp_path, fix_a):
    for name in ("E", "J", "R", "Q", "K", "B"):
        write_matrix_csv(tmp_path / f"{name}.csv", getattr(fix_a, name))
    sys = load_lti_csv(tmp_path)
    assert np.array_equal(sys.J, fix_a.J)
    assert validate(sys).passed


def test_report_json_schema(fix_a, tmp_path):
    report = validate(fix_a)
    payload = json.loads(report.to_json(tmp_path / "r.json"))
    assert payload["pass"] is True
    assert {"name", "violation", "pass"} == set(payload["checks"][0])
