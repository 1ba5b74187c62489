import numpy as np
import pytest

from analysis.prolong import variational_rhs
from analysis.storage import (CONSTANT_P, NATURAL_Q, POSITIVE_DEFINITE, POSITIVE_SEMIDEFINITE, QPQ, InvalidP,
                              NotAMetric, constant_storage, domain_samples, eval_storage, make_qpq_storage,
                              natural_output, natural_storage, qpq_output, spot_check, storage_bounds,
                              storage_rate)
from analysis.conditions import (SampleGrid, check_metric_contraction, contraction_checker, killing_checker,
                                 scan_region)
from demos.registry import oscillator, oscillator_c_gradient, rc_circuit, rigid_body
from simulation.integrator import integrate_prolonged
from simulation.signals import parse_signals


def test_constant_storage_value():
    st = constant_storage(np.diag([2.0, 4.0]))
    assert st.provenance == CONSTANT_P
    assert st.definiteness == POSITIVE_DEFINITE
    assert eval_storage(st, np.zeros(2), [1.0, 1.0]) == pytest.approx(3.0)


def test_constant_storage_semidefinite_and_invalid():
    assert constant_storage(np.diag([1.0, 0.0])).definiteness == POSITIVE_SEMIDEFINITE
    with pytest.raises(InvalidP):
        constant_storage(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(InvalidP):
        constant_storage(np.diag([1.0, -1.0]))


def test_qpq_storage_is_identity_for_rigid_body(rng):
    model = rigid_body()
    assert model.storage.provenance == QPQ
    for _ in range(10):
        np.testing.assert_allclose(model.storage.matrix(rng.uniform(-1, 1, 3)), np.eye(3), atol=1e-12)


def test_qpq_storage_derivative_matches_difference(rng):
    st = make_qpq_storage(rc_circuit().gradient, np.ones((1, 1)))
    for _ in range(100):
        v = rng.uniform(0.1, 9.0, 1)
        h = 1e-6
        numeric = (st.matrix(v + h) - st.matrix(v - h)) / (2 * h)
        np.testing.assert_allclose(st.derivatives(v)[0], numeric, rtol=1e-6)


def test_qpq_rejects_wrong_weight_shape():
    with pytest.raises(InvalidP):
        make_qpq_storage(oscillator_c_gradient(), np.eye(2))


def test_natural_storage_requires_positive_metric():
    st = natural_storage(oscillator_c_gradient())
    assert st.provenance == NATURAL_Q
    with pytest.raises(NotAMetric) as info:
        natural_storage(rigid_body().closed_loop)
    assert info.value.lambda_min < 0.0


def test_storage_rate_matches_time_derivative(rng):
    model = oscillator('B')
    sys, st = model.system, model.storage
    for _ in range(100):
        x = rng.uniform(-2.5, 2.5, 1)
        u = rng.uniform(-1, 1, 1)
        dx = rng.normal(size=1)
        du = rng.normal(size=1)
        h = 1e-6
        x_next = x + h * sys.vector_field(x, u)
        dx_next = dx + h * variational_rhs(sys, x, u, dx, du)
        numeric = (eval_storage(st, x_next, dx_next) - eval_storage(st, x, dx)) / h
        assert storage_rate(st, sys, x, u, dx, du) == pytest.approx(numeric, rel=1e-3, abs=1e-4)


def test_storage_bounds_and_scaling():
    st = constant_storage(np.diag([1.0, 3.0]))
    bounds = storage_bounds(st, [np.zeros(2)])
    assert bounds == (pytest.approx(0.5), pytest.approx(1.5))
    doubled = storage_bounds(st.scaled(2.0), [np.zeros(2)])
    assert doubled.c2 == pytest.approx(3.0)


def test_domain_samples_cover_domain():
    domain = rc_circuit().gradient.domain
    points = domain_samples(domain, 1)
    assert points[0] == pytest.approx([0.0])
    assert points[-1] == pytest.approx([10.0])
    assert domain_samples(None, 2)[0].tolist() == [0.0, 0.0]


def test_qpq_output_is_passivating_output():
    gs = oscillator_c_gradient()
    sys = qpq_output(gs, np.ones((1, 1)))
    x = np.array([1.0])
    assert sys.output(x) == pytest.approx([4.0 * np.arctanh(np.tan(0.25))])
    assert sys.jacobian_h(x) == pytest.approx([[1.0 / np.cos(0.5)]])


def test_natural_output_defaults_to_transpose_of_B():
    sys = natural_output(rigid_body().closed_loop)
    omega = np.array([0.1, 0.2, 0.3])
    np.testing.assert_allclose(sys.output(omega), rigid_body().closed_loop.B.T @ omega)


def test_spot_check_reports_smallest_eigenvalue():
    lambda_min, asymmetry = spot_check(oscillator('B').storage, [np.array([0.0]), np.array([2.0])])
    assert lambda_min == pytest.approx(0.5)
    assert asymmetry == 0.0


def oscillator_b_case():
    model = oscillator('B')
    return model.system, model.storage, [0.3]


def rc_case():
    model = rc_circuit()
    return model.output, model.storage, [1.0]


@pytest.mark.parametrize("build", [oscillator_b_case, rc_case])
def test_storage_rate_follows_integrated_trajectory(build):
    sys, st, x0 = build()
    u, du = parse_signals(["1+0.5*sin(pi*t)"]), parse_signals(["0.1*cos(t)"])
    traj = integrate_prolonged(sys, x0, [1.0], u, du, st, dt=1e-3, T=2.0)
    numeric = (traj.dS[2:] - traj.dS[:-2]) / (2 * traj.dt)
    for k in range(1, len(traj) - 1, 50):
        rate = storage_rate(st, sys, traj.x[k], traj.u[k], traj.dx[k], traj.du[k])
        assert rate == pytest.approx(numeric[k - 1], rel=1e-4, abs=1e-5)


def test_condition_verdicts_do_not_depend_on_storage_scale(rng):
    model = oscillator('B')
    grid = SampleGrid.parse("-3:3:61")
    baseline = [scan_region(checker(model.system, model.storage), grid).verdict
                for checker in (contraction_checker, killing_checker)]
    for c in rng.uniform(0.1, 10.0, 3):
        scaled = model.storage.scaled(c)
        verdicts = [scan_region(checker(model.system, scaled), grid).verdict
                    for checker in (contraction_checker, killing_checker)]
        assert verdicts == baseline
        for x in rng.uniform(-3, 3, (10, 1)):
            assert check_metric_contraction(model.system, scaled, x) == pytest.approx(
                c * check_metric_contraction(model.system, model.storage, x), rel=1e-12, abs=1e-15)
