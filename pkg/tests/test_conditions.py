import json

import numpy as np
import pytest

from analysis.conditions import (BOUNDARY, EQUALITY, FAIL, LOWER, PASS, UPPER, Checker, ConditionError,
                                 ReportInvalid, SampleGrid, brayton_moser_checker, check_brayton_moser,
                                 check_gradient_natural, check_killing, check_metric_contraction,
                                 check_output_match, check_rigid_body, check_theorem_qpq, combine_verdicts,
                                 contraction_checker, contraction_rate, default_input_samples, killing_checker,
                                 natural_checker, output_checker, qpq_checker, qpq_output_checker, scan_region)
from analysis.storage import StorageBounds, constant_storage, make_qpq_storage
from demos.registry import (certify_rigid_body, oscillator, oscillator_c_gradient, rc_brayton_moser,
                            rc_circuit, rigid_body)
from models import EvaluationError


def test_oscillator_a_contraction_margin(rng):
    model = oscillator('A')
    for x in rng.uniform(-1.5, 1.5, 100):
        margin = check_metric_contraction(model.system, model.storage, np.array([x]))
        assert margin == pytest.approx(-2.0 * np.cos(x), abs=1e-12)


def test_oscillator_b_conditions(rng):
    model = oscillator('B')
    for x in rng.uniform(-3.0, 3.0, 100):
        x = np.array([x])
        assert check_metric_contraction(model.system, model.storage, x) == pytest.approx(-1.0, abs=1e-9)
        assert check_killing(model.system, model.storage, x)[0] == pytest.approx(0.0, abs=1e-9)
        assert check_output_match(model.system, model.storage, x) == pytest.approx(0.0, abs=1e-9)


def test_oscillator_b_unit_input_breaks_killing():
    model = oscillator('B', unit_input=True)
    residual = check_killing(model.system, model.storage, np.array([np.pi / 2]))[0]
    assert residual == pytest.approx(1.0)


def test_oscillator_c_qpq_storage_conditions(rng):
    model = oscillator('C')
    for x in rng.uniform(-2.5, 2.5, 100):
        x = np.array([x])
        assert check_metric_contraction(model.system, model.storage, x) == pytest.approx(-2.0, abs=1e-8)
        assert check_killing(model.system, model.storage, x)[0] == pytest.approx(0.0, abs=1e-8)
        assert check_output_match(model.system, model.storage, x) == pytest.approx(0.0, abs=1e-9)
        margin, residual = check_theorem_qpq(model.gradient, np.ones((1, 1)), x, C=np.ones((1, 1)))
        assert margin == pytest.approx(2.0)
        assert residual == 0.0


def test_natural_condition_closed_form(rng):
    gs = oscillator_c_gradient()
    for _ in range(100):
        x = rng.uniform(-3.0, 3.0)
        u = rng.uniform(-2.0, 2.0)
        expected = -np.cos(x / 2) - 0.25 * np.tan(x / 2) * (u - 2 * np.sin(x / 2))
        assert check_gradient_natural(gs, np.array([x]), np.array([u])) == pytest.approx(expected, abs=1e-9)


def test_qpq_condition_reduces_to_convexity():
    from models import GradientSystem
    gs = GradientSystem(n=2, m=1, Q=lambda x: np.eye(2), dQ=lambda x: np.zeros((2, 2, 2)),
                        grad_V=lambda x: np.array([2 * x[0], 6 * x[1]]),
                        hess_V=lambda x: np.diag([2.0, 6.0]), B=np.ones((2, 1)))
    margin, _ = check_theorem_qpq(gs, np.eye(2), np.zeros(2))
    assert margin == pytest.approx(4.0)


def test_rc_qpq_margin():
    gs = rc_circuit().gradient
    assert check_theorem_qpq(gs, np.ones((1, 1)), np.array([1.0]))[0] == pytest.approx(5.0)
    assert check_theorem_qpq(gs, np.ones((1, 1)), np.array([0.0]))[0] == pytest.approx(0.0)


def test_brayton_moser_condition_matches_qpq():
    bm = rc_brayton_moser()
    # Q hess_p is the negative of Q hess_V
    assert check_brayton_moser(bm, np.array([1.0])) == pytest.approx(-5.0)


def test_rigid_body_condition_closed_form(rng):
    model = rigid_body()
    assert check_rigid_body(model.closed_loop, model.r, np.zeros(3)) == pytest.approx(-0.4)
    for _ in range(100):
        w = rng.uniform(-1, 1, 3)
        expected = -0.4 + np.hypot(4.0 / 3.0 * w[1], 2.0 / 3.0 * w[2])
        assert check_rigid_body(model.closed_loop, model.r, w) == pytest.approx(expected, abs=1e-12)


def test_sample_grid_parse_and_describe():
    grid = SampleGrid.parse("-1:1:3,0:2:2")
    assert grid.counts == (3, 2)
    assert len(grid.points()) == 6
    assert SampleGrid.parse(grid.describe()).counts == grid.counts
    for bad in ("1:0:3", "0:1", "0:1:1", "a:1:3"):
        with pytest.raises(ConditionError):
            SampleGrid.parse(bad)


def test_default_input_samples():
    samples = default_input_samples(2)
    assert len(samples) == 5
    np.testing.assert_array_equal(samples[0], np.zeros(2))


def test_scan_oscillator_a_on_domain_passes():
    model = oscillator('A')
    report = scan_region(contraction_checker(model.system, model.storage), SampleGrid.over(model.domain, 201))
    assert report.verdict == PASS
    assert report.max_margin == pytest.approx(-2.0 * np.sin(0.01), rel=1e-9)
    assert report.n_points == 201


def test_scan_oscillator_a_across_chart_fails():
    model = oscillator('A')
    report = scan_region(contraction_checker(model.system, model.storage),
                         SampleGrid.parse("-3.13:3.13:1001"))
    assert report.verdict == FAIL
    assert abs(report.worst_point[0]) == pytest.approx(3.13)


def test_scan_boundary_verdict_at_half_pi():
    model = oscillator('A')
    report = scan_region(contraction_checker(model.system, model.storage),
                         SampleGrid.parse(f"{-np.pi / 2}:{np.pi / 2}:11"))
    assert report.verdict == BOUNDARY


def test_scan_is_independent_of_thread_count():
    model = oscillator('B')
    grid = SampleGrid.over(model.domain, 401)
    serial = scan_region(killing_checker(model.system, model.storage), grid, threads=1, chunk_size=16)
    threaded = scan_region(killing_checker(model.system, model.storage), grid, threads=4, chunk_size=16)
    assert serial.values == threaded.values
    assert serial.verdict == threaded.verdict == PASS


def test_killing_scan_fails_for_unit_input():
    model = oscillator('B', unit_input=True)
    report = scan_region(killing_checker(model.system, model.storage), SampleGrid.over(model.domain, 101))
    assert report.sense == EQUALITY
    assert report.verdict == FAIL


def test_natural_scan_uses_input_samples():
    gs = oscillator_c_gradient()
    grid = SampleGrid.parse("-1:1:5", u_samples=[np.array([0.0]), np.array([0.5])])
    report = scan_region(natural_checker(gs), grid)
    assert report.n_points == 10
    assert report.verdict == PASS


def test_natural_scan_fails_for_large_inputs():
    gs = oscillator_c_gradient()
    grid = SampleGrid.parse("-3:3:31", u_samples=[np.array([20.0]), np.array([-20.0])])
    assert scan_region(natural_checker(gs), grid).verdict == FAIL


def test_qpq_scan_on_rc_is_boundary_because_of_origin():
    gs = rc_circuit().gradient
    report = scan_region(qpq_checker(gs, np.ones((1, 1))), SampleGrid.over(gs.domain, 101))
    assert report.sense == LOWER
    assert report.verdict == BOUNDARY
    assert report.worst_point == pytest.approx([0.0])
    strict = scan_region(qpq_checker(gs, np.ones((1, 1))), SampleGrid.parse("0.5:10:51"))
    assert strict.verdict == PASS


def test_qpq_output_checker_flags_wrong_output_matrix():
    gs = oscillator_c_gradient()
    grid = SampleGrid.parse("-1:1:5")
    assert scan_region(qpq_output_checker(gs, np.ones((1, 1)), np.ones((1, 1))), grid).verdict == PASS
    assert scan_region(qpq_output_checker(gs, np.ones((1, 1)), 2 * np.ones((1, 1))), grid).verdict == FAIL


def test_brayton_moser_scan_passes_off_origin():
    report = scan_region(brayton_moser_checker(rc_brayton_moser()), SampleGrid.parse("0.5:10:20"))
    assert report.verdict == PASS


def test_rigid_body_scan_on_domain_passes():
    model = rigid_body()
    from demos.registry import RIGID_BODY_DOMAIN
    from analysis.conditions import rigid_body_checker
    report = scan_region(rigid_body_checker(model.closed_loop, model.r), SampleGrid.over(RIGID_BODY_DOMAIN, 11))
    assert report.verdict == PASS


def test_rigid_body_certified_box():
    assert certify_rigid_body(r=(0.2, 0.2, 0.2), count=5) == pytest.approx(0.25)
    assert certify_rigid_body(r=(2.5, 2.5, 2.5), count=5) == pytest.approx(3.0)


def test_scan_dimension_mismatch():
    model = oscillator('A')
    with pytest.raises(ConditionError):
        scan_region(contraction_checker(model.system, model.storage), SampleGrid.parse("0:1:3,0:1:3"))


def test_scan_invalid_when_too_many_points_fail():
    def evaluate(x, u):
        raise EvaluationError("always", x=x)

    checker = Checker("broken", UPPER, evaluate, 1)
    with pytest.raises(ReportInvalid) as info:
        scan_region(checker, SampleGrid.parse("0:1:10"))
    assert len(info.value.failures) == 10


def test_scan_tolerates_isolated_failures():
    def evaluate(x, u):
        if x[0] == 0.0:
            raise EvaluationError("singular", x=x)
        return -1.0

    report = scan_region(Checker("spotty", UPPER, evaluate, 1), SampleGrid.parse("0:1:1001"))
    assert report.verdict == PASS
    assert len(report.failures) == 1


def test_report_serialization():
    model = oscillator('A')
    report = scan_region(output_checker(model.system, model.storage), SampleGrid.parse("-1:1:3"))
    data = json.loads(report.to_json(include_points=True))
    assert data['condition_id'] == "output-match"
    assert data['points'] == [[-1.0], [0.0], [1.0]]
    assert report.table().shape == (3, 2)


def test_combine_verdicts():
    model = oscillator('A')
    grid = SampleGrid.parse("-1:1:3")
    passing = scan_region(output_checker(model.system, model.storage), grid)
    failing = scan_region(contraction_checker(model.system, model.storage), SampleGrid.parse("-3:3:3"))
    assert combine_verdicts([passing]) == PASS
    assert combine_verdicts([passing, failing]) == FAIL


def test_contraction_rate_from_bounds():
    model = oscillator('C')
    report = scan_region(contraction_checker(model.system, model.storage), SampleGrid.parse("-1:1:11"))
    rate = contraction_rate(report, StorageBounds(0.5, 1.0))
    assert rate == pytest.approx(1.0, abs=1e-8)
    failing = scan_region(contraction_checker(oscillator('A').system, oscillator('A').storage),
                          SampleGrid.parse("-3:3:3"))
    assert contraction_rate(failing, StorageBounds(0.5, 0.5)) == 0.0


def test_constant_storage_scan_on_linear_system():
    from demos.registry import linear_passive_fixture
    system, storage = linear_passive_fixture()
    report = scan_region(contraction_checker(system, constant_storage(np.eye(2))), SampleGrid.parse("-1:1:3,-1:1:3"))
    assert report.verdict == BOUNDARY


def test_oscillator_b_margin_is_minus_one_across_chart():
    model = oscillator('B')
    grid = SampleGrid.parse("-3.13:3.13:1001")
    report = scan_region(contraction_checker(model.system, model.storage), grid)
    assert max(abs(value + 1.0) for value in report.values) <= 1e-9
    killing = scan_region(killing_checker(model.system, model.storage), grid)
    assert killing.max_margin <= 1e-8
    unit = oscillator('B', unit_input=True)
    assert scan_region(killing_checker(unit.system, unit.storage), grid).max_margin >= 0.5


def test_oscillator_c_qpq_margin_is_two_across_chart():
    gs = oscillator_c_gradient()
    report = scan_region(qpq_checker(gs, np.ones((1, 1))), SampleGrid.parse("-3.13:3.13:1001"))
    assert max(abs(value - 2.0) for value in report.values) <= 1e-9
