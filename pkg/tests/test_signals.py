import numpy as np
import pytest

from simulation.signals import (BinOp, Call, Const, Neg, Pi, SignalParseError, Time, check_finite,
                                constant_signals, evaluate_channels, parse_signal, parse_signals)

TIMES = np.linspace(0.0, 3.0, 31)


@pytest.mark.parametrize("text, expected", [
    ("1+0.5*sin(pi*t)", lambda t: 1 + 0.5 * np.sin(np.pi * t)),
    ("2+sin(2*pi*t)", lambda t: 2 + np.sin(2 * np.pi * t)),
    ("3*sin(pi*t)", lambda t: 3 * np.sin(np.pi * t)),
    ("-t", lambda t: -t),
    ("1-2-3", lambda t: np.full_like(t, -4.0)),
    ("8/2/2", lambda t: np.full_like(t, 2.0)),
    ("exp(-t)*cos(t)", lambda t: np.exp(-t) * np.cos(t)),
    (" ( 1 + t ) * 2 ", lambda t: (1 + t) * 2),
    ("1e-3*t", lambda t: 1e-3 * t),
    (".5", lambda t: np.full_like(t, 0.5)),
])
def test_parse_and_evaluate(text, expected):
    np.testing.assert_allclose(parse_signal(text).evaluate(TIMES), expected(TIMES), rtol=1e-14, atol=1e-14)


def test_parse_builds_tree():
    assert parse_signal("1+t") == BinOp('+', Const(1.0), Time())
    assert parse_signal("-sin(pi)") == Neg(Call('sin', Pi()))


@pytest.mark.parametrize("text, position", [
    ("1+*sin(t)", 2),
    ("sin(t", 5),
    ("1+", 2),
])
def test_parse_error_positions(text, position):
    with pytest.raises(SignalParseError) as info:
        parse_signal(text)
    assert info.value.position == position
    assert info.value.caret().endswith(" " * position + "^")


def test_parse_error_rejects_unknown_names():
    for text in ("tan(t)", "x", "t t", ""):
        with pytest.raises(SignalParseError):
            parse_signal(text)


def test_printing_reparses_to_same_tree():
    for text in ("1+0.5*sin(pi*t)", "1-(2-t)", "t/(2*t)", "-(1+t)", "-(-t)", "2*-t", "(1+t)*(1-t)",
                 "exp(-t)/(1+t*t)"):
        tree = parse_signal(text)
        assert parse_signal(str(tree)) == tree


def random_tree(rng, depth):
    if depth == 0 or rng.random() < 0.25:
        leaf = rng.integers(3)
        if leaf == 0:
            return Const(float(np.round(rng.uniform(0.0, 10.0), int(rng.integers(0, 4)))))
        return Time() if leaf == 1 else Pi()
    kind = rng.integers(3)
    if kind == 0:
        return Call(str(rng.choice(["sin", "cos", "exp"])), random_tree(rng, depth - 1))
    if kind == 1:
        return Neg(random_tree(rng, depth - 1))
    return BinOp(str(rng.choice(list("+-*/"))), random_tree(rng, depth - 1), random_tree(rng, depth - 1))


def test_printing_reparses_random_trees(rng):
    for _ in range(200):
        tree = random_tree(rng, 4)
        reparsed = parse_signal(str(tree))
        assert reparsed == tree, str(tree)
        with np.errstate(all="ignore"):
            np.testing.assert_array_equal(reparsed.evaluate(TIMES), tree.evaluate(TIMES))


def test_derivative_matches_central_difference():
    h = 1e-6
    for text in ("1+0.5*sin(pi*t)", "exp(-t)*cos(2*t)", "t/(1+t*t)", "-(t-3)*(t+1)"):
        signal = parse_signal(text)
        numeric = (signal.evaluate(TIMES + h) - signal.evaluate(TIMES - h)) / (2 * h)
        np.testing.assert_allclose(signal.derivative().evaluate(TIMES), numeric, rtol=1e-6, atol=1e-6)


def test_derivative_simplifies_constants():
    assert parse_signal("3*t").derivative() == Const(3.0)
    assert parse_signal("5").derivative() == Const(0.0)


def test_channels_and_constants():
    signals = parse_signals(["t", "2"])
    np.testing.assert_array_equal(evaluate_channels(signals, 1.5), [1.5, 2.0])
    np.testing.assert_array_equal(evaluate_channels(constant_signals([-1.0, 2.0]), 0.0), [-1.0, 2.0])


def test_check_finite_reports_bad_time():
    with pytest.raises(SignalParseError):
        check_finite([parse_signal("1/t")], TIMES)
    check_finite([parse_signal("1/(1+t)")], TIMES)


def test_negative_constants_are_rejected():
    with pytest.raises(ValueError):
        Const(-1.0)
