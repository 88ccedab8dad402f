import numpy as np
import pytest

from porodrift.expressions import ExpressionError, compile_expression


def test_arithmetic_and_precedence():
    expr = compile_expression("1 + 2*3 - 4/2", [])
    assert expr({}) == pytest.approx(5.0)


def test_power_right_associative():
    expr = compile_expression("2^3^2", [])
    assert expr({}) == pytest.approx(512.0)


def test_unary_minus_and_parentheses():
    expr = compile_expression("-(1 + 2) * -2", [])
    assert expr({}) == pytest.approx(6.0)


def test_functions_and_constants():
    expr = compile_expression("sin(pi/2) + cos(0) + exp(0)", [])
    assert expr({}) == pytest.approx(3.0)


def test_vectorized_variables():
    expr = compile_expression("x1^2 + 0.5*x2", ["x1", "x2"])
    x1 = np.array([0.0, 1.0, 2.0])
    x2 = np.array([2.0, 4.0, 6.0])
    np.testing.assert_allclose(expr({"x1": x1, "x2": x2}), [1.0, 3.0, 7.0])


def test_constant_broadcasts_to_input_shape():
    expr = compile_expression("0.25", ["x1"])
    out = expr({"x1": np.zeros(7)})
    assert out.shape == (7,)
    np.testing.assert_allclose(out, 0.25)


def test_scientific_notation():
    expr = compile_expression("1e-3 + 2.5E2", [])
    assert expr({}) == pytest.approx(250.001)


def test_unknown_name_rejected():
    with pytest.raises(ExpressionError, match="unknown name"):
        compile_expression("x1 + q", ["x1"])


def test_disallowed_variable_rejected():
    with pytest.raises(ExpressionError, match="unknown name"):
        compile_expression("y1", ["x1", "x2"])


@pytest.mark.parametrize("bad", ["", "1 +", "sin 2", "(1", "1 2", "$x", "cos()"])
def test_syntax_errors(bad):
    with pytest.raises(ExpressionError):
        compile_expression(bad, ["x1"])
