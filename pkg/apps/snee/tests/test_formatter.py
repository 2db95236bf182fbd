import numpy as np
import pytest

from apps.snee.formatter import (
    type_checker_order,
    type_checker_vector,
    type_checker_weights,
    vector_formatter,
    weights_formatter,
)
from apps.snee.problems import make_problem


@pytest.mark.parametrize(
    "value, expected, success",
    [
        ([1, 0, 0], [1.0, 0.0, 0.0], True),
        ((0.5, 0.25), [0.5, 0.25], True),
        (np.array([2.0]), [2.0], True),
        (1.0, None, False),
        ([[1.0, 2.0]], None, False),
        (["a", "b"], None, False),
    ],
)
def test_vector_formatter(value, expected, success):
    """Test vector_formatter function."""
    if success:
        result = vector_formatter(value)
        assert isinstance(result, np.ndarray)
        np.testing.assert_array_equal(result, expected)
    else:
        with pytest.raises(TypeError):
            vector_formatter(value)


def test_vector_formatter_rejects_non_finite():
    """Test vector_formatter function with NaN and inf."""
    with pytest.raises(ValueError):
        vector_formatter([1.0, np.nan])
    with pytest.raises(ValueError):
        vector_formatter([np.inf, 0.0])


@pytest.mark.parametrize(
    "value, success",
    [
        ([0.8, 0.1, 0.1], True),
        ([1.0, 0.0], True),
        ([0.6, 0.1, 0.1, 0.1, 0.1], True),
        ([1.0 + 1e-15, -1e-15], True),
        ([0.8, 0.3, 0.1], False),
        ([1.2, -0.2], False),
        ([1.0], False),
    ],
)
def test_weights_formatter(value, success):
    """Test weights_formatter function."""
    if success:
        result = weights_formatter(value)
        assert np.all(result >= 0)
        assert result.sum() == pytest.approx(1.0)
    else:
        with pytest.raises(ValueError):
            weights_formatter(value)


def test_type_checker_vector():
    """Test type_checker_vector decorator."""
    problem = make_problem("ZLT1")

    @type_checker_vector(arg_index=1, kward="x", size_attr="n")
    def dummy_function(problem, x):
        return x

    result = dummy_function(problem, [1, 2, 3])
    assert isinstance(result, np.ndarray)
    result = dummy_function(problem, x=(1, 2, 3))
    assert result.dtype == float
    with pytest.raises(ValueError):
        dummy_function(problem, [1.0, 2.0])


def test_type_checker_weights():
    """Test type_checker_weights decorator."""
    problem = make_problem("VFM1")

    @type_checker_weights(arg_index=1, kward="lam", size_attr="q")
    def dummy_function(problem, lam):
        return lam

    np.testing.assert_allclose(dummy_function(problem, [0.4, 0.2, 0.4]), [0.4, 0.2, 0.4])
    with pytest.raises(ValueError):
        dummy_function(problem, lam=[0.5, 0.5])
    with pytest.raises(ValueError):
        dummy_function(problem, [0.5, 0.5, 0.5])


@pytest.mark.parametrize(
    "value, expected, error",
    [
        (0, 0, None),
        (2, 2, None),
        ("1", 1, None),
        (3, None, ValueError),
        ("first", None, TypeError),
    ],
)
def test_type_checker_order(value, expected, error):
    """Test type_checker_order decorator."""

    @type_checker_order(arg_index=0, kward="order")
    def dummy_function(order=0):
        return order

    assert dummy_function() == 0
    if error is None:
        assert dummy_function(value) == expected
        assert dummy_function(order=value) == expected
    else:
        with pytest.raises(error):
            dummy_function(value)
