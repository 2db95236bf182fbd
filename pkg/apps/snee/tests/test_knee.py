import numpy as np
import pytest

from apps.snee.config import DIRECT_OPTIONS, KNEE_OPTIONS
from apps.snee.errors import DegenerateSensitivityWarning
from apps.snee.inner_solvers import SolutionCache, solve_weighted_sum
from apps.snee.knee import (
    KneeMethod,
    KneeResult,
    KneeTracePoint,
    default_start,
    find_knee,
    knee_neighborhood,
    mcf_from_sensitivity,
    mcf_value,
    uses_adaptive_alpha,
)
from apps.snee.neighborhoods import NeighborhoodKind
from apps.snee.problems import make_problem
from apps.snee.scalarization import simplex_grid
from apps.snee.sensitivity import SensitivityResult, compute_sensitivity

CENTROID = np.full(3, 1 / 3)


def _sensitivity(dF) -> SensitivityResult:
    dF = np.asarray(dF, dtype=float)
    q = dF.shape[0]
    return SensitivityResult(
        lam=np.full(q, 1 / q),
        dx_dlambda=np.zeros((q, q)),
        dF_dlambda=dF,
        pinv_dF=np.linalg.pinv(dF),
        singular_values=np.linalg.svd(dF, compute_uv=False),
        condition_beyond_singularity=1.0,
    )


def _check_trace(result: KneeResult):
    values = [point.mcf for point in result.trace]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert result.mcf_star == values[-1] == min(values)
    iterations = [point.iteration for point in result.trace]
    assert iterations == sorted(iterations)
    assert np.all(result.lambda_star >= 0)
    assert result.lambda_star.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize(
    "dF, expected",
    [
        (np.diag([1.0, 2.0, 4.0]), 4.0),
        (np.diag([3.0, 3.0]), 1.0),
        (np.array([[1.0, 0.0], [0.0, 0.5]]), 2.0),
    ],
)
def test_mcf_from_sensitivity(dF, expected):
    """Test mcf_from_sensitivity function on hand-built matrices."""
    assert mcf_from_sensitivity(_sensitivity(dF)) == pytest.approx(expected)


def test_mcf_from_sensitivity_degenerate():
    """Test that vanishing columns give MCF 0 with a warning."""
    with pytest.warns(DegenerateSensitivityWarning):
        assert mcf_from_sensitivity(_sensitivity(np.zeros((3, 3)))) == 0.0


def test_mcf_from_sensitivity_one_zero_column():
    """Test that a single vanishing column is divided by eps."""
    value = mcf_from_sensitivity(_sensitivity(np.diag([1.0, 0.0])))
    assert value == pytest.approx(1.0 / np.finfo(float).eps)


def test_mcf_value_zlt1():
    """Test mcf_value function at the ZLT1 centroid."""
    problem = make_problem("ZLT1")
    assert mcf_value(problem, CENTROID) == pytest.approx(1.0, abs=1e-8)
    assert mcf_value(problem, [0.8, 0.1, 0.1]) > 1.0 + 1e-3


@pytest.mark.parametrize("name", ["ZLT1", "GRV1", "VFM1", "GRV2"])
def test_mcf_floor(name):
    """Test that MCF is at least 1 at random interior weights."""
    problem = make_problem(name)
    rng = np.random.default_rng(3)
    cache = SolutionCache()
    for _ in range(20):
        lam = 0.02 + 0.98 * rng.dirichlet(np.ones(problem.q))
        lam = lam / lam.sum()
        sens = compute_sensitivity(problem, solve_weighted_sum(problem, lam))
        if np.all(sens.column_norms > np.finfo(float).eps):
            assert mcf_value(problem, lam, cache) >= 1.0 - 1e-12


def test_mcf_value_errors():
    """Test mcf_value function with invalid weights."""
    with pytest.raises(ValueError):
        mcf_value(make_problem("ZLT1"), [0.5, 0.5])


@pytest.mark.parametrize(
    "name, params, expected",
    [
        ("ZLT1", None, [0.8, 0.1, 0.1]),
        ("VFM1", None, [0.4, 0.2, 0.4]),
        ("ZLT1q", None, [0.6, 0.1, 0.1, 0.1, 0.1]),
        ("ZLT1q", {"nbar": 4, "qbar": 4}, [0.25, 0.25, 0.25, 0.25]),
    ],
)
def test_default_start(name, params, expected):
    """Test default_start function."""
    np.testing.assert_allclose(default_start(make_problem(name, params)), expected)


@pytest.mark.parametrize(
    "name, alpha_mode, adaptive",
    [
        ("ZLT1", None, False),
        ("GRV2", None, True),
        ("VFM1constr", None, True),
        ("ZLT1", "adaptive", True),
        ("DAS1", "fixed", False),
    ],
)
def test_knee_neighborhood(name, alpha_mode, adaptive):
    """Test knee_neighborhood function."""
    problem = make_problem(name)
    spec = knee_neighborhood(problem, alpha_mode)
    assert spec.kind == NeighborhoodKind.ellipsoid
    if adaptive:
        assert spec.alpha_mode == "adaptive"
        assert spec.adaptive_factor == KNEE_OPTIONS.adaptive_factor
    else:
        assert spec.size == KNEE_OPTIONS.fixed_alpha
    if alpha_mode is None:
        assert uses_adaptive_alpha(problem) == adaptive


@pytest.mark.parametrize("method, start", [("nm", [0.8, 0.1, 0.1]), ("direct", None)])
def test_find_knee_zlt1(method, start):
    """Test that both optimizers find the levelized ZLT1 knee."""
    problem = make_problem("ZLT1")
    result = find_knee(problem, method, start, grid=simplex_grid(3, 0.05))
    assert isinstance(result, KneeResult)
    assert result.method == KneeMethod(method)
    assert np.linalg.norm(result.lambda_star - CENTROID) <= 1e-2
    assert result.mcf_star <= 1.0 + 1e-3
    np.testing.assert_allclose(result.x_star, result.lambda_star, atol=1e-6)
    assert result.f_star.shape == (3,)
    assert result.evaluations >= len(result.trace)
    _check_trace(result)
    for point in result.trace:
        assert isinstance(point, KneeTracePoint)
        assert 0.0 <= point.mcm <= 1.0
        assert point.alpha_used == KNEE_OPTIONS.fixed_alpha
    if method == "nm":
        np.testing.assert_allclose(result.start, start)
    else:
        assert result.start is None


def test_find_knee_brute_force():
    """Test that no coarse grid point beats the DIRECT knee."""
    problem = make_problem("ZLT1")
    cache = SolutionCache()
    result = find_knee(problem, "direct", cache=cache, with_mcm=False)
    grid = simplex_grid(3, 0.05)
    interior = grid.points[np.all(grid.points > 0, axis=1)]
    best = min(mcf_value(problem, lam, cache) for lam in interior)
    assert best >= result.mcf_star - 1e-3


def test_find_knee_direct_budget():
    """Test that a DIRECT knee search ends cleanly at its evaluation budget."""
    opts = DIRECT_OPTIONS.model_copy(update={"budget": 40})
    result = find_knee(make_problem("VFM1"), "direct", direct_opts=opts, with_mcm=False)
    assert result.evaluations <= 40
    assert np.isfinite(result.mcf_star)
    assert result.lambda_star.sum() == pytest.approx(1.0)
    assert np.all(result.lambda_star >= 0)
    assert [point.mcf for point in result.trace][-1] == result.mcf_star


def test_find_knee_without_mcm():
    """Test find_knee function when MCM recording is switched off."""
    result = find_knee(make_problem("VFM1"), "nm", with_mcm=False)
    assert all(np.isnan(point.mcm) for point in result.trace)
    assert all(np.isnan(point.alpha_used) for point in result.trace)
    _check_trace(result)


def test_find_knee_adaptive_alpha():
    """Test that the adaptive rule records the resolved alpha."""
    problem = make_problem("ZLT1")
    result = find_knee(
        problem, "nm", grid=simplex_grid(3, 0.05), alpha_mode="adaptive"
    )
    alphas = [p.alpha_used for p in result.trace if np.isfinite(p.alpha_used)]
    assert alphas
    assert all(alpha > 0 for alpha in alphas)


def test_find_knee_errors():
    """Test find_knee function with invalid input."""
    problem = make_problem("ZLT1")
    with pytest.raises(ValueError):
        find_knee(problem, "nm", [0.5, 0.5], with_mcm=False)
    with pytest.raises(ValueError):
        find_knee(problem, "bfgs", with_mcm=False)


@pytest.mark.slow
@pytest.mark.parametrize(
    "name, start",
    [
        ("ZLT1", [0.8, 0.1, 0.1]),
        ("GRV1", [0.8, 0.1, 0.1]),
        ("GRV2", [0.9, 0.1]),
        ("VFM1", [0.4, 0.2, 0.4]),
        ("ZLT1q", [0.6, 0.1, 0.1, 0.1, 0.1]),
    ],
)
def test_find_knee_agreement(name, start):
    """Test that Nelder-Mead and DIRECT reach the same MCF."""
    problem = make_problem(name)
    cache = SolutionCache()
    nm = find_knee(problem, "nm", start, cache=cache, with_mcm=False)
    direct = find_knee(problem, "direct", cache=cache, with_mcm=False)
    assert nm.mcf_star == pytest.approx(direct.mcf_star, rel=1e-2)


@pytest.mark.slow
def test_find_knee_vfm1constr():
    """Test the constrained VFM1 knee and its degenerate sensitivity."""
    problem = make_problem("VFM1constr")
    cache = SolutionCache()
    nm = find_knee(problem, "nm", [0.4, 0.2, 0.4], cache=cache, with_mcm=False)
    direct = find_knee(problem, "direct", cache=cache, with_mcm=False)
    assert direct.mcf_star <= nm.mcf_star + 1e-6
    sol = solve_weighted_sum(problem, direct.lambda_star, cache=cache)
    sigma = compute_sensitivity(problem, sol).singular_values
    assert np.sum(sigma < 1e-3 * sigma[0]) >= 2
