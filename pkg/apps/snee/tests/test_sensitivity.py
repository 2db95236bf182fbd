import numpy as np
import pytest

from apps.snee.errors import (
    MissingMultipliersError,
    SingularKktJacobianError,
    SingularWeightedHessianError,
)
from apps.snee.inner_solvers import ScalarizedSolution, solve_weighted_sum
from apps.snee.problems import MooProblem, make_problem, quadratic, squared_distance
from apps.snee.sensitivity import (
    SensitivityResult,
    assemble_kkt,
    check_gradient,
    compute_sensitivity,
    pseudo_inverse,
    sensitivity_constrained,
    sensitivity_unconstrained,
)

UNCONSTRAINED = ["ZLT1", "GRV1", "VFM1", "ZLT1q", "GRV2"]


def _check_problem(duplicate: bool = False) -> MooProblem:
    bound = quadratic(np.zeros((2, 2)), np.array([1.0, 0.0]), -0.5)
    objectives = (
        squared_distance(np.zeros(2)),
        squared_distance(np.array([2.0, 0.0])),
    )
    constraints = (bound, bound) if duplicate else (bound,)
    return MooProblem("CHECK", 2, 2, objectives, constraints)


def _interior_weights(rng, q, count):
    # 境界から離れた相対的内部の点
    return [0.05 + 0.95 * rng.dirichlet(np.ones(q)) for _ in range(count)]


def test_sensitivity_unconstrained_zlt1():
    """Test sensitivity_unconstrained function against the ZLT1 closed form."""
    problem = make_problem("ZLT1")
    lam = np.full(3, 1 / 3)
    sens = sensitivity_unconstrained(problem, solve_weighted_sum(problem, lam))
    assert isinstance(sens, SensitivityResult)
    expected = np.full((3, 3), 2 / 3) - 2.0 * np.eye(3)
    np.testing.assert_allclose(sens.dF_dlambda, expected, atol=1e-8)
    np.testing.assert_allclose(sens.dF_dlambda.sum(axis=1), 0.0, atol=1e-8)
    np.testing.assert_allclose(sens.column_norms, np.sqrt(16 / 9 + 8 / 9), atol=1e-8)
    assert sens.dx_dlambda.shape == (3, 3)
    assert np.isfinite(sens.condition_beyond_singularity)
    assert sens.singular_values[-1] <= 1e-8


@pytest.mark.parametrize("name", UNCONSTRAINED)
def test_unconstrained_structure(name):
    """Test the symmetry and the null vector of the unconstrained sensitivity."""
    problem = make_problem(name)
    rng = np.random.default_rng(5)
    for lam in _interior_weights(rng, problem.q, 5):
        lam = lam / lam.sum()
        sens = compute_sensitivity(problem, solve_weighted_sum(problem, lam))
        dF = sens.dF_dlambda
        assert np.max(np.abs(dF - dF.T)) <= 1e-8
        assert np.linalg.norm(lam @ dF) <= 1e-6
        assert np.linalg.norm(dF @ lam) <= 1e-6


@pytest.mark.parametrize("name", UNCONSTRAINED)
def test_check_gradient_unconstrained(name):
    """Test analytic sensitivities against finite differences of re-solved points."""
    problem = make_problem(name)
    rng = np.random.default_rng(17)
    for lam in _interior_weights(rng, problem.q, 5):
        report = check_gradient(problem, lam / lam.sum())
        assert report.max_rel_error <= 1e-4
        assert report.symmetric_defect <= 1e-8
        assert report.null_vector_defect <= 1e-6
        assert report.discarded_probes == ()


@pytest.mark.slow
@pytest.mark.parametrize("name", UNCONSTRAINED)
def test_check_gradient_unconstrained_full(name):
    """Test finite differences at 25 random interior weights."""
    problem = make_problem(name)
    rng = np.random.default_rng(2025)
    for lam in _interior_weights(rng, problem.q, 25):
        assert check_gradient(problem, lam / lam.sum()).max_rel_error <= 1e-4


@pytest.mark.parametrize(
    "name, weights",
    [
        ("VFM1constr", [[0.4, 0.2, 0.4], [0.6, 0.2, 0.2], [0.02, 0.02, 0.96]]),
        ("DAS1", [[0.4, 0.6], [0.5, 0.5], [0.7, 0.3]]),
    ],
)
def test_check_gradient_constrained(name, weights):
    """Test constrained sensitivities against finite differences."""
    problem = make_problem(name)
    for lam in weights:
        report = check_gradient(problem, lam)
        if len(report.discarded_probes) < problem.q:
            assert report.max_rel_error <= 1e-3


def test_check_gradient_report():
    """Test the GradientCheckReport dictionary."""
    report = check_gradient(make_problem("ZLT1"), [0.8, 0.1, 0.1], h=1e-5)
    record = report.to_dict()
    assert record["problem"] == "ZLT1"
    assert record["lambda"] == [0.8, 0.1, 0.1]
    assert set(record) >= {"max_rel_error", "symmetric_defect", "null_vector_defect"}
    with pytest.raises(ValueError):
        check_gradient(make_problem("ZLT1"), [0.8, 0.1, 0.1], h=-1.0)


def test_assemble_kkt_check_problem():
    """Test assemble_kkt function on a hand-assembled system."""
    problem = _check_problem()
    sol = solve_weighted_sum(problem, [0.5, 0.5])
    kkt = assemble_kkt(problem, sol)
    expected = np.array([[2.0, 0.0, 1.0], [0.0, 2.0, 0.0], [1.0, 0.0, 0.0]])
    np.testing.assert_allclose(kkt.dK_dw, expected, atol=1e-7)
    assert np.linalg.det(kkt.dK_dw) == pytest.approx(-2.0, abs=1e-6)
    np.testing.assert_allclose(kkt.selector_L, np.vstack([np.eye(2), np.zeros((1, 2))]))
    assert kkt.dK_dlambda.shape == (3, 2)
    np.testing.assert_allclose(kkt.dK_dlambda[2], 0.0)


def test_sensitivity_constrained_check_problem():
    """Test that an active bound pins x and zeroes the sensitivity."""
    problem = _check_problem()
    sens = sensitivity_constrained(problem, solve_weighted_sum(problem, [0.5, 0.5]))
    np.testing.assert_allclose(sens.dx_dlambda, 0.0, atol=1e-7)
    np.testing.assert_allclose(sens.dF_dlambda, 0.0, atol=1e-7)


def test_assemble_kkt_do2dk_bounds():
    """Test the bound rows of the DO2DK KKT matrix."""
    problem = make_problem("DO2DK", {"n": 4, "r": 1.0})
    sol = solve_weighted_sum(problem, [0.5, 0.5])
    kkt = assemble_kkt(problem, sol)
    n = problem.n
    for j in range(n):
        row = kkt.dK_dw[n + j, :n]
        expected = np.zeros(n)
        expected[j] = -sol.z_I[j]
        np.testing.assert_allclose(row, expected, atol=1e-12)
        row = kkt.dK_dw[2 * n + j, :n]
        expected[j] = sol.z_I[n + j]
        np.testing.assert_allclose(row, expected, atol=1e-12)


def test_inactive_constraints_match_unconstrained():
    """Test that inactive constraints reproduce the unconstrained sensitivity."""
    lam = [0.4, 0.2, 0.4]
    constrained = make_problem("VFM1constr")
    free = make_problem("VFM1")
    sol = solve_weighted_sum(constrained, lam)
    assert sol.active_set == ()
    a = compute_sensitivity(constrained, sol)
    b = compute_sensitivity(free, solve_weighted_sum(free, lam))
    np.testing.assert_allclose(a.dF_dlambda, b.dF_dlambda, atol=1e-8)


def test_sensitivity_errors():
    """Test the sensitivity failure modes."""
    linear = tuple(quadratic(np.zeros((2, 2)), b) for b in ([1.0, 0.0], [0.0, 1.0]))
    flat = MooProblem("LINEAR", 2, 2, linear)
    sol = ScalarizedSolution(
        lam=np.array([0.5, 0.5]),
        x=np.zeros(2),
        f_values=np.zeros(2),
        z_I=np.zeros(0),
        z_E=np.zeros(0),
        grad_norm=0.0,
        converged=True,
        iterations=0,
    )
    with pytest.raises(SingularWeightedHessianError):
        sensitivity_unconstrained(flat, sol)

    with pytest.raises(MissingMultipliersError):
        assemble_kkt(_check_problem(), sol._replace(x=np.array([0.5, 0.0])))

    duplicate = _check_problem(duplicate=True)
    sol = sol._replace(
        x=np.array([0.5, 0.0]), z_I=np.array([0.5, 0.5]), active_set=(0, 1)
    )
    with pytest.raises(SingularKktJacobianError):
        sensitivity_constrained(duplicate, sol)


@pytest.mark.parametrize(
    "matrix, expected",
    [
        (np.eye(3), np.eye(3)),
        (np.diag([2.0, 0.0]), np.diag([0.5, 0.0])),
        (np.zeros((2, 2)), np.zeros((2, 2))),
    ],
)
def test_pseudo_inverse(matrix, expected):
    """Test pseudo_inverse function."""
    np.testing.assert_allclose(pseudo_inverse(matrix), expected)


def test_pseudo_inverse_penrose():
    """Test the Penrose conditions on random and rank-deficient matrices."""
    rng = np.random.default_rng(99)
    for k in range(100):
        q = int(rng.integers(2, 6))
        rank = q if k % 2 == 0 else int(rng.integers(1, q))
        A = rng.normal(size=(q, rank)) @ rng.normal(size=(rank, q))
        P = pseudo_inverse(A, rank_tol=1e-10)
        assert np.max(np.abs(A @ P @ A - A)) <= 1e-8
        assert np.max(np.abs(P @ A @ P - P)) <= 1e-8
        np.testing.assert_allclose(P, np.linalg.pinv(A, rcond=1e-10), atol=1e-6)
    with pytest.raises(ValueError):
        pseudo_inverse([[np.nan, 1.0], [0.0, 1.0]])
