import numpy as np
import pytest
from scipy.integrate import solve_ivp

from covsteer import (
    BoundaryResidualError,
    ControllabilityError,
    DefinitenessError,
    DomainError,
    SteeringProblem,
    corollary_q_zero,
    coupling_roots,
    epsilon_sweep,
    initial_conditions,
    lemma1_residual,
    make_system,
    propagate,
    riccati_rhs_h,
    riccati_rhs_pi,
    solve,
    spurious_root_escape,
    sqrt_spd,
)
from covsteer.bridge import _sqrt_spd_pair

GOLDEN = 0.5 * (3.0 - np.sqrt(5.0))  # scalar trivial-case Pi(0), ~0.381966


def scalar_system(q=0.0, r=1.0):
    return make_system([[0.0]], [[1.0]], [[q]], [[r]])


def inertial_system(q_scale=1.0, r=None):
    return make_system([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], q_scale * np.eye(2), r)


def inertial_problem(q_scale=1.0, eps=1.0, r=None):
    return SteeringProblem(inertial_system(q_scale, r), 2 * np.eye(2), 0.25 * np.eye(2), eps)


def random_spd(rng, dim, cond_max=1e4):
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    half = 0.5 * np.log(cond_max)
    eigs = np.exp(rng.uniform(-half, half, dim))
    if dim > 1:
        eigs /= np.sqrt(eigs.max() * eigs.min())
    return (q * eigs) @ q.T


# ---------------------------------------------------------------------------
# SPD square root

def test_sqrt_spd_identity_and_diagonal():
    np.testing.assert_allclose(sqrt_spd(np.eye(3)), np.eye(3), atol=1e-14)
    np.testing.assert_allclose(sqrt_spd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)


def test_sqrt_spd_spectral_oracle():
    s = np.array([[2.0, 1.0], [1.0, 2.0]])  # eigenvalues 1 and 3
    root = sqrt_spd(s)
    np.testing.assert_allclose(root @ root, s, atol=1e-12)
    np.testing.assert_allclose(sorted(np.linalg.eigvalsh(root)), [1.0, np.sqrt(3.0)], atol=1e-12)


def test_sqrt_spd_rejects_indefinite():
    with pytest.raises(DefinitenessError) as err:
        sqrt_spd(np.diag([1.0, -2.0]))
    assert err.value.min_eigenvalue == pytest.approx(-2.0)


# ---------------------------------------------------------------------------
# matrix identity

def test_lemma1_scalar_ones():
    assert lemma1_residual(np.eye(1), np.eye(1)) < 1e-14


def test_lemma1_scalar_four_one():
    assert lemma1_residual(np.array([[4.0]]), np.array([[1.0]])) < 1e-14


def test_lemma1_random_pairs():
    rng = np.random.default_rng(7)
    for _ in range(20):
        assert lemma1_residual(random_spd(rng, 5), random_spd(rng, 5)) < 1e-10


def test_lemma1_shape_mismatch():
    with pytest.raises(DomainError):
        lemma1_residual(np.eye(2), np.eye(3))


# ---------------------------------------------------------------------------
# coupling roots and initial conditions

def scalar_bt():
    return propagate(scalar_system(), 0.0, 1.0, [1.0])[-1]


def test_coupling_roots_scalar_eps1():
    roots = coupling_roots([[1.0]], [[1.0]], scalar_bt(), 1.0)
    assert roots.z_minus[0, 0] == pytest.approx(1.0 - np.sqrt(5.0) / 2.0, abs=1e-12)
    assert roots.z_plus[0, 0] == pytest.approx(1.0 + np.sqrt(5.0) / 2.0, abs=1e-12)
    assert roots.t_weight[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_coupling_roots_scalar_eps0():
    roots = coupling_roots([[1.0]], [[1.0]], scalar_bt(), 0.0)
    assert roots.z_minus[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert roots.z_plus[0, 0] == pytest.approx(2.0, abs=1e-12)


def test_coupling_roots_symmetric_and_ordered():
    rng = np.random.default_rng(3)
    bt = propagate(inertial_system(), 0.0, 1.0, [1.0])[-1]
    for _ in range(5):
        s0, s1 = random_spd(rng, 2), random_spd(rng, 2)
        roots = coupling_roots(s0, s1, bt, 0.7)
        np.testing.assert_allclose(roots.z_minus, roots.z_minus.T, atol=0)
        np.testing.assert_allclose(roots.z_plus, roots.z_plus.T, atol=0)
        assert np.linalg.eigvalsh(roots.z_plus - roots.z_minus).min() > 0


def _offset_via_t_form(sigma0, sigma1, bt, eps):
    """Square-root offset computed through the pre-reduction T-parameterized form."""
    s0_inv = np.linalg.inv(sigma0 / eps)
    t_mat = np.linalg.inv(bt.phi12.T @ np.linalg.inv(sigma1 / eps) @ bt.phi12)
    t_h, t_ih = _sqrt_spd_pair(t_mat)
    t_inv = t_ih @ t_ih
    inner = t_ih @ s0_inv @ t_ih + 0.25 * (t_ih @ s0_inv @ t_inv @ s0_inv @ t_ih)
    return t_h @ sqrt_spd(inner) @ t_h


def test_coupling_roots_match_t_form():
    rng = np.random.default_rng(11)
    bt = propagate(inertial_system(), 0.0, 1.0, [1.0])[-1]
    for eps in (1.0, 0.5, 2.0):
        for _ in range(5):
            s0, s1 = random_spd(rng, 2, 1e3), random_spd(rng, 2, 1e3)
            roots = coupling_roots(s0, s1, bt, eps)
            offset = 0.5 * (roots.z_plus - roots.z_minus)
            np.testing.assert_allclose(offset, _offset_via_t_form(s0, s1, bt, eps), atol=1e-9)


def test_initial_conditions_scalar():
    problem = SteeringProblem(scalar_system(), [[1.0]], [[1.0]], 1.0)
    pi0, h0 = initial_conditions(problem, scalar_bt())
    assert pi0[0, 0] == pytest.approx(GOLDEN, abs=1e-12)
    assert h0[0, 0] == pytest.approx(1.0 - GOLDEN, abs=1e-12)


def test_initial_conditions_identity_transport():
    problem = SteeringProblem(scalar_system(), [[1.0]], [[1.0]], 0.0)
    pi0, h0 = initial_conditions(problem, scalar_bt())
    assert pi0[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert h0[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_initial_conditions_branch_consistency():
    problem = inertial_problem()
    bt = propagate(problem.sys, 0.0, 1.0, [1.0])[-1]
    roots = coupling_roots(problem.sigma0, problem.sigma1, bt, problem.epsilon)
    pi0, _ = initial_conditions(problem, bt)
    expected = roots.z_minus + 0.5 * problem.epsilon * np.linalg.inv(problem.sigma0)
    np.testing.assert_allclose(pi0, expected, atol=1e-10)


# ---------------------------------------------------------------------------
# Riccati right-hand sides

def test_rhs_at_zero_matrices():
    sys = inertial_system(q_scale=2.0)
    np.testing.assert_allclose(riccati_rhs_pi(sys, 0.3, np.zeros((2, 2))), -2.0 * np.eye(2))
    np.testing.assert_allclose(riccati_rhs_h(sys, 0.3, np.zeros((2, 2))), 2.0 * np.eye(2))


def test_rhs_scalar_arithmetic():
    sys = scalar_system(q=1.0)
    np.testing.assert_allclose(riccati_rhs_pi(sys, 0.0, np.array([[2.0]])), [[3.0]])


# ---------------------------------------------------------------------------
# end-to-end solve

def test_solve_scalar_against_reference_integration():
    problem = SteeringProblem(scalar_system(), [[1.0]], [[1.0]], 1.0)
    sol = solve(problem, 1000)
    assert sol.boundary_residuals[1] < 1e-8
    # independent reference: scipy on dPi/dt = Pi^2 from the closed-form Pi(0)
    ref = solve_ivp(
        lambda t, y: y**2, (0.0, 1.0), [GOLDEN], t_eval=sol.grid, rtol=1e-12, atol=1e-14
    )
    np.testing.assert_allclose(sol.pi[:, 0, 0], ref.y[0], atol=1e-9)
    # closed form: Pi(t) = Pi0 / (1 - Pi0 t)
    np.testing.assert_allclose(sol.pi[:, 0, 0], GOLDEN / (1.0 - GOLDEN * sol.grid), atol=1e-10)
    # equal marginals, unit noise: sdot = -2 Pi(t) s + 1 integrates in closed
    # form to s(t) = (1 - Pi0 t)^2 + t(1 - Pi0 t), which is 1 at both ends
    shape = (1.0 - GOLDEN * sol.grid) ** 2 + sol.grid * (1.0 - GOLDEN * sol.grid)
    np.testing.assert_allclose(sol.sigma[:, 0, 0], shape, atol=1e-8)
    np.testing.assert_allclose([sol.sigma[0, 0, 0], sol.sigma[-1, 0, 0]], 1.0, atol=1e-10)


def test_solve_inertial_benchmark():
    sol = solve(inertial_problem(), 2000)
    assert sol.boundary_residuals[1] < 1e-6
    assert sol.diagnostics["sum_law_residual"] < 1e-6
    for arr in (sol.pi, sol.h, sol.sigma):
        assert np.abs(arr - np.transpose(arr, (0, 2, 1))).max() < 1e-12


def test_solve_zero_noise_inertial():
    sol = solve(inertial_problem(eps=0.0), 2000)
    assert sol.boundary_residuals[1] < 1e-6
    assert "sum_law_residual" not in sol.diagnostics


def test_solve_negative_state_penalty():
    sol = solve(inertial_problem(q_scale=-5.0), 2000)
    assert sol.boundary_residuals[1] < 1e-6


def test_solve_gain_definition():
    sol = solve(inertial_problem(), 500)
    # K = R^-1 B' Pi with B = [0, 1]' and R = 1: the gain row is Pi's second row
    np.testing.assert_allclose(sol.k[:, 0, :], sol.pi[:, 1, :], atol=1e-13)


def test_solve_fourth_order_boundary_decay():
    coarse = _solve_tolerant(inertial_problem(), grid_size=50).boundary_residuals[1]
    fine = _solve_tolerant(inertial_problem(), grid_size=100).boundary_residuals[1]
    assert coarse / fine > 8.0


def test_solve_residual_error_carries_solution():
    with pytest.raises(BoundaryResidualError) as err:
        solve(inertial_problem(), 4)
    assert err.value.solution is not None
    assert err.value.solution.boundary_residuals[1] > 1e-4


def test_solve_uncontrollable_system_rejected():
    sys = make_system([[0.0, 1.0], [0.0, 0.0]], np.zeros((2, 1)))
    problem = SteeringProblem(sys, 2 * np.eye(2), 0.25 * np.eye(2), 1.0)
    with pytest.raises(ControllabilityError):
        solve(problem, 200)


def test_steering_problem_validation():
    with pytest.raises(DefinitenessError):
        SteeringProblem(scalar_system(), [[0.0]], [[1.0]], 1.0)
    with pytest.raises(DomainError):
        SteeringProblem(scalar_system(), [[1.0]], [[1.0]], -0.5)


# ---------------------------------------------------------------------------
# spurious root escape

def test_escape_scalar_plus_root():
    problem = SteeringProblem(scalar_system(), [[1.0]], [[1.0]], 1.0)
    bts = propagate(problem.sys, 0.0, 1.0, np.linspace(0.0, 1.0, 101))
    report = spurious_root_escape(problem, bts)
    assert report.sign_change
    # X(t) = 1 - t (1/2 + Z+) vanishes at t ~ 0.382
    flip = np.flatnonzero(report.determinants[:-1] * report.determinants[1:] < 0)[0]
    assert report.times[flip] <= 1.0 / (0.5 + 1.0 + np.sqrt(5.0) / 2.0) <= report.times[flip + 1]


def test_escape_scalar_minus_root_clean():
    problem = SteeringProblem(scalar_system(), [[1.0]], [[1.0]], 1.0)
    bts = propagate(problem.sys, 0.0, 1.0, np.linspace(0.0, 1.0, 101))
    roots = coupling_roots(problem.sigma0, problem.sigma1, bts[-1], 1.0)
    report = spurious_root_escape(problem, bts, roots.z_minus)
    assert not report.sign_change
    assert report.min_abs_determinant > 0.1


def test_escape_inertial_case():
    problem = inertial_problem()
    bts = propagate(problem.sys, 0.0, 1.0, np.linspace(0.0, 1.0, 201), 1000)
    roots = coupling_roots(problem.sigma0, problem.sigma1, bts[-1], 1.0)
    assert spurious_root_escape(problem, bts, roots.z_plus).sign_change
    assert not spurious_root_escape(problem, bts, roots.z_minus).sign_change


# ---------------------------------------------------------------------------
# zero-penalty closed form

def test_corollary_scalar():
    problem = SteeringProblem(scalar_system(), [[1.0]], [[1.0]], 1.0)
    pi0, _ = corollary_q_zero(problem)
    assert pi0[0, 0] == pytest.approx(GOLDEN, abs=1e-12)


def test_corollary_matches_hamiltonian_route():
    sys = inertial_system(q_scale=0.0)
    problem = SteeringProblem(sys, 2 * np.eye(2), 0.25 * np.eye(2), 1.0)
    pi0_gram, h0_gram = corollary_q_zero(problem, 1000)
    bt = propagate(sys, 0.0, 1.0, [1.0], 1000)[-1]
    pi0_ham, h0_ham = initial_conditions(problem, bt)
    np.testing.assert_allclose(pi0_gram, pi0_ham, atol=1e-8)
    np.testing.assert_allclose(h0_gram, h0_ham, atol=1e-8)


def test_corollary_isotropic_channels():
    sys = make_system(np.zeros((2, 2)), np.eye(2))
    problem = SteeringProblem(sys, np.eye(2), np.eye(2), 1.0)
    pi0, _ = corollary_q_zero(problem)
    np.testing.assert_allclose(pi0, GOLDEN * np.eye(2), atol=1e-10)


def test_corollary_rejects_nonzero_q():
    with pytest.raises(DomainError):
        corollary_q_zero(inertial_problem())


# ---------------------------------------------------------------------------
# zero-noise limit

def test_epsilon_sweep_scalar_closed_form():
    problem = SteeringProblem(scalar_system(), [[1.0]], [[1.0]], 1.0)
    rows = epsilon_sweep(problem, [1.0, 0.1, 0.01], 1000)
    for row in rows:
        expected = row.epsilon / 2.0 + 1.0 - np.sqrt(row.epsilon**2 / 4.0 + 1.0)
        assert row.gap == pytest.approx(expected, abs=1e-9)
    ratios = [row.gap / row.epsilon for row in rows]
    assert max(ratios) < 0.51  # bounded, tending to 1/2


def test_epsilon_sweep_monotone_inertial():
    rows = epsilon_sweep(inertial_problem(), [10.0, 1.0, 0.1, 0.01, 0.0], 1000)
    gaps = [row.gap for row in rows]
    assert all(a >= b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] == 0.0


def test_epsilon_sweep_single_zero_row():
    rows = epsilon_sweep(inertial_problem(), [0.0], 500)
    assert len(rows) == 1 and rows[0].gap == 0.0


def test_epsilon_sweep_rejects_unsorted():
    with pytest.raises(DomainError):
        epsilon_sweep(inertial_problem(), [0.1, 1.0])


# ---------------------------------------------------------------------------
# general input weight

def test_r_reduction_equivalence():
    direct = _solve_tolerant(inertial_problem(r=4.0 * np.eye(1)))
    transformed_sys = make_system([[0.0, 1.0], [0.0, 0.0]], [[0.0], [0.5]], np.eye(2))
    transformed = _solve_tolerant(
        SteeringProblem(transformed_sys, 2 * np.eye(2), 0.25 * np.eye(2), 1.0)
    )
    np.testing.assert_allclose(direct.pi, transformed.pi, atol=1e-8)


def _solve_tolerant(problem, grid_size=1000):
    try:
        return solve(problem, grid_size)
    except BoundaryResidualError as err:
        return err.solution
