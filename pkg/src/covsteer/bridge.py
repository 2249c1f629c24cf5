"""Coupled-Riccati solver steering a Gaussian state law between two covariances.

Two matrix Riccati flows Pi(t) and H(t) share the dynamics' coefficients but
are coupled only through their boundary conditions

    Pi(0) + H(0) = eps * Sigma0^-1,    Pi(1) + H(1) = eps * Sigma1^-1,

where eps >= 0 is the noise intensity (eps = 0 is the deterministic
mass-transport limit). The boundary problem has a closed-form initial value:
linearizing both flows through the Hamiltonian transition matrix reduces the
coupling to a quadratic matrix equation whose two symmetric roots are written
explicitly in terms of the Phi blocks; only the smaller root yields flows
free of finite escape on [0, 1]. Given Pi(0) the whole solution is a single
forward integration, and the state covariance follows from the closed-loop
Lyapunov equation with diffusion eps * B B'.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    BoundaryResidualError,
    ConditioningError,
    DefinitenessError,
    DomainError,
)
from .hamiltonian import COND_LIMIT, BlockTransition, propagate, symplectic_residual
from .integrate import rk4_grid
from .systems import (
    DEFAULT_STEPS_PER_UNIT,
    TimeVaryingLinearSystem,
    make_system,
    reachability_gramian,
    require_controllable,
    state_transition,
    symmetrize,
)


def sqrt_spd(s: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Unique SPD square root via spectral decomposition."""
    root, _ = _sqrt_spd_pair(s, tol)
    return root


def _sqrt_spd_pair(s: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """(S^1/2, S^-1/2) from one eigendecomposition."""
    s = symmetrize(np.asarray(s, dtype=float))
    w, v = np.linalg.eigh(s)
    floor = tol * max(1.0, float(w.max(initial=0.0)))
    if w.min() <= floor:
        raise DefinitenessError(
            f"matrix is not positive definite (min eigenvalue {w.min():.3e})",
            min_eigenvalue=float(w.min()),
        )
    sw = np.sqrt(w)
    return symmetrize((v * sw) @ v.T), symmetrize((v / sw) @ v.T)


def _inv_spd(s: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    s = symmetrize(np.asarray(s, dtype=float))
    w, v = np.linalg.eigh(s)
    if w.min() <= tol * max(1.0, float(w.max(initial=0.0))):
        raise DefinitenessError(
            f"matrix is not positive definite (min eigenvalue {w.min():.3e})",
            min_eigenvalue=float(w.min()),
        )
    return symmetrize((v / w) @ v.T)


def _refined_root_pair(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(S^1/2, S^-1/2) with one Newton correction on top of the spectral root.

    The correction solves the Sylvester equation R*D + D*R = S - R@R in the
    eigenbasis, recovering the digits eigh loses on ill-conditioned input.
    """
    w, v = np.linalg.eigh(symmetrize(s))
    if w.min() <= 0.0:
        raise DefinitenessError(
            f"matrix is not positive definite (min eigenvalue {w.min():.3e})",
            min_eigenvalue=float(w.min()),
        )
    sw = np.sqrt(w)
    root = (v * sw) @ v.T
    resid = v.T @ (s - root @ root) @ v
    root = symmetrize(root + v @ (resid / np.add.outer(sw, sw)) @ v.T)
    inv_root = symmetrize((v / sw) @ v.T)
    return root, inv_root


def lemma1_residual(x: np.ndarray, y: np.ndarray) -> float:
    """Max-abs difference between the two equivalent SPD square-root expressions

        Y^1/2 (Y^-1/2 X^-1 Y^-1/2 + 1/4 Y^-1/2 X^-1 Y^-1 X^-1 Y^-1/2)^1/2 Y^1/2
      = X^-1/2 (I/4 + X^1/2 Y X^1/2)^1/2 X^-1/2

    for SPD X, Y. Zero in exact arithmetic; the return value measures
    floating-point drift only.
    """
    x = symmetrize(np.asarray(x, dtype=float))
    y = symmetrize(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise DomainError("X and Y must have equal shapes")
    y_h, y_ih = _refined_root_pair(y)
    x_h, x_ih = _refined_root_pair(x)
    # The left inner matrix is C + C^2/4 with C = Y^-1/2 X^-1 Y^-1/2, so its
    # square root shares C's eigenvectors and follows from the scalar map
    # sqrt(l + l^2/4). C itself is G'G for G = X^-1/2 Y^-1/2; an SVD of G
    # delivers C's small eigenvalues to high relative accuracy, where a
    # direct eigh of the squared-condition-number C would not.
    g = x_ih @ y_ih
    _, sv, vt = np.linalg.svd(g)
    cw = sv[::-1] ** 2
    cv = vt[::-1].T
    left = y_h @ ((cv * np.sqrt(cw + 0.25 * cw**2)) @ cv.T) @ y_h
    # Same treatment on the right with D = X^1/2 Y X^1/2 = G'G, G = Y^1/2 X^1/2.
    g = y_h @ x_h
    _, sv, vt = np.linalg.svd(g)
    dw = sv[::-1] ** 2
    dv = vt[::-1].T
    right = x_ih @ ((dv * np.sqrt(0.25 + dw)) @ dv.T) @ x_ih
    return float(np.abs(left - right).max())


@dataclass(frozen=True)
class SteeringProblem:
    """System plus SPD boundary covariances and noise intensity eps >= 0."""

    sys: TimeVaryingLinearSystem
    sigma0: np.ndarray
    sigma1: np.ndarray
    epsilon: float = 1.0

    def __post_init__(self):
        n = self.sys.dim_state
        s0 = symmetrize(np.asarray(self.sigma0, dtype=float))
        s1 = symmetrize(np.asarray(self.sigma1, dtype=float))
        if s0.shape != (n, n) or s1.shape != (n, n):
            raise DomainError("boundary covariances must be n x n")
        for name, s in (("sigma0", s0), ("sigma1", s1)):
            lam = float(np.linalg.eigvalsh(s).min())
            if lam <= 1e-12:
                raise DefinitenessError(
                    f"{name} is not positive definite (min eigenvalue {lam:.3e})",
                    min_eigenvalue=lam,
                )
        if self.epsilon < 0:
            raise DomainError("epsilon must be nonnegative")
        object.__setattr__(self, "sigma0", s0)
        object.__setattr__(self, "sigma1", s1)
        object.__setattr__(self, "epsilon", float(self.epsilon))


@dataclass(frozen=True)
class CouplingRoots:
    """Both symmetric roots of the boundary-coupling quadratic.

    z_minus is the usable branch; z_plus produces a flow with finite escape
    inside (0, 1) and is retained for the escape diagnostic. t_weight is the
    SPD matrix (Phi12' Sigma1^-1 Phi12)^-1 central to the derivation.
    """

    z_minus: np.ndarray
    z_plus: np.ndarray
    t_weight: np.ndarray


def _phi12_inverse(bt: BlockTransition, cond_limit: float) -> np.ndarray:
    cond = np.linalg.cond(bt.phi12)
    if not np.isfinite(cond) or cond > cond_limit:
        raise ConditioningError(
            f"Phi12 too ill-conditioned to invert (condition number {cond:.3e})"
        )
    return np.linalg.inv(bt.phi12)


def coupling_roots(
    sigma0: np.ndarray,
    sigma1: np.ndarray,
    bt: BlockTransition,
    epsilon: float = 1.0,
    cond_limit: float = COND_LIMIT,
) -> CouplingRoots:
    """Closed-form roots of the boundary coupling for noise level eps.

        Z+- = -Phi12^-1 Phi11
              +- S0^-1/2 (eps^2 I / 4 + S0^1/2 Phi12^-1 S1 Phi12^-T S0^1/2)^1/2 S0^-1/2

    evaluated on Phi = Phi(1, 0). For eps != 1 the boundary covariances enter
    through the scaled conditions eps * Sigma^-1, which folds into the
    eps^2 I / 4 term above.
    """
    if epsilon < 0:
        raise DomainError("epsilon must be nonnegative")
    sigma0 = symmetrize(np.asarray(sigma0, dtype=float))
    sigma1 = symmetrize(np.asarray(sigma1, dtype=float))
    inv12 = _phi12_inverse(bt, cond_limit)
    base = symmetrize(-inv12 @ bt.phi11)
    mapped = symmetrize(inv12 @ sigma1 @ inv12.T)
    s0_half, s0_inv_half = _sqrt_spd_pair(sigma0)
    eye = np.eye(sigma0.shape[0])
    core = sqrt_spd(0.25 * epsilon**2 * eye + symmetrize(s0_half @ mapped @ s0_half))
    offset = symmetrize(s0_inv_half @ core @ s0_inv_half)
    t_weight = symmetrize(np.linalg.inv(bt.phi12.T @ _inv_spd(sigma1) @ bt.phi12))
    return CouplingRoots(
        z_minus=symmetrize(base - offset),
        z_plus=symmetrize(base + offset),
        t_weight=t_weight,
    )


def initial_conditions(
    problem: SteeringProblem,
    bt: BlockTransition,
    cond_limit: float = COND_LIMIT,
) -> tuple[np.ndarray, np.ndarray]:
    """Initial values (Pi0, H0) selecting the escape-free branch.

    Pi0 = Z- + eps/2 * Sigma0^-1 and H0 = eps * Sigma0^-1 - Pi0; at eps = 0
    this degenerates to H0 = -Pi0 and only Pi0 drives the control.
    """
    roots = coupling_roots(problem.sigma0, problem.sigma1, bt, problem.epsilon, cond_limit)
    s0_inv = _inv_spd(problem.sigma0)
    pi0 = symmetrize(roots.z_minus + 0.5 * problem.epsilon * s0_inv)
    h0 = symmetrize(problem.epsilon * s0_inv - pi0)
    return pi0, h0


def _quad_term(sys: TimeVaryingLinearSystem, t: float) -> np.ndarray:
    b = sys.B(t)
    return b @ np.linalg.solve(sys.R(t), b.T)


def riccati_rhs_pi(sys: TimeVaryingLinearSystem, t: float, pi: np.ndarray) -> np.ndarray:
    """dPi/dt = -(A'Pi + Pi A - Pi B R^-1 B' Pi + Q)."""
    a = sys.A(t)
    rhs = a.T @ pi + pi @ a - pi @ _quad_term(sys, t) @ pi + sys.Q(t)
    return symmetrize(-rhs)


def riccati_rhs_h(sys: TimeVaryingLinearSystem, t: float, h: np.ndarray) -> np.ndarray:
    """dH/dt = -(A'H + H A + H B R^-1 B' H - Q)."""
    a = sys.A(t)
    rhs = a.T @ h + h @ a + h @ _quad_term(sys, t) @ h - sys.Q(t)
    return symmetrize(-rhs)


@dataclass(frozen=True)
class BridgeSolution:
    """Solved trajectories on a uniform grid over [0, 1].

    Arrays are indexed by grid point: pi, h, sigma are (N+1, n, n) and the
    feedback gain k = R^-1 B' Pi is (N+1, m, n). boundary_residuals holds the
    relative Frobenius mismatch of sigma at t = 0 (zero by construction) and
    t = 1. diagnostics carries solver-side residuals for reporting.
    """

    grid: np.ndarray
    pi: np.ndarray
    h: np.ndarray
    k: np.ndarray
    sigma: np.ndarray
    boundary_residuals: tuple[float, float]
    epsilon: float
    diagnostics: dict = field(default_factory=dict)


def solve(
    problem: SteeringProblem,
    grid_size: int = 1000,
    residual_tol: float = 1e-4,
    controllability_tol: float = 1e-9,
    cond_limit: float = COND_LIMIT,
) -> BridgeSolution:
    """Solve the steering problem end-to-end on a uniform RK4 grid.

    Propagates Phi(1, 0), forms the closed-form (Pi0, H0), then integrates
    Pi, H and the closed-loop covariance jointly (so the gain is evaluated at
    the RK4 stage times exactly), and records boundary and sum-law residuals.
    Raises BoundaryResidualError (solution attached) if the terminal
    covariance misses sigma1 by more than residual_tol in relative Frobenius
    norm.
    """
    if grid_size < 1:
        raise DomainError("grid_size must be positive")
    sys = problem.sys
    n = sys.dim_state
    eps = problem.epsilon
    require_controllable(sys, controllability_tol, grid_size)

    bt = propagate(sys, 0.0, 1.0, [1.0], grid_size)[-1]
    pi0, h0 = initial_conditions(problem, bt, cond_limit)

    def rhs(t, y):
        pi, h, sig = y
        a = sys.A(t)
        b = sys.B(t)
        quad = b @ np.linalg.solve(sys.R(t), b.T)
        q = sys.Q(t)
        d_pi = -(a.T @ pi + pi @ a - pi @ quad @ pi + q)
        d_h = -(a.T @ h + h @ a + h @ quad @ h - q)
        a_cl = a - quad @ pi
        d_sig = a_cl @ sig + sig @ a_cl.T + eps * (b @ b.T)
        return np.stack(
            [symmetrize(d_pi), symmetrize(d_h), symmetrize(d_sig)]
        )

    grid = np.linspace(0.0, 1.0, grid_size + 1)
    y0 = np.stack([pi0, h0, problem.sigma0])
    traj = rk4_grid(rhs, y0, grid)
    pi_t = np.array([symmetrize(y[0]) for y in traj])
    h_t = np.array([symmetrize(y[1]) for y in traj])
    sigma_t = np.array([symmetrize(y[2]) for y in traj])

    gains = np.empty((grid_size + 1, sys.dim_input, n))
    for i, t in enumerate(grid):
        b = sys.B(t)
        gains[i] = np.linalg.solve(sys.R(t), b.T @ pi_t[i])

    res0 = float(
        np.linalg.norm(sigma_t[0] - problem.sigma0) / np.linalg.norm(problem.sigma0)
    )
    res1 = float(
        np.linalg.norm(sigma_t[-1] - problem.sigma1) / np.linalg.norm(problem.sigma1)
    )

    diagnostics = {
        "symplectic_residual": symplectic_residual(bt),
        "pi0_min_eigenvalue": float(np.linalg.eigvalsh(pi0).min()),
    }
    if eps > 0:
        sum_res = 0.0
        for i in range(grid_size + 1):
            target = eps * _inv_spd(sigma_t[i])
            sum_res = max(
                sum_res,
                float(np.linalg.norm(pi_t[i] + h_t[i] - target) / np.linalg.norm(target)),
            )
        diagnostics["sum_law_residual"] = sum_res
        target1 = eps * _inv_spd(problem.sigma1)
        diagnostics["terminal_sum_residual"] = float(
            np.linalg.norm(pi_t[-1] + h_t[-1] - target1) / np.linalg.norm(target1)
        )

    solution = BridgeSolution(
        grid=grid,
        pi=pi_t,
        h=h_t,
        k=gains,
        sigma=sigma_t,
        boundary_residuals=(res0, res1),
        epsilon=eps,
        diagnostics=diagnostics,
    )
    if res1 > residual_tol:
        raise BoundaryResidualError(
            f"terminal covariance residual {res1:.3e} exceeds {residual_tol:.3e}",
            solution=solution,
        )
    return solution


@dataclass(frozen=True)
class EscapeReport:
    """Determinant track of X(t) = Phi11(t,0) + Phi12(t,0)(eps/2 Sigma0^-1 + Z).

    A determinant sign change on (0, 1) witnesses an interior singularity of
    the linearized flow, i.e. finite escape of the corresponding Riccati
    solution. Expected for the plus root and absent for the minus root.
    """

    times: np.ndarray
    determinants: np.ndarray
    min_abs_determinant: float
    sign_change: bool


def spurious_root_escape(
    problem: SteeringProblem,
    checkpoints: Sequence[BlockTransition],
    root: np.ndarray | None = None,
    cond_limit: float = COND_LIMIT,
) -> EscapeReport:
    """Scan det X(t) along Hamiltonian checkpoints; defaults to the plus root."""
    if len(checkpoints) == 0:
        raise DomainError("escape scan needs at least one checkpoint")
    if root is None:
        final = checkpoints[-1]
        roots = coupling_roots(problem.sigma0, problem.sigma1, final, problem.epsilon, cond_limit)
        root = roots.z_plus
    s0_inv = _inv_spd(problem.sigma0)
    y0 = 0.5 * problem.epsilon * s0_inv + root
    times = np.array([bt.t for bt in checkpoints])
    dets = np.array(
        [np.linalg.det(bt.phi11 + bt.phi12 @ y0) for bt in checkpoints]
    )
    interior = dets[(times > 0.0) & (times < 1.0 + 1e-12)]
    sign_change = bool(np.any(interior[:-1] * interior[1:] < 0)) if len(interior) > 1 else False
    return EscapeReport(
        times=times,
        determinants=dets,
        min_abs_determinant=float(np.abs(dets).min()),
        sign_change=sign_change,
    )


def corollary_q_zero(
    problem: SteeringProblem,
    steps_per_unit: int = DEFAULT_STEPS_PER_UNIT,
) -> tuple[np.ndarray, np.ndarray]:
    """Gramian-route initial values for zero state penalty.

    With Q = 0 the Hamiltonian blocks collapse to Phi11 = Psi(1, 0) and
    Phi12 = -M(1, 0) Psi(1, 0)^-T, so Pi0 follows from the drift transition
    matrix and the reachability Gramian alone (general R folds into the
    Gramian through the scaled channel B R^-1/2). Must agree with
    :func:`initial_conditions` on the same problem.
    """
    sys = problem.sys
    for t in np.linspace(0.0, 1.0, 7):
        if np.abs(sys.Q(t)).max() > 1e-12:
            raise DomainError("corollary_q_zero requires Q = 0")

    def b_scaled(t):
        _, r_inv_half = _sqrt_spd_pair(sys.R(t))
        return sys.B(t) @ r_inv_half

    scaled = make_system(sys.A, b_scaled)
    psi = state_transition(scaled, 1.0, 0.0, steps_per_unit)
    gram = reachability_gramian(scaled, 1.0, 0.0, steps_per_unit)
    gram_inv = _inv_spd(gram)

    eps = problem.epsilon
    s0_inv = _inv_spd(problem.sigma0)
    s0_half, s0_inv_half = _sqrt_spd_pair(problem.sigma0)
    mid = symmetrize(psi.T @ gram_inv @ problem.sigma1 @ gram_inv @ psi)
    eye = np.eye(sys.dim_state)
    core = sqrt_spd(0.25 * eps**2 * eye + symmetrize(s0_half @ mid @ s0_half))
    pi0 = symmetrize(
        0.5 * eps * s0_inv
        + psi.T @ gram_inv @ psi
        - s0_inv_half @ core @ s0_inv_half
    )
    h0 = symmetrize(eps * s0_inv - pi0)
    return pi0, h0


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    pi0: np.ndarray
    gap: float


def epsilon_sweep(
    problem: SteeringProblem,
    eps_list: Sequence[float],
    grid_size: int = 1000,
) -> list[SweepRow]:
    """Initial values Pi0(eps) and their Frobenius gap to the zero-noise Pi0.

    The Hamiltonian transition matrix does not depend on eps, so one
    propagation serves the whole sweep. eps_list must be sorted descending
    and nonnegative; the gap column is expected to decrease monotonically
    and scale O(eps).
    """
    eps_arr = [float(e) for e in eps_list]
    if len(eps_arr) == 0:
        raise DomainError("eps_list must not be empty")
    if any(e < 0 for e in eps_arr):
        raise DomainError("eps values must be nonnegative")
    if any(b > a for a, b in zip(eps_arr, eps_arr[1:])):
        raise DomainError("eps_list must be sorted descending")

    bt = propagate(problem.sys, 0.0, 1.0, [1.0], grid_size)[-1]

    def pi0_at(eps):
        p = SteeringProblem(problem.sys, problem.sigma0, problem.sigma1, eps)
        return initial_conditions(p, bt)[0]

    pi0_limit = pi0_at(0.0)
    rows = []
    for eps in eps_arr:
        pi0 = pi0_at(eps)
        rows.append(SweepRow(eps, pi0, float(np.linalg.norm(pi0 - pi0_limit))))
    return rows
