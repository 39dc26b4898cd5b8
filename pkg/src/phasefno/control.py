"""Optimal distributed control of the Burgers' system via the adjoint method.

Minimizes the quadratic tracking cost

    J(u) = integral over the space-time domain of
           (phi(u) - phi_d)^2 + lambda u^2

with phi(u) the forward solve. The gradient comes from the discrete
adjoint of the exact step recursion in the solver module, so the
directional derivative of the discrete J matches the returned gradient
to machine precision, not just to discretization order.

Conventions: the cost uses trapezoidal quadrature on the output grid;
``gradient`` returns dJ/du entry by entry, which therefore carries the
quadrature weights. Dividing by those weights recovers the function-
space object 2*lambda*u - psi with psi the adjoint state, and that
weighted direction is what the descent loop steps along.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from . import burgers
from .spectral import Field2D, GridSpec


class LineSearchError(RuntimeError):
    """Armijo search ran out of halvings; carries the last iterate."""

    def __init__(self, iteration, iterate, history):
        super().__init__(f"line search failed after {iteration} "
                         f"descent iterations")
        self.iterate = iterate
        self.history = history


@dataclass
class ControlProblem:
    base: burgers.BurgersProblem     # u field ignored; decision variable
    phi_d: np.ndarray                # (n_x, n_t) desired state
    lam: float = 0.1
    max_iter: int = 200
    grad_tol: float = 1e-3
    armijo_c: float = 1e-4
    max_halvings: int = 40

    def __post_init__(self):
        self.phi_d = np.asarray(self.phi_d, dtype=np.float64)
        if self.lam <= 0:
            raise ValueError(f"regularization must be positive, "
                             f"got {self.lam}")
        grid = self.base.grid
        if self.phi_d.shape != (grid.n_x, grid.n_t):
            raise ValueError(f"phi_d shape {self.phi_d.shape} != "
                             f"({grid.n_x}, {grid.n_t})")
        if not np.all(np.isfinite(self.phi_d)):
            raise ValueError("phi_d must be finite")


def quadrature_weights(grid: GridSpec) -> np.ndarray:
    """Trapezoidal weights W with sum(W * f) ~ integral of f over the domain."""
    def line(n, length):
        w = np.full(n, length / (n - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        return w
    return np.outer(line(grid.n_x, grid.length_x),
                    line(grid.n_t, grid.length_t))


def _with_control(problem: ControlProblem, u: np.ndarray):
    p = problem.base
    return burgers.BurgersProblem(p.grid, p.phi0, p.g, p.h,
                                  np.asarray(u, dtype=np.float64),
                                  p.nu, p.r_x, p.r_t)


def evaluate_cost(u, problem: ControlProblem):
    """Forward solve plus quadrature; returns (J, phi on the output grid)."""
    phi = burgers.solve(_with_control(problem, u))
    w = quadrature_weights(problem.base.grid)
    track = np.sum(w * (phi.values - problem.phi_d) ** 2)
    reg = problem.lam * np.sum(w * np.asarray(u) ** 2)
    return track + reg, phi


def gradient(u, problem: ControlProblem) -> np.ndarray:
    """dJ/du on the output grid via one forward and one adjoint sweep."""
    u = np.asarray(u, dtype=np.float64)
    bp = _with_control(problem, u)
    phi_fine, d = burgers.solve_internal(bp)
    grid = bp.grid
    w = quadrature_weights(grid)
    misfit = 2.0 * w * (burgers.restrict(phi_fine, bp) - problem.phi_d)

    r_x, r_t = bp.r_x, bp.r_t
    scale = d.dt / (2.0 * d.dx)
    half = r_t * 2
    # a[n] = dJ/dphi[n] restricted to interior internal nodes
    a = np.zeros(d.n_ix - 2)
    interior_coarse = np.arange(1, grid.n_x - 1)
    aligned = interior_coarse * r_x - 1          # interior-vector indices
    grad_u = 2.0 * problem.lam * w * u

    # seed with the final-time tracking term
    a[aligned] += misfit[1:-1, -1]
    for n in range(d.n_steps - 1, -1, -1):
        y = solve_banded((1, 1), d.banded, a)
        yext = np.zeros(d.n_ix)
        yext[1:-1] = y

        # forcing contribution of this step, pushed to the coarse grid
        j, s2 = divmod(2 * n + 1, half)
        gamma = s2 / half
        pulled = d.dt * (d.p_x.T @ yext)
        grad_u[:, j] += (1 - gamma) * pulled
        grad_u[:, j + 1] += gamma * pulled

        cur = phi_fine[n]
        a = (yext[1:-1]
             + d.beta * (yext[:-2] - 2.0 * yext[1:-1] + yext[2:])
             + scale * cur[1:-1] * (yext[2:] - yext[:-2]))
        if n % r_t == 0 and n > 0:
            a[aligned] += misfit[1:-1, n // r_t]
    return grad_u


@dataclass
class ControlResult:
    u: Field2D
    phi: Field2D
    history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def optimize(problem: ControlProblem) -> ControlResult:
    """Weighted steepest descent with Armijo backtracking from u = 0."""
    grid = problem.base.grid
    w = quadrature_weights(grid)
    u = np.zeros((grid.n_x, grid.n_t))
    cost, phi = evaluate_cost(u, problem)
    history = [cost]
    g = gradient(u, problem)
    # norm of the function-space gradient g / w, measured in L2(w)
    norm0 = np.sqrt(np.sum(g * g / w))
    if norm0 == 0.0:
        return ControlResult(Field2D(u, grid), phi, history, 0, True)

    step = 1.0
    for it in range(1, problem.max_iter + 1):
        direction = -g / w
        slope = np.sum(g * direction)            # negative by construction
        for halving in range(problem.max_halvings + 1):
            trial = u + step * direction
            try:
                trial_cost, trial_phi = evaluate_cost(trial, problem)
            except burgers.BlowupError:
                trial_cost = np.inf
            if trial_cost <= cost + problem.armijo_c * step * slope:
                break
            step *= 0.5
        else:
            raise LineSearchError(it, Field2D(u, grid), history)
        u, cost, phi = trial, trial_cost, trial_phi
        history.append(cost)
        step *= 2.0
        g = gradient(u, problem)
        norm = np.sqrt(np.sum(g * g / w))
        if norm / norm0 < problem.grad_tol:
            return ControlResult(Field2D(u, grid), phi, history, it, True)
    return ControlResult(Field2D(u, grid), phi, history,
                         problem.max_iter, False)
