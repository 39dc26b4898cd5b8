"""Closed-form optimal control of the 1-D heat equation on the line.

For the tracking problem with zero desired state and unit control
weight, the optimal state and control are inverse transforms

    phi*(x,t) = (1/2pi) int e^{i k x - w(k) t} phi0_hat(k) dk
    u*(x,t)   = (1/2pi) int e^{i k x - w(k) t} (k^2 - w(k)) phi0_hat(k) dk

with dispersion w(k) = sqrt(k^4 + 1). Both satisfy the first-order
optimality system exactly: the state equation phi_t = phi_xx + u and,
with psi = u*, the adjoint equation -psi_t = psi_xx - phi. The
integrand identity behind that is (w + k^2)(k^2 - w) + 1 = 0.

Initial data is a Gaussian bump, whose transform is known in closed
form, so the only numerics here are a trapezoidal k-quadrature and the
finite-difference residual checks. Everything evaluates on the
symmetric window [-X, X] x [0, T] chosen large enough that field tails
are negligible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TAIL_TOLERANCE = 1e-12
RESIDUE_LIMIT = 1e-8


@dataclass(frozen=True)
class GaussianBump:
    amplitude: float = 1.0
    center: float = 0.0
    width: float = 1.0

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError(f"width must be positive, got {self.width}")
        if not np.isfinite(self.amplitude) or not np.isfinite(self.center):
            raise ValueError("amplitude and center must be finite")

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.amplitude * np.exp(-(x - self.center) ** 2
                                       / (2.0 * self.width ** 2))

    def transform(self, k):
        """Fourier transform with the e^{-i k x} convention."""
        k = np.asarray(k, dtype=np.float64)
        return (self.amplitude * self.width * np.sqrt(2.0 * np.pi)
                * np.exp(-0.5 * (k * self.width) ** 2)
                * np.exp(-1j * k * self.center))


@dataclass(frozen=True)
class HeatLqrProblem:
    bump: GaussianBump = GaussianBump()
    x_extent: float = 12.0
    t_final: float = 8.0
    n_x: int = 241
    n_t: int = 161
    k_max: float = 12.0
    n_k: int = 800

    def __post_init__(self):
        if self.k_max <= 0:
            raise ValueError("k_max must be positive")
        if self.n_k < 2 or self.n_k % 2 != 0:
            raise ValueError(f"n_k must be a positive even count, "
                             f"got {self.n_k}")
        if self.x_extent <= 0 or self.t_final <= 0:
            raise ValueError("evaluation window must have positive extent")
        if self.n_x < 2 or self.n_t < 2:
            raise ValueError("need at least 2 grid points per axis")

    @property
    def x(self):
        return np.linspace(-self.x_extent, self.x_extent, self.n_x)

    @property
    def t(self):
        return np.linspace(0.0, self.t_final, self.n_t)

    @property
    def k(self):
        return np.linspace(-self.k_max, self.k_max, self.n_k + 1)


def dispersion(k):
    k = np.asarray(k, dtype=np.float64)
    return np.sqrt(k ** 4 + 1.0)


def _k_weights(problem):
    dk = 2.0 * problem.k_max / problem.n_k
    w = np.full(problem.n_k + 1, dk)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _synthesize(problem, coeffs, x, t):
    """Evaluate (1/2pi) sum_k w_k coeffs(k) e^{i k x - w(k) t} on a grid."""
    k = problem.k
    weighted = coeffs * _k_weights(problem) / (2.0 * np.pi)
    osc = np.exp(1j * np.outer(x, k))                  # (n_x, n_k+1)
    damp = np.exp(-np.outer(dispersion(k), t))         # (n_k+1, n_t)
    return osc @ (weighted[:, None] * damp)


def optimal_fields(problem: HeatLqrProblem):
    """Optimal state and control on the problem's grid, as real arrays.

    Raises if the quadrature window clips the initial transform or if
    the synthesized fields carry a non-negligible imaginary part.
    """
    k = problem.k
    phi0_hat = problem.bump.transform(k)
    tail = max(abs(phi0_hat[0]), abs(phi0_hat[-1]))
    if tail >= TAIL_TOLERANCE:
        raise ValueError(f"quadrature window too small: |phi0_hat| = "
                         f"{tail:.3g} at k = +-{problem.k_max}")
    phi = _synthesize(problem, phi0_hat, problem.x, problem.t)
    u = _synthesize(problem, (k ** 2 - dispersion(k)) * phi0_hat,
                    problem.x, problem.t)
    residue = max(np.max(np.abs(phi.imag)), np.max(np.abs(u.imag)))
    if residue > RESIDUE_LIMIT:
        raise ValueError(f"imaginary residue {residue:.3g} exceeds "
                         f"{RESIDUE_LIMIT:g}; quadrature window too small")
    return phi.real, u.real


def _fd4_first(f, h, axis):
    """Fourth-order first derivative at interior points (trims 2 each end)."""
    f = np.moveaxis(f, axis, 0)
    d = (-f[4:] + 8.0 * f[3:-1] - 8.0 * f[1:-3] + f[:-4]) / (12.0 * h)
    return np.moveaxis(d, 0, axis)


def _fd4_second(f, h, axis):
    f = np.moveaxis(f, axis, 0)
    d = (-f[4:] + 16.0 * f[3:-1] - 30.0 * f[2:-2] + 16.0 * f[1:-3]
         - f[:-4]) / (12.0 * h * h)
    return np.moveaxis(d, 0, axis)


def optimality_residuals(problem: HeatLqrProblem, x_span=5.0,
                         t_span=(0.5, 3.0), n_x=321, n_t=321):
    """Max residuals of the state and adjoint equations on a fine grid.

    The fields are evaluated analytically on the fine grid, then the
    equations phi_t - phi_xx - u = 0 and -psi_t - psi_xx + phi = 0
    (psi = u) are checked with fourth-order central differences; both
    maxima are over the doubly-interior region.
    """
    x = np.linspace(-x_span, x_span, n_x)
    t = np.linspace(t_span[0], t_span[1], n_t)
    dx, dt = x[1] - x[0], t[1] - t[0]
    k = problem.k
    phi0_hat = problem.bump.transform(k)
    phi = _synthesize(problem, phi0_hat, x, t).real
    u = _synthesize(problem, (k ** 2 - dispersion(k)) * phi0_hat, x, t).real

    phi_t = _fd4_first(phi, dt, 1)[2:-2, :]
    phi_xx = _fd4_second(phi, dx, 0)[:, 2:-2]
    u_t = _fd4_first(u, dt, 1)[2:-2, :]
    u_xx = _fd4_second(u, dx, 0)[:, 2:-2]
    core = np.s_[2:-2, 2:-2]
    state = np.max(np.abs(phi_t - phi_xx - u[core]))
    adjoint = np.max(np.abs(-u_t - u_xx + phi[core]))
    return state, adjoint


def _quadrature(x, t):
    def line(v):
        w = np.full(len(v), v[1] - v[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        return w
    return np.outer(line(x), line(t))


def perturbation_response(problem: HeatLqrProblem, delta: GaussianBump):
    """Heat response v to the time-constant forcing delta, v(0) = 0.

    In transform space v_hat(k,t) = delta_hat(k) (1 - e^{-k^2 t})/k^2,
    with the k -> 0 limit delta_hat(0) t.
    """
    k = problem.k
    t = problem.t
    dhat = delta.transform(k)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = (1.0 - np.exp(-np.outer(k ** 2, t))) / (k ** 2)[:, None]
    gain[np.abs(k) < 1e-12, :] = t[None, :]
    weighted = dhat * _k_weights(problem) / (2.0 * np.pi)
    osc = np.exp(1j * np.outer(problem.x, k))
    v = osc @ (weighted[:, None] * gain)
    return v.real


@dataclass
class ProbeEntry:
    delta: GaussianBump
    dj_plus: float
    dj_minus: float


@dataclass
class ProbeReport:
    j_star: float
    eps: float
    entries: list

    def all_increasing(self, tol=0.0):
        return all(e.dj_plus >= -tol and e.dj_minus >= -tol
                   for e in self.entries)


def cost_optimality_probe(problem: HeatLqrProblem, deltas=None,
                          eps=1e-2, seed=0) -> ProbeReport:
    """Compare J(u* +- eps delta) against J(u*) on the truncated window.

    The constraint is linear, so the perturbed state is exactly
    phi* + eps v with v the closed-form heat response; no PDE solves
    are involved. With ``deltas`` omitted, draws 10 random bumps.
    """
    if deltas is None:
        rng = np.random.default_rng(seed)
        deltas = [GaussianBump(amplitude=float(rng.uniform(0.2, 1.0)
                                               * rng.choice([-1, 1])),
                               center=float(rng.uniform(-2.0, 2.0)),
                               width=float(rng.uniform(0.3, 1.0)))
                  for _ in range(10)]
    phi, u = optimal_fields(problem)
    w = _quadrature(problem.x, problem.t)

    def cost(state, ctrl):
        return float(np.sum(w * (state ** 2 + ctrl ** 2)))

    j_star = cost(phi, u)
    entries = []
    for delta in deltas:
        v = perturbation_response(problem, delta)
        dfield = delta(problem.x)[:, None] * np.ones_like(phi)
        plus = cost(phi + eps * v, u + eps * dfield) - j_star
        minus = cost(phi - eps * v, u - eps * dfield) - j_star
        entries.append(ProbeEntry(delta, plus, minus))
    return ProbeReport(j_star, eps, entries)
