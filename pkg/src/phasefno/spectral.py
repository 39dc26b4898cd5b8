"""Truncated Fourier analysis and synthesis on small space-time grids.

Fields live on uniform endpoint-inclusive grids over [0, L_x] x [0, L_t].
Analysis projects onto a retained set of integer mode pairs (m_x, m_t) with
|m| <= max_mode by direct summation against the conjugate exponentials;
synthesis contracts mode coefficients against an explicit basis matrix of
shape (grid points x modes). No FFT: the grids are tiny, the mode set is
tiny, and the extended synthesis needs a basis an FFT cannot produce.

The extended synthesis rotates each retained frequency into the complex
plane, z = k * exp(i * theta), so the basis entry exp(i z . xi) picks up a
real exponential envelope exp(-(k sin theta) . xi) on top of the usual
oscillation exp(i (k cos theta) . xi). theta = 0 reproduces the standard
basis. Envelope exponents are bounded before exponentiation; anything
beyond EXPONENT_LIMIT raises OverflowError naming the offending mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

EXPONENT_LIMIT = 700.0

_E_X = np.array([[1.0], [0.0]])  # column selectors for the two theta angles
_E_T = np.array([[0.0], [1.0]])


@dataclass(frozen=True)
class GridSpec:
    """Uniform endpoint-inclusive grid on [0, length_x] x [0, length_t]."""

    n_x: int
    n_t: int
    length_x: float = 1.0
    length_t: float = 0.5

    def __post_init__(self):
        if self.n_x < 2 or self.n_t < 2:
            raise ValueError(f"grid needs at least 2 points per axis, got "
                             f"{self.n_x} x {self.n_t}")
        if self.length_x <= 0 or self.length_t <= 0:
            raise ValueError("grid lengths must be positive")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.length_x, self.n_x)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.length_t, self.n_t)

    @property
    def n_points(self) -> int:
        return self.n_x * self.n_t

    def flat_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """x and t of every grid point, flattened x-major, each (n_x*n_t,)."""
        xx, tt = np.meshgrid(self.x, self.t, indexing="ij")
        return xx.ravel(), tt.ravel()


@dataclass(eq=False)
class Field2D:
    """A real scalar field sampled on a GridSpec, values indexed [i_x, j_t]."""

    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.grid.n_x, self.grid.n_t):
            raise ValueError(f"field shape {self.values.shape} does not match "
                             f"grid {self.grid.n_x} x {self.grid.n_t}")


@dataclass(eq=False)
class ModeSet:
    """Retained mode pairs and their frequencies.

    pairs holds the (2*max_mode+1)^2 integer index pairs, x-major; freqs
    holds the matching (k_x, k_t). Convention "angular" maps m to
    2*pi*m/L per axis, "integer" uses the bare indices as frequencies.
    """

    max_mode: int
    convention: str
    pairs: np.ndarray
    freqs: np.ndarray

    @classmethod
    def build(cls, max_mode: int, grid: GridSpec,
              convention: str = "angular") -> "ModeSet":
        if max_mode < 0:
            raise ValueError("max_mode must be nonnegative")
        ms = np.arange(-max_mode, max_mode + 1)
        pairs = np.array([(mx, mt) for mx in ms for mt in ms], dtype=np.int64)
        if convention == "angular":
            freqs = 2.0 * np.pi * pairs / np.array([grid.length_x, grid.length_t])
        elif convention == "integer":
            freqs = pairs.astype(np.float64)
        else:
            raise ValueError(f"unknown frequency convention {convention!r}")
        return cls(max_mode, convention, pairs, freqs)

    def __len__(self):
        return self.pairs.shape[0]

    def index_of(self, m_x: int, m_t: int) -> int:
        n = 2 * self.max_mode + 1
        if abs(m_x) > self.max_mode or abs(m_t) > self.max_mode:
            raise ValueError(f"mode ({m_x}, {m_t}) outside retained set")
        return (m_x + self.max_mode) * n + (m_t + self.max_mode)


@dataclass(eq=False)
class SpectralWeights:
    """Per-mode channel mixing K_hat and per-mode angles theta for one layer."""

    k_hat: np.ndarray   # (modes, n_v, n_v) complex
    theta: np.ndarray   # (modes, 2) or (1, 2) real


def analysis_matrix(modes: ModeSet, grid: GridSpec) -> np.ndarray:
    """Constant (grid points x modes) matrix of exp(-i k . xi) / (n_x n_t)."""
    x, t = grid.flat_coords()
    phase = np.outer(x, modes.freqs[:, 0]) + np.outer(t, modes.freqs[:, 1])
    return np.exp(-1j * phase) / grid.n_points


def synthesis_basis(modes: ModeSet, grid: GridSpec, theta=None):
    """(grid points x modes) synthesis basis exp(i z . xi).

    With theta None this is the standard oscillatory basis, returned as a
    constant ndarray. With theta (a Tensor or array of shape (modes, 2) or
    (1, 2)) the rotated frequencies produce the enveloped basis, built
    through tape ops so gradients reach theta.
    """
    x, t = grid.flat_coords()
    kx = modes.freqs[:, 0]
    kt = modes.freqs[:, 1]
    if theta is None:
        phase = (np.outer(x, kx)) + (np.outer(t, kt))
        return np.exp(1j * phase)

    theta = ad.as_tensor(theta)
    if theta.ndim != 2 or theta.shape[1] != 2 or \
            theta.shape[0] not in (1, len(modes)):
        raise ValueError(f"theta shape {theta.shape} does not match "
                         f"{len(modes)} modes")
    _check_exponents(modes, theta.data, grid)
    xc = Tensor(x[:, None])
    tc = Tensor(t[:, None])
    kxr = Tensor(kx[None, :])
    ktr = Tensor(kt[None, :])
    n_rows = theta.shape[0]
    th_x = ad.reshape(ad.matmul(theta, Tensor(_E_X)), (1, n_rows))
    th_t = ad.reshape(ad.matmul(theta, Tensor(_E_T)), (1, n_rows))
    phase = ad.add(ad.mul(ad.mul(ad.cos(th_x), kxr), xc),
                   ad.mul(ad.mul(ad.cos(th_t), ktr), tc))
    envelope = ad.neg(ad.add(ad.mul(ad.mul(ad.sin(th_x), kxr), xc),
                             ad.mul(ad.mul(ad.sin(th_t), ktr), tc)))
    return ad.exp(ad.make_complex(envelope, phase))


def exponent_bound(modes: ModeSet, theta: np.ndarray, grid: GridSpec) -> float:
    """Largest envelope exponent magnitude reachable on the grid."""
    return float(np.max(_exponents_per_mode(modes, np.asarray(theta), grid)))


def _exponents_per_mode(modes: ModeSet, theta: np.ndarray,
                        grid: GridSpec) -> np.ndarray:
    sin_th = np.abs(np.sin(theta))  # (modes or 1, 2)
    ex = np.abs(modes.freqs[:, 0]) * sin_th[..., 0] * grid.length_x
    et = np.abs(modes.freqs[:, 1]) * sin_th[..., 1] * grid.length_t
    return ex + et


def _check_exponents(modes, theta, grid):
    exps = _exponents_per_mode(modes, np.asarray(theta), grid)
    worst = int(np.argmax(exps))
    if exps[worst] > EXPONENT_LIMIT:
        pair = modes.pairs[worst % len(modes)]
        raise OverflowError(
            f"envelope exponent {exps[worst]:.1f} at mode "
            f"({pair[0]}, {pair[1]}) exceeds {EXPONENT_LIMIT:.0f}")


def analyze(v, modes: ModeSet, grid: GridSpec) -> Tensor:
    """Project a real field stack (n_v, n_x, n_t) onto the retained modes.

    Returns coefficients of shape (modes, n_v). For real input the result
    satisfies v_hat(-m) = conj(v_hat(m)).
    """
    v = ad.as_tensor(v)
    if v.is_complex:
        raise ValueError("analyze expects a real field")
    if v.ndim != 3 or v.shape[1:] != (grid.n_x, grid.n_t):
        raise ValueError(f"field shape {v.shape} does not match grid "
                         f"{grid.n_x} x {grid.n_t}")
    flat = ad.reshape(v, (v.shape[0], grid.n_points))
    e = Tensor(analysis_matrix(modes, grid))
    return ad.transpose(ad.matmul(flat, e))


def _contract(v_hat, k_hat, basis, n_v, grid):
    mixed = ad.bmm(k_hat, ad.reshape(v_hat, (v_hat.shape[0], n_v, 1)))
    mixed = ad.reshape(mixed, (v_hat.shape[0], n_v))
    field = ad.real_part(ad.matmul(basis, mixed))
    return ad.reshape(ad.transpose(field), (n_v, grid.n_x, grid.n_t))


def _check_synth_shapes(v_hat, k_hat, modes):
    if v_hat.ndim != 2 or v_hat.shape[0] != len(modes):
        raise ValueError(f"coefficients shape {v_hat.shape} does not match "
                         f"{len(modes)} modes")
    n_v = v_hat.shape[1]
    if k_hat.shape != (len(modes), n_v, n_v):
        raise ValueError(f"mode weights shape {k_hat.shape} incompatible with "
                         f"coefficients {v_hat.shape}")
    return n_v


def synthesize_standard(v_hat, k_hat, modes: ModeSet, grid: GridSpec) -> Tensor:
    """Real field Re[sum_m exp(i k . xi) K_hat(m) v_hat(m)], (n_v, n_x, n_t)."""
    v_hat, k_hat = ad.as_tensor(v_hat), ad.as_tensor(k_hat)
    n_v = _check_synth_shapes(v_hat, k_hat, modes)
    basis = Tensor(synthesis_basis(modes, grid))
    return _contract(v_hat, k_hat, basis, n_v, grid)


def synthesize_extended(v_hat, k_hat, theta, modes: ModeSet,
                        grid: GridSpec) -> Tensor:
    """Like synthesize_standard but with rotated frequencies z = k e^{i theta}."""
    v_hat, k_hat = ad.as_tensor(v_hat), ad.as_tensor(k_hat)
    n_v = _check_synth_shapes(v_hat, k_hat, modes)
    basis = synthesis_basis(modes, grid, theta)
    out = _contract(v_hat, k_hat, basis, n_v, grid)
    if not np.all(np.isfinite(out.data)):
        raise OverflowError("non-finite values in extended synthesis")
    return out
