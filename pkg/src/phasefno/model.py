"""Operator network: pointwise lifting, spectral mixing layers, projection.

The network maps ``n_a`` input channels on a space-time grid to ``n_b``
output channels. Each of the L layers computes

    v <- gelu(norm(W v + K v))

where W acts pointwise across channels and K mixes a truncated set of
frequencies with per-mode complex matrices. The ``fno_phase`` variant
additionally rotates every retained frequency by a learnable angle
pair, which multiplies the oscillatory basis by an exponential
envelope; at zero angles it coincides with the ``fno`` baseline
exactly, and the forward pass routes through the identical code path
whenever the angles are all zero and not being trained.

Fields move through the layers flattened to (channels, batch*points),
so pointwise maps are single matrix products and batch norm reduces
over batch and grid jointly. The spectral step reshapes per sample
around the shared analysis and synthesis contractions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import spectral as sp
from .arrayio import ArchiveError, load_archive, save_archive

VARIANTS = ("fno", "fno_phase")
CHECKPOINT_VERSION = "1"

# Training-time ceiling for the envelope exponent. e^60 is far below
# float64 overflow but large enough that the reference experiments
# (bound <= 16*pi) never touch it.
TRAIN_EXPONENT_LIMIT = 60.0


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    n_a: int
    n_b: int
    n_v: int | None = None
    L: int = 4
    M: int = 4
    activation: str = "gelu"
    use_norm: bool = True
    convention: str = "angular"
    theta_mode: str = "per_mode"
    seed: int = 0

    def __post_init__(self):
        if self.n_v is None:
            object.__setattr__(self, "n_v", self.n_a)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.L < 1 or self.M < 0:
            raise ValueError("need L >= 1 and M >= 0")
        if self.n_v < self.n_a:
            raise ValueError(
                f"lifted width n_v={self.n_v} must be >= n_a={self.n_a}")
        if self.activation != "gelu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.convention not in ("angular", "integer"):
            raise ValueError(f"unknown frequency convention "
                             f"{self.convention!r}")
        if self.theta_mode not in ("per_mode", "per_dim"):
            raise ValueError(f"unknown theta mode {self.theta_mode!r}")

    @property
    def n_modes(self):
        return (2 * self.M + 1) ** 2


@dataclass
class LayerParams:
    w: np.ndarray                    # (n_v, n_v)
    k_hat: np.ndarray                # (n_modes, n_v, n_v) complex
    theta: np.ndarray | None         # (n_modes|1, 2), None for baseline
    gamma: np.ndarray | None         # (n_v,) when norm is on
    beta: np.ndarray | None
    norm_state: ad.BatchNormState | None


@dataclass
class ModelParams:
    r_w: np.ndarray                  # (n_v, n_a)
    r_b: np.ndarray                  # (n_v,)
    layers: list[LayerParams]
    q_w: np.ndarray                  # (n_b, n_v)
    q_b: np.ndarray                  # (n_b,)

    def copy(self):
        return ModelParams(
            self.r_w.copy(), self.r_b.copy(),
            [LayerParams(l.w.copy(), l.k_hat.copy(),
                         None if l.theta is None else l.theta.copy(),
                         None if l.gamma is None else l.gamma.copy(),
                         None if l.beta is None else l.beta.copy(),
                         None if l.norm_state is None else l.norm_state.copy())
             for l in self.layers],
            self.q_w.copy(), self.q_b.copy())


def init(config: ModelConfig) -> ModelParams:
    """Draw fresh parameters from the config's seed.

    Draw order is fixed (lifting, then per layer W and the two halves
    of K-hat, then projection) so a seed pins every byte. Angles start
    at zero so the phase variant begins exactly at the baseline.
    """
    rng = np.random.default_rng(config.seed)
    n_v, n_modes = config.n_v, config.n_modes
    bound = 1.0 / np.sqrt(n_v)
    k_scale = 1.0 / (n_v * n_modes)

    def uni(scale, *shape):
        return rng.uniform(-scale, scale, shape)

    r_w, r_b = uni(bound, n_v, config.n_a), uni(bound, n_v)
    layers = []
    for _ in range(config.L):
        w = uni(bound, n_v, n_v)
        k_hat = (uni(k_scale, n_modes, n_v, n_v)
                 + 1j * uni(k_scale, n_modes, n_v, n_v))
        if config.variant == "fno_phase":
            rows = n_modes if config.theta_mode == "per_mode" else 1
            theta = np.zeros((rows, 2))
        else:
            theta = None
        if config.use_norm:
            state = ad.BatchNormState.fresh(n_v)
            layers.append(LayerParams(w, k_hat, theta,
                                      np.ones(n_v), np.zeros(n_v), state))
        else:
            layers.append(LayerParams(w, k_hat, theta, None, None, None))
    q_w, q_b = uni(bound, config.n_b, n_v), uni(bound, config.n_b)
    return ModelParams(r_w, r_b, layers, q_w, q_b)


def trainable_names(config: ModelConfig, train_theta: bool = True):
    """Canonical parameter names, in checkpoint and optimizer order."""
    names = ["r_w", "r_b"]
    for l in range(config.L):
        names += [f"layer{l}_w", f"layer{l}_k"]
        if config.variant == "fno_phase" and train_theta:
            names.append(f"layer{l}_theta")
        if config.use_norm:
            names += [f"layer{l}_gamma", f"layer{l}_beta"]
    names += ["q_w", "q_b"]
    return names


def param_arrays(params: ModelParams) -> dict:
    """Name -> array view of every learnable parameter."""
    out = {"r_w": params.r_w, "r_b": params.r_b}
    for l, lay in enumerate(params.layers):
        out[f"layer{l}_w"] = lay.w
        out[f"layer{l}_k"] = lay.k_hat
        if lay.theta is not None:
            out[f"layer{l}_theta"] = lay.theta
        if lay.gamma is not None:
            out[f"layer{l}_gamma"] = lay.gamma
            out[f"layer{l}_beta"] = lay.beta
    out["q_w"] = params.q_w
    out["q_b"] = params.q_b
    return out


def set_param_arrays(params: ModelParams, arrays: dict):
    params.r_w, params.r_b = arrays["r_w"], arrays["r_b"]
    for l, lay in enumerate(params.layers):
        lay.w = arrays[f"layer{l}_w"]
        lay.k_hat = arrays[f"layer{l}_k"]
        if lay.theta is not None and f"layer{l}_theta" in arrays:
            lay.theta = arrays[f"layer{l}_theta"]
        if lay.gamma is not None:
            lay.gamma = arrays[f"layer{l}_gamma"]
            lay.beta = arrays[f"layer{l}_beta"]
    params.q_w, params.q_b = arrays["q_w"], arrays["q_b"]


def parameter_count(params: ModelParams) -> int:
    """Real parameter count; complex entries count twice."""
    total = 0
    for arr in param_arrays(params).values():
        total += arr.size * (2 if np.iscomplexobj(arr) else 1)
    return total


def _spectral_mix(v, lay_k, lay_theta, modes, grid, n_v, batch, analysis):
    """Apply the truncated frequency mixing to v of shape (n_v, B*N)."""
    n = grid.n_points
    coeff = ad.matmul(ad.reshape(v, (n_v * batch, n)), ad.Tensor(analysis))
    coeff = ad.moveaxis(ad.reshape(coeff, (n_v, batch, len(modes))), 2, 0)
    mixed = ad.bmm(lay_k, coeff)                       # (modes, n_v, batch)
    mixed = ad.reshape(mixed, (len(modes), n_v * batch))
    if lay_theta is None:
        basis = ad.Tensor(sp.synthesis_basis(modes, grid))
    else:
        basis = sp.synthesis_basis(modes, grid, lay_theta)
    out = ad.real_part(ad.matmul(basis, mixed))        # (N, n_v*batch)
    out = ad.reshape(ad.moveaxis(out, 0, 1), (n_v, batch, n))
    return ad.reshape(out, (n_v, batch * n))


def _theta_active(theta_t):
    # zero, untrained angles route through the baseline code path so the
    # two variants are byte-identical in that regime
    return theta_t is not None and (theta_t.tracked
                                    or np.any(theta_t.data != 0.0))


def forward_graph(tensors: dict, norm_states, config: ModelConfig, a,
                  grid: sp.GridSpec, mode: str):
    """Forward pass through autodiff ops; returns a (B, n_b, n_x, n_t) Tensor.

    ``tensors`` maps canonical parameter names to ad.Tensor values
    (watched or not); ``norm_states`` is one BatchNormState per layer
    (updated in place in train mode) or None entries when norm is off.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4 or a.shape[1] != config.n_a \
            or a.shape[2:] != (grid.n_x, grid.n_t):
        raise ValueError(f"input shape {a.shape} does not match "
                         f"(batch, {config.n_a}, {grid.n_x}, {grid.n_t})")
    batch, n = a.shape[0], grid.n_points
    modes = sp.ModeSet.build(config.M, grid, config.convention)
    analysis = sp.analysis_matrix(modes, grid)

    flat = np.moveaxis(a, 1, 0).reshape(config.n_a, batch * n)
    v = ad.add(ad.matmul(tensors["r_w"], ad.Tensor(flat)),
               ad.reshape(tensors["r_b"], (config.n_v, 1)))
    for l in range(config.L):
        local = ad.matmul(tensors[f"layer{l}_w"], v)
        theta_t = tensors.get(f"layer{l}_theta")
        spec = _spectral_mix(v, tensors[f"layer{l}_k"],
                             theta_t if _theta_active(theta_t) else None,
                             modes, grid, config.n_v, batch, analysis)
        z = ad.add(local, spec)
        if config.use_norm:
            z = ad.batch_norm(z, tensors[f"layer{l}_gamma"],
                              tensors[f"layer{l}_beta"],
                              norm_states[l], mode)
        v = ad.gelu(z)
        if not np.all(np.isfinite(v.data)):
            raise FloatingPointError(f"non-finite activations in layer {l}")
    out = ad.add(ad.matmul(tensors["q_w"], v),
                 ad.reshape(tensors["q_b"], (config.n_b, 1)))
    return ad.moveaxis(ad.reshape(out, (config.n_b, batch, grid.n_x,
                                        grid.n_t)), 1, 0)


def forward(params: ModelParams, config: ModelConfig, a, grid: sp.GridSpec,
            mode: str = "eval") -> np.ndarray:
    """Untracked forward pass; array in, array out."""
    tensors = {k: ad.Tensor(v) for k, v in param_arrays(params).items()}
    states = [lay.norm_state for lay in params.layers]
    out = forward_graph(tensors, states, config, a, grid, mode)
    a_arr = np.asarray(a)
    return out.data[0] if a_arr.ndim == 3 else out.data


def clamp_theta(params: ModelParams, config: ModelConfig,
                grid: sp.GridSpec, limit: float = TRAIN_EXPONENT_LIMIT):
    """Scale back angle rows whose envelope exponent exceeds ``limit``.

    Uses |sin(s u)| <= s |u| to pick a single shrink factor per row, so
    one pass is enough. Returns True if anything was clamped.
    """
    modes = sp.ModeSet.build(config.M, grid, config.convention)
    lengths = np.array([grid.length_x, grid.length_t])
    clamped = False
    for lay in params.layers:
        if lay.theta is None:
            continue
        exps = sp._exponents_per_mode(modes, lay.theta, grid)
        if np.max(exps) <= limit:
            continue
        scale_k = np.abs(modes.freqs) * lengths          # (modes, 2)
        if lay.theta.shape[0] == 1:
            linear = float(np.max(scale_k @ np.abs(lay.theta[0])))
            lay.theta *= limit / linear
        else:
            linear = np.sum(scale_k * np.abs(lay.theta), axis=1)
            bad = exps > limit
            lay.theta[bad] *= (limit / linear[bad])[:, None]
        clamped = True
    return clamped


def promote_to_phase(params: ModelParams, config: ModelConfig):
    """Reinterpret baseline parameters as the phase variant with zero angles."""
    if config.variant == "fno_phase":
        return params, config
    new_config = replace(config, variant="fno_phase")
    out = params.copy()
    rows = new_config.n_modes if new_config.theta_mode == "per_mode" else 1
    for lay in out.layers:
        lay.theta = np.zeros((rows, 2))
    return out, new_config


def save_checkpoint(params: ModelParams, config: ModelConfig, path):
    meta = {
        "format": "checkpoint",
        "version": CHECKPOINT_VERSION,
        "variant": config.variant,
        "L": str(config.L), "M": str(config.M),
        "n_a": str(config.n_a), "n_v": str(config.n_v),
        "n_b": str(config.n_b),
        "activation": config.activation,
        "use_norm": str(int(config.use_norm)),
        "convention": config.convention,
        "theta_mode": config.theta_mode,
        "seed": str(config.seed),
    }
    arrays = dict(param_arrays(params))
    for l, lay in enumerate(params.layers):
        if lay.norm_state is not None:
            arrays[f"layer{l}_mean"] = lay.norm_state.mean
            arrays[f"layer{l}_var"] = lay.norm_state.var
    save_archive(path, meta, arrays)


def load_checkpoint(path):
    meta, arrays = load_archive(path)
    if meta.get("format") != "checkpoint":
        raise ArchiveError(f"{path}: not a checkpoint file")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ArchiveError(f"{path}: unsupported checkpoint version "
                           f"{meta.get('version')!r}")
    if meta.get("variant") not in VARIANTS:
        raise ArchiveError(f"{path}: unknown variant {meta.get('variant')!r}")
    config = ModelConfig(
        variant=meta["variant"], n_a=int(meta["n_a"]), n_b=int(meta["n_b"]),
        n_v=int(meta["n_v"]), L=int(meta["L"]), M=int(meta["M"]),
        activation=meta["activation"], use_norm=bool(int(meta["use_norm"])),
        convention=meta["convention"], theta_mode=meta["theta_mode"],
        seed=int(meta["seed"]))
    params = init(config)
    try:
        set_param_arrays(params, arrays)
        for l, lay in enumerate(params.layers):
            if lay.norm_state is not None:
                lay.norm_state = ad.BatchNormState(arrays[f"layer{l}_mean"],
                                                   arrays[f"layer{l}_var"])
    except KeyError as exc:
        raise ArchiveError(f"{path}: missing parameter array {exc}") from None
    for name, arr in param_arrays(params).items():
        expected = arrays.get(name)
        if expected is None or expected.shape != arr.shape:
            raise ArchiveError(f"{path}: bad shape for {name}")
    return params, config
