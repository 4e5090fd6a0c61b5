"""Small denoising-diffusion model for low-dimensional vector data.

Timesteps are 1-based (``t = 1..T``); arrays indexed by step store step
``t`` at position ``t - 1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

OMEGA_MODES = ("constant", "snr")
MIN_SNR_GAMMA = 5.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    omega_mode: str = "constant"

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size == 0:
            raise ConfigError("betas must be a non-empty 1-D array")
        if not np.all((b > 0) & (b < 1)):
            raise ConfigError("betas must lie strictly inside (0, 1)")
        if self.omega_mode not in OMEGA_MODES:
            raise ConfigError(f"omega_mode must be one of {OMEGA_MODES}")
        object.__setattr__(self, "betas", b)

    @property
    def T(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    @property
    def lambdas(self) -> np.ndarray:
        """Log signal-to-noise ratio ``log(abar / (1 - abar))``."""
        ab = self.alpha_bars
        return np.log(ab) - np.log1p(-ab)

    def omega(self, t) -> np.ndarray:
        """Timestep weight. ``snr`` mode is min-SNR weighting,
        ``min(snr, 5) / snr``, which is 1 at noisy steps and shrinks the
        nearly-clean ones."""
        t = np.asarray(t)
        if self.omega_mode == "constant":
            return np.ones(t.shape)
        snr = np.exp(self.lambdas[t - 1])
        return np.minimum(snr, MIN_SNR_GAMMA) / snr


def make_linear_schedule(T: int, beta_start: float, beta_end: float,
                         omega_mode: str = "constant") -> NoiseSchedule:
    if T < 1:
        raise ConfigError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ConfigError("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T), omega_mode)


def default_schedule(T: int = 100, omega_mode: str = "constant") -> NoiseSchedule:
    """The usual 1e-4..0.02 linear schedule, rescaled from 1000 steps to ``T``."""
    scale = 1000.0 / T
    return make_linear_schedule(T, 1e-4 * scale, min(0.02 * scale, 0.999), omega_mode)


def forward_noise(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """Sample of ``q(x_t | x_0)`` given the noise draw ``eps``.

    ``t`` may be a scalar or one step per row of ``x0``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > sched.T):
        raise ValueError(f"t must lie in [1, {sched.T}]")
    ab = sched.alpha_bars[t - 1]
    if ab.ndim:
        ab = ab[..., None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


# -- denoiser ----------------------------------------------------------------

def time_embedding(t, width: int) -> np.ndarray:
    """Sinusoidal embedding, ``[sin(t f_k), cos(t f_k)]``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = width // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _silu(z):
    s = expit(z)
    return z * s, s


@dataclass(frozen=True)
class DenoiserSpec:
    dim: int = 2
    time_width: int = 16
    hidden: int = 64
    cond_width: int = 4
    n_conditions: int = 1

    def __post_init__(self):
        if self.time_width % 2:
            raise ConfigError("time_width must be even")
        if min(self.dim, self.hidden, self.n_conditions) < 1 or self.cond_width < 0:
            raise ConfigError("invalid denoiser dimensions")

    @property
    def in_width(self) -> int:
        return self.dim + self.time_width + self.cond_width

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        d, h = self.dim, self.hidden
        return [
            ("W1", (self.in_width, h)), ("b1", (h,)),
            ("W2", (h, h)), ("b2", (h,)),
            ("W3", (h, d)), ("b3", (d,)),
            ("E", (self.n_conditions, self.cond_width)),
        ]

    @property
    def n_params(self) -> int:
        return sum(math.prod(s) for _, s in self.shapes())


@dataclass
class _Cache:
    inp: np.ndarray
    cond: np.ndarray
    z1: np.ndarray
    s1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    s2: np.ndarray
    a2: np.ndarray


class Denoiser:
    """Noise-prediction MLP ``eps_theta(x_t, t, c)``.

    Input is ``[x_t, sinusoid(t), E[c]]``; two SiLU hidden layers; linear
    output of the data dimension. All parameters live in one flat vector
    (``params``); the named arrays are views into it.
    """

    def __init__(self, spec: DenoiserSpec, params: np.ndarray | None = None):
        self.spec = spec
        if params is None:
            params = np.zeros(spec.n_params)
        params = np.array(params, dtype=np.float64)
        if params.shape != (spec.n_params,):
            raise ValueError(f"expected {spec.n_params} parameters, got {params.shape}")
        self.params = params

    @classmethod
    def init(cls, spec: DenoiserSpec, rng: np.random.Generator) -> "Denoiser":
        net = cls(spec)
        v = net.views()
        for name, shape in spec.shapes():
            if name.startswith("W"):
                v[name][...] = rng.normal(0.0, 1.0 / math.sqrt(shape[0]), size=shape)
            elif name == "E":
                v[name][...] = rng.normal(0.0, 1.0, size=shape)
        v["W3"] *= 0.1
        return net

    def copy(self) -> "Denoiser":
        return Denoiser(self.spec, self.params.copy())

    def views(self, flat: np.ndarray | None = None) -> dict[str, np.ndarray]:
        flat = self.params if flat is None else flat
        out, i = {}, 0
        for name, shape in self.spec.shapes():
            n = math.prod(shape)
            out[name] = flat[i:i + n].reshape(shape)
            i += n
        return out

    def _inputs(self, x_t, t, cond):
        x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
        n = x_t.shape[0]
        if x_t.shape[1] != self.spec.dim:
            raise ValueError(f"expected data dim {self.spec.dim}, got {x_t.shape[1]}")
        t = np.broadcast_to(np.asarray(t), (n,))
        cond = np.broadcast_to(np.asarray(0 if cond is None else cond, dtype=np.int64), (n,))
        v = self.views()
        parts = [x_t, time_embedding(t, self.spec.time_width)]
        if self.spec.cond_width:
            parts.append(v["E"][cond])
        return np.concatenate(parts, axis=1), cond

    def forward(self, x_t, t, cond=None, cache: bool = False):
        v = self.views()
        inp, cond = self._inputs(x_t, t, cond)
        z1 = inp @ v["W1"] + v["b1"]
        a1, s1 = _silu(z1)
        z2 = a1 @ v["W2"] + v["b2"]
        a2, s2 = _silu(z2)
        out = a2 @ v["W3"] + v["b3"]
        if cache:
            return out, _Cache(inp, cond, z1, s1, a1, z2, s2, a2)
        return out

    __call__ = forward

    def backward(self, c: _Cache, grad_out: np.ndarray) -> np.ndarray:
        """Parameter gradient of ``sum(grad_out * forward(...))``."""
        v = self.views()
        g = np.zeros_like(self.params)
        gv = self.views(g)
        gv["W3"][...] = c.a2.T @ grad_out
        gv["b3"][...] = grad_out.sum(axis=0)
        da2 = grad_out @ v["W3"].T
        dz2 = da2 * c.s2 * (1.0 + c.z2 * (1.0 - c.s2))
        gv["W2"][...] = c.a1.T @ dz2
        gv["b2"][...] = dz2.sum(axis=0)
        da1 = dz2 @ v["W2"].T
        dz1 = da1 * c.s1 * (1.0 + c.z1 * (1.0 - c.s1))
        gv["W1"][...] = c.inp.T @ dz1
        gv["b1"][...] = dz1.sum(axis=0)
        if self.spec.cond_width:
            dinp = dz1 @ v["W1"].T
            np.add.at(gv["E"], c.cond, dinp[:, self.spec.dim + self.spec.time_width:])
        return g


# -- losses and sampling ---------------------------------------------------

def dm_loss_at(net: Denoiser, x0, cond, t, eps, sched: NoiseSchedule):
    """Weighted denoising loss for fixed draws ``(t, eps)``: value and
    parameter gradient. ``x0`` and ``eps`` are ``(n, d)``; ``t`` has ``n``
    entries."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t), (x0.shape[0],))
    xt = forward_noise(x0, t, eps, sched)
    pred, cache = net.forward(xt, t, cond, cache=True)
    w = sched.omega(t)
    err = eps - pred
    n = x0.shape[0]
    loss = float(np.mean(w * np.sum(err**2, axis=1)))
    grad = net.backward(cache, -2.0 * w[:, None] * err / n)
    return loss, grad


def dm_loss(net: Denoiser, x0, cond, sched: NoiseSchedule, rng: np.random.Generator):
    """Denoising loss with ``t ~ U{1..T}`` and ``eps ~ N(0, I)`` drawn from ``rng``."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    t = rng.integers(1, sched.T + 1, size=x0.shape[0])
    eps = rng.standard_normal(x0.shape)
    return dm_loss_at(net, x0, cond, t, eps, sched)


def ancestral_sample(net: Denoiser, sched: NoiseSchedule, n: int, rng: np.random.Generator,
                     cond=None) -> np.ndarray:
    """DDPM ancestral sampling with posterior variance ``beta_t``."""
    x = rng.standard_normal((n, net.spec.dim))
    ab = sched.alpha_bars
    for t in range(sched.T, 0, -1):
        beta, alpha = sched.betas[t - 1], sched.alphas[t - 1]
        eps = net.forward(x, np.full(n, t), cond)
        x = (x - beta / math.sqrt(1.0 - ab[t - 1]) * eps) / math.sqrt(alpha)
        if t > 1:
            x = x + math.sqrt(beta) * rng.standard_normal(x.shape)
    return x


# -- checkpoints -----------------------------------------------------------

CHECKPOINT_FORMAT = "lpokit-denoiser"


def checkpoint_dict(net: Denoiser, extra: dict | None = None) -> dict:
    s = net.spec
    return {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "architecture": {
            "dim": s.dim, "time_width": s.time_width, "hidden": s.hidden,
            "cond_width": s.cond_width, "n_conditions": s.n_conditions,
        },
        "n_params": s.n_params,
        "meta": extra or {},
        "params": [float(x) for x in net.params],
    }


def dumps_checkpoint(net: Denoiser, extra: dict | None = None) -> str:
    return json.dumps(checkpoint_dict(net, extra)) + "\n"


def loads_checkpoint(text: str) -> tuple[Denoiser, dict]:
    obj = json.loads(text)
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a denoiser checkpoint")
    spec = DenoiserSpec(**obj["architecture"])
    params = obj["params"]
    if obj["n_params"] != spec.n_params or len(params) != spec.n_params:
        raise ValueError(
            f"parameter count mismatch: header {obj['n_params']}, architecture {spec.n_params}, "
            f"payload {len(params)}")
    return Denoiser(spec, np.array(params, dtype=np.float64)), obj.get("meta", {})
