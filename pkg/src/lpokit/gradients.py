"""Reverse-mode gradient of the list-alignment objective.

The chain is::

    params -> eps_theta(x_t) -> delta_j -> loss(beta_eff * omega_j * delta_j)

Reference predictions enter only as constants. Gradients w.r.t. deltas come
from :mod:`lpokit.losses`; ``d delta / d eps_theta = 2 (eps - eps_theta)``;
the rest is :meth:`Denoiser.backward`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses as L
from .diffusion import Denoiser, NoiseSchedule, forward_noise

LOSS_NAMES = ("lpo", "dpo", "gp-dpo", "gpo", "dspo", "dspo-lpo")
# "dpo" on a list means adjacent-pair DPO: the m-1 consecutive pairs.


@dataclass(frozen=True)
class Draws:
    """Timesteps ``t`` (G, m) and noise ``eps`` (G, m, d) for one batch."""

    t: np.ndarray
    eps: np.ndarray


def sample_draws(rng: np.random.Generator, n_groups: int, m: int, dim: int, T: int,
                 independent_t: bool = False) -> Draws:
    if independent_t:
        t = rng.integers(1, T + 1, size=(n_groups, m))
    else:
        t = np.repeat(rng.integers(1, T + 1, size=(n_groups, 1)), m, axis=1)
    eps = rng.standard_normal((n_groups, m, dim))
    return Draws(t, eps)


@dataclass
class ObjectiveResult:
    value: float
    grad: np.ndarray | None
    deltas: np.ndarray
    group_values: np.ndarray


def _group_loss(name, d, be, eps, pt, pr, lambda_gamma):
    """Loss of one group. Returns (value, dL/d delta, direct dL/d eps_theta)."""
    m = d.size
    direct = np.zeros_like(pt)
    if name == "lpo":
        out = L.diffusion_lpo_loss(d, be)
        return out.value, out.grad_wrt_deltas, direct
    if name == "gp-dpo":
        out = L.gp_dpo_loss(d, be)
        return out.value, out.grad_wrt_deltas, direct
    if name == "gpo":
        out = L.gpo_rank_loss(d, be)
        return out.value, out.grad_wrt_deltas, direct
    if name == "dpo":
        value, gd = 0.0, np.zeros(m)
        for i in range(m - 1):
            out = L.diffusion_dpo_loss(d[i], d[i + 1], be)
            value += out.value
            gd[i:i + 2] += out.grad_wrt_deltas
        return value, gd, direct
    if name == "dspo":
        value, gd = 0.0, np.zeros(m)
        for i in range(m - 1):
            out = L.dspo_loss(eps[i], pt[i], pr[i], d[i], d[i + 1], be, lambda_gamma)
            value += out.value
            gd[i:i + 2] += out.grad_wrt_deltas
            direct[i] += out.grad_wrt_eps_theta
        return value, gd, direct
    if name == "dspo-lpo":
        out = L.dspo_lpo_loss(list(zip(eps, pt, pr)), d, be, lambda_gamma)
        direct[0] = out.grad_wrt_eps_theta
        return out.value, out.grad_wrt_deltas, direct
    raise ValueError(f"unknown loss {name!r}; expected one of {LOSS_NAMES}")


def objective(theta: Denoiser, ref: Denoiser, x: np.ndarray, cond: np.ndarray, draws: Draws,
              sched: NoiseSchedule, beta: float, loss: str = "lpo", lambda_gamma: float = 0.5,
              need_grad: bool = True) -> ObjectiveResult:
    """Mean per-group loss over a batch of ranked lists and its parameter
    gradient. ``x`` is (G, m, d) in preference order."""
    if loss not in LOSS_NAMES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSS_NAMES}")
    G, m, d = x.shape
    t = draws.t.reshape(-1)
    eps = draws.eps.reshape(-1, d)
    c = np.repeat(np.asarray(cond), m)
    xt = forward_noise(x.reshape(-1, d), t, eps, sched)
    pt, cache = theta.forward(xt, t, c, cache=True)
    pr = ref.forward(xt, t, c)
    err_t = eps - pt
    deltas = -(np.sum(err_t**2, axis=1) - np.sum((eps - pr) ** 2, axis=1))
    omega = sched.omega(t)
    scaled = (omega * deltas).reshape(G, m)
    be = beta * sched.T

    eps3, pt3, pr3 = eps.reshape(G, m, d), pt.reshape(G, m, d), pr.reshape(G, m, d)
    values = np.empty(G)
    g_scaled = np.empty((G, m))
    direct = np.empty((G, m, d))
    for g in range(G):
        values[g], g_scaled[g], direct[g] = _group_loss(
            loss, scaled[g], be, eps3[g], pt3[g], pr3[g], lambda_gamma)
    value = float(np.sum(values) / G)
    grad = None
    if need_grad:
        g_delta = g_scaled.reshape(-1) * omega
        g_pred = (g_delta[:, None] * 2.0 * err_t + direct.reshape(-1, d)) / G
        grad = theta.backward(cache, g_pred)
    return ObjectiveResult(value, grad, deltas.reshape(G, m), values)
