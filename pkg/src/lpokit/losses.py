"""Preference-alignment objectives over per-element implicit rewards.

Every list loss takes ``deltas`` in preference order (index 0 is the most
preferred element) and a scalar ``beta_eff`` that multiplies each delta
before it enters the likelihood. ``beta_eff`` folds together the KL
strength, the number of diffusion steps and the timestep weight; see
:meth:`AlignmentConfig.beta_eff`.

All losses return the value together with its analytic gradient with
respect to the deltas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .plackett_luce import pl_log_prob

# Full-scale values used when fine-tuning large text-to-image models; the
# desk-scale defaults below are much smaller.
FULL_SCALE_BETA = {
    ("sd15", "dpo"): 2000.0,
    ("sd15", "lpo"): 2000.0,
    ("sd15", "dspo"): 0.001,
    ("sd15", "dspo-lpo"): 0.001,
    ("sdxl", "dpo"): 5000.0,
    ("sdxl", "lpo"): 5000.0,
    ("sdxl", "dspo"): 3000.0,
    ("sdxl", "dspo-lpo"): 3000.0,
}


@dataclass(frozen=True)
class AlignmentConfig:
    """Scale applied to implicit rewards: ``beta * T * omega(lambda_t)``.

    With the desk defaults (``beta=0.01``, ``T=100``, constant weight) the
    effective scale is 1.
    """

    beta: float = 0.01
    T: int = 100
    omega_mode: str = "constant"

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.T < 1:
            raise ValueError("T must be >= 1")

    def beta_eff(self, omega: float = 1.0) -> float:
        return self.beta * self.T * omega


@dataclass(frozen=True)
class LossOutput:
    value: float
    grad_wrt_deltas: np.ndarray


@dataclass(frozen=True)
class DspoOutput:
    """DSPO-style losses also depend on the raw noise predictions.

    ``grad_wrt_eps_theta`` is the partial derivative through the residual
    only (the gate is held fixed); the dependence through the gate is in
    ``grad_wrt_deltas``.
    """

    value: float
    grad_wrt_deltas: np.ndarray
    grad_wrt_eps_theta: np.ndarray
    gate: float


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def delta(eps, eps_theta_pred, eps_ref_pred) -> float:
    """Implicit reward of one noisy sample: how much better the tuned model
    predicts the noise than the reference, ``-(|e - e_th|^2 - |e - e_ref|^2)``."""
    eps, pt, pr = _vec(eps), _vec(eps_theta_pred), _vec(eps_ref_pred)
    if not (eps.shape == pt.shape == pr.shape):
        raise ValueError(f"shape mismatch: {eps.shape}, {pt.shape}, {pr.shape}")
    return float(-(np.sum((eps - pt) ** 2) - np.sum((eps - pr) ** 2)))


def diffusion_dpo_loss(delta_win: float, delta_lose: float, beta_eff: float) -> LossOutput:
    z = beta_eff * (delta_win - delta_lose)
    value = float(np.logaddexp(0.0, -z))
    g = -beta_eff * float(_sigmoid(-z))
    return LossOutput(value, np.array([g, -g]))


def diffusion_lpo_loss(deltas, beta_eff: float) -> LossOutput:
    """Negative Plackett-Luce log-likelihood of the scaled deltas."""
    res = pl_log_prob(beta_eff * _vec(deltas))
    return LossOutput(-res.log_prob, -beta_eff * res.gradient)


def gp_dpo_loss(deltas, beta_eff: float) -> LossOutput:
    """Pairwise DPO applied to all ``m(m-1)/2`` ordered pairs, equal weight."""
    d = _vec(deltas)
    m = d.size
    if m < 2:
        raise ValueError("gp_dpo_loss needs at least two elements")
    j, k = np.triu_indices(m, 1)
    z = beta_eff * (d[j] - d[k])
    value = float(np.sum(np.logaddexp(0.0, -z)))
    g = -beta_eff * _sigmoid(-z)
    grad = np.zeros(m)
    np.add.at(grad, j, g)
    np.add.at(grad, k, -g)
    return LossOutput(value, grad)


def gpo_rank_loss(deltas, beta_eff: float) -> LossOutput:
    """Rank-coefficient group loss ``sum_j (m - 2j + 1) * s_j``.

    ``s_j`` is the *un-negated* squared-error difference, so ``s = -delta``.
    Coefficients run ``m-1, m-3, ..., 1-m`` and sum to zero.
    """
    d = _vec(deltas)
    m = d.size
    if m < 2:
        raise ValueError("gpo_rank_loss needs at least two elements")
    coef = m - 2.0 * np.arange(1, m + 1) + 1.0
    value = float(beta_eff * np.sum(coef * -d))
    return LossOutput(value, -beta_eff * coef)


def _gated_residual(eps, eps_theta, eps_ref, gate, lambda_gamma, weight):
    eps, pt, pr = _vec(eps), _vec(eps_theta), _vec(eps_ref)
    if not (eps.shape == pt.shape == pr.shape):
        raise ValueError("shape mismatch between noise vectors")
    diff = pt - pr
    res = (pt - eps) - lambda_gamma * gate * diff
    value = weight * float(np.sum(res**2))
    # gate held fixed
    d_pt = 2.0 * weight * res * (1.0 - lambda_gamma * gate)
    d_gate = -2.0 * weight * lambda_gamma * float(np.sum(res * diff))
    return value, d_pt, d_gate


def dspo_loss(eps, eps_theta, eps_ref, delta_self: float, delta_other: float,
              beta_eff: float, lambda_gamma: float = 0.5, weight: float = 1.0) -> DspoOutput:
    """Score-matching preference loss for the preferred sample of a pair.

    residual = (e_th - e) - lg * (1 - sigmoid(r_self - r_other)) * (e_th - e_ref)
    with ``r = beta_eff * delta``; value = ``weight * |residual|^2``.
    """
    z = beta_eff * (delta_self - delta_other)
    sig = float(_sigmoid(z))
    gate = 1.0 - sig
    value, d_pt, d_gate = _gated_residual(eps, eps_theta, eps_ref, gate, lambda_gamma, weight)
    # d gate / dz = -sig * (1 - sig)
    dz = d_gate * -sig * gate
    return DspoOutput(value, np.array([dz * beta_eff, -dz * beta_eff]), d_pt, gate)


def dspo_lpo_loss(eps_list, deltas, beta_eff: float, lambda_gamma: float = 0.5,
                  weight: float = 1.0) -> DspoOutput:
    """Listwise DSPO: the top-ranked element is the score-matching target and
    the sigmoid gate is replaced by its softmax weight over the whole list.

    ``eps_list`` holds ``(eps, eps_theta, eps_ref)`` per element; only the
    first triple enters the residual.
    """
    d = _vec(deltas)
    m = d.size
    if m < 2:
        raise ValueError("dspo_lpo_loss needs at least two elements")
    if len(eps_list) != m:
        raise ValueError("need one noise triple per list element")
    r = beta_eff * d
    p = np.exp(r - np.logaddexp.reduce(r))
    w = float(p[0])
    gate = 1.0 - w
    eps, pt, pr = eps_list[0]
    value, d_pt, d_gate = _gated_residual(eps, pt, pr, gate, lambda_gamma, weight)
    # d w / d r_k = w * (1[k==0] - p_k)
    dw_dr = -w * p
    dw_dr[0] += w
    grad = -d_gate * dw_dr * beta_eff
    return DspoOutput(value, grad, d_pt, gate)


def lpo_negative_aggregate(s, j: int, beta: float) -> float:
    """``log sum_{k=j..m} s_k^beta`` for positive scores, ``j`` 1-based."""
    s = _vec(s)
    m = s.size
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise ValueError("scores must be positive and finite")
    if not 1 <= j <= m:
        raise ValueError(f"j must lie in [1, {m}]")
    return float(np.logaddexp.reduce(beta * np.log(s[j - 1:])))


def gpdpo_negative_aggregate(s, j: int, beta: float) -> float:
    """``1/(m-j+1) * sum_{k=j+1..m} log(s_j^beta + s_k^beta)``, ``j`` 1-based."""
    s = _vec(s)
    m = s.size
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise ValueError("scores must be positive and finite")
    if not 1 <= j < m:
        raise ValueError(f"j must lie in [1, {m - 1}] (needs a non-empty negative set)")
    ls = beta * np.log(s)
    pair = np.logaddexp(ls[j - 1], ls[j:])
    return float(np.sum(pair) / (m - j + 1))
