"""Randomized property suites for the ranking and alignment mathematics.

Each check returns a :class:`CheckResult`; ``run_suite`` groups them. The
same functions back the ``verify`` CLI command.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from . import losses as L
from .plackett_luce import bt_log_prob, pl_log_prob, pl_permutation_total

SUITES = ("pl", "bound", "reduction", "gradients")


@dataclass(frozen=True)
class CheckResult:
    name: str
    trials: int
    failures: int
    worst: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"[{tag}] {self.name}: {self.trials - self.failures}/{self.trials} ok, "
                f"worst {self.worst:.3g} (tol {self.tolerance:g})")


def rel_error(analytic, numeric, floor: float = 0.0) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``; 0 when all vanish."""
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale) if scale > 0 else 0.0


def fd_floor(value: float) -> float:
    """Gradient norm below which central differences (h=1e-5) are dominated
    by rounding in ``f``; such gradients are compared in absolute terms."""
    return 1e-4 * max(1.0, abs(value))


def central_difference(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def _result(name, excesses, tol) -> CheckResult:
    ex = np.asarray(excesses, dtype=np.float64)
    return CheckResult(name, ex.size, int(np.sum(ex > tol)), float(ex.max(initial=0.0)), tol)


# -- Plackett-Luce ---------------------------------------------------------

def check_pl_normalization(rng, trials=500, tol=1e-10) -> CheckResult:
    errs = []
    for _ in range(trials):
        m = int(rng.integers(2, 7))
        errs.append(abs(pl_permutation_total(rng.normal(0, 2, m)) - 1.0))
    return _result("pl normalization", errs, tol)


def check_pl_shift_invariance(rng, trials=1000, tol=1e-12) -> CheckResult:
    errs = []
    for _ in range(trials):
        s = rng.normal(0, 2, int(rng.integers(1, 9)))
        c = rng.uniform(-20, 20)
        errs.append(abs(pl_log_prob(s + c).log_prob - pl_log_prob(s).log_prob))
    return _result("pl shift invariance", errs, tol)


def check_pl_monotonicity(rng, trials=1000) -> CheckResult:
    bad = []
    for _ in range(trials):
        s = rng.normal(0, 2, int(rng.integers(2, 9)))
        base = pl_log_prob(s).log_prob
        up_first, up_last = s.copy(), s.copy()
        bump = rng.uniform(0.01, 1.0)
        up_first[0] += bump
        up_last[-1] += bump
        ok = pl_log_prob(up_first).log_prob > base and pl_log_prob(up_last).log_prob < base
        bad.append(0.0 if ok else 1.0)
    return _result("pl monotonicity", bad, 0.5)


def check_pl_gradient(rng, trials=200, tol=1e-6) -> CheckResult:
    errs = []
    for _ in range(trials):
        s = rng.normal(0, 2, int(rng.integers(1, 9)))
        num = central_difference(lambda v: pl_log_prob(v).log_prob, s)
        errs.append(rel_error(pl_log_prob(s).gradient, num))
    return _result("pl gradient vs central differences", errs, tol)


def neg_pl(s) -> float:
    return -pl_log_prob(s).log_prob


def check_pl_convexity(rng, trials=10_000, tol=1e-12) -> CheckResult:
    """Jensen's inequality for the negated stagewise term on random chords."""
    ex = np.empty(trials)
    for i in range(trials):
        m = int(rng.integers(2, 9))
        s, s2 = rng.normal(0, 3, m), rng.normal(0, 3, m)
        lam = rng.uniform(0, 1)
        ex[i] = neg_pl(lam * s + (1 - lam) * s2) - (lam * neg_pl(s) + (1 - lam) * neg_pl(s2))
    return _result("pl convexity (Jensen)", ex, tol)


def check_bt_identity(rng, trials=1000, tol=1e-12) -> CheckResult:
    errs = []
    for _ in range(trials):
        a, b = rng.normal(0, 5, 2)
        errs.append(abs(bt_log_prob(a, b) - pl_log_prob([a, b]).log_prob))
    return _result("bt equals two-item pl", errs, tol)


# -- aggregate bound -------------------------------------------------------

def aggregate_bound_excess(rng, trials=100_000, betas=(0.1, 1.0, 10.0), sigma=1.0,
                           inverted=False) -> tuple[np.ndarray, np.ndarray]:
    """For random lognormal score vectors (m in 2..8) and every valid ``j``,
    return ``gpdpo_aggregate - lpo_aggregate`` and the LPO aggregate.

    ``inverted=True`` swaps the two sides; it exists to show that the check
    can fail.
    """
    excess, lpo_side = [], []
    for _ in range(trials):
        m = int(rng.integers(2, 9))
        beta = float(betas[int(rng.integers(len(betas)))])
        s = rng.lognormal(0.0, sigma, m)
        for j in range(1, m):
            lpo = L.lpo_negative_aggregate(s, j, beta)
            gp = L.gpdpo_negative_aggregate(s, j, beta)
            excess.append(lpo - gp if inverted else gp - lpo)
            lpo_side.append(lpo)
    return np.array(excess), np.array(lpo_side)


def check_aggregate_bound(rng, trials=100_000, tol=1e-12, inverted=False) -> list[CheckResult]:
    """The bound over all draws, and restricted to draws whose LPO aggregate
    ``log sum s^beta`` is non-negative.

    The unrestricted form fails whenever ``sum_{k>=j} s_k^beta < 1``: each
    pair term is then below a negative ``log`` sum and the ``1/(m-j+1)``
    factor pulls the average *up* past it. With a non-negative right-hand
    side every pair term is at most the RHS and the factor only shrinks it.
    """
    ex, rhs = aggregate_bound_excess(rng, trials, inverted=inverted)
    name = "aggregate bound" + (" (inverted self-test)" if inverted else "")
    mask = rhs >= 0
    return [
        _result(name + ", all positive scores", ex, tol),
        _result(name + ", where log-sum >= 0", ex[mask], tol),
    ]


# -- reductions and gradients ---------------------------------------------

def check_m2_reduction(rng, trials=1000, tol=1e-12) -> list[CheckResult]:
    lpo_err, gp_err = [], []
    for _ in range(trials):
        dw, dl = rng.normal(0, 2, 2)
        be = float(rng.uniform(0.1, 10.0))
        dpo = L.diffusion_dpo_loss(dw, dl, be)
        for out, sink in ((L.diffusion_lpo_loss([dw, dl], be), lpo_err), (L.gp_dpo_loss([dw, dl], be), gp_err)):
            sink.append(max(abs(out.value - dpo.value),
                            float(np.max(np.abs(out.grad_wrt_deltas - dpo.grad_wrt_deltas)))))
    return [_result("lpo == dpo at m=2 (value, grad)", lpo_err, tol),
            _result("gp-dpo == dpo at m=2 (value, grad)", gp_err, tol)]


def _loss_cases(rng):
    """(name, deltas -> loss output, list length) for one random draw."""
    def dspo_pair(d, eps, pt, pr, be, lg):
        return L.dspo_loss(eps, pt, pr, d[0], d[1], be, lg)

    be = float(rng.uniform(0.2, 3.0))
    lg = float(rng.uniform(0.1, 0.9))
    m = int(rng.integers(2, 9))
    eps, pt, pr = (rng.normal(size=(m, 3)) for _ in range(3))
    triples = list(zip(eps, pt, pr))
    return [
        ("dpo", lambda d: L.diffusion_dpo_loss(d[0], d[1], be), 2),
        ("lpo", lambda d: L.diffusion_lpo_loss(d, be), m),
        ("gp-dpo", lambda d: L.gp_dpo_loss(d, be), m),
        ("gpo", lambda d: L.gpo_rank_loss(d, be), m),
        ("dspo", lambda d: dspo_pair(d, eps[0], pt[0], pr[0], be, lg), 2),
        ("dspo-lpo", lambda d: L.dspo_lpo_loss(triples, d, be, lg), m),
    ]


def check_loss_gradients(rng, trials=100, tol=1e-6) -> list[CheckResult]:
    errs: dict[str, list[float]] = {}
    for _ in range(trials):
        for name, fn, m in _loss_cases(rng):
            d = rng.normal(0, 1.5, m)
            num = central_difference(lambda v: fn(v).value, d)
            out = fn(d)
            errs.setdefault(name, []).append(rel_error(out.grad_wrt_deltas, num, fd_floor(out.value)))
    return [_result(f"{n} gradient wrt deltas", e, tol) for n, e in errs.items()]


def run_suite(name: str, seed: int = 0) -> list[CheckResult]:
    if name == "all":
        return [r for s in SUITES for r in run_suite(s, seed)]
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES + ('all',)}")
    rng = np.random.default_rng(seed)
    if name == "pl":
        return [check_pl_normalization(rng), check_pl_shift_invariance(rng), check_pl_monotonicity(rng),
                check_pl_gradient(rng), check_pl_convexity(rng), check_bt_identity(rng)]
    if name == "bound":
        return check_aggregate_bound(rng)
    if name == "reduction":
        return check_m2_reduction(rng)
    return check_loss_gradients(rng)
