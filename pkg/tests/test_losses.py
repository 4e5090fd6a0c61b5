import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpokit import losses as L
from lpokit.verify import _loss_cases, central_difference, fd_floor, rel_error

deltas = arrays(np.float64, st.integers(2, 8), elements=st.floats(-5, 5))
LN2, LN3 = math.log(2), math.log(3)


def test_delta_examples():
    assert L.delta([1, 0], [1, 0], [0, 0]) == 1.0
    assert L.delta([1, 0], [0, 0], [1, 0]) == -1.0
    assert L.delta([0.5, -0.5], [0.1, 0.2], [0.1, 0.2]) == 0.0
    with pytest.raises(ValueError):
        L.delta([0, 0], [0], [0, 0])


def test_desk_beta_eff_is_one():
    assert L.AlignmentConfig().beta_eff() == pytest.approx(1.0)
    assert L.AlignmentConfig(beta=0.5, T=10).beta_eff(omega=0.2) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        L.AlignmentConfig(beta=0.0)


def test_dpo_equal_deltas_is_ln2():
    out = L.diffusion_dpo_loss(0.3, 0.3, 2.0)
    assert out.value == pytest.approx(LN2, abs=1e-15)
    np.testing.assert_allclose(out.grad_wrt_deltas, [-1.0, 1.0], atol=1e-15)


def test_dpo_decreases_as_margin_grows():
    vals = [L.diffusion_dpo_loss(m, 0.0, 1.0).value for m in np.linspace(-3, 3, 13)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_lpo_special_cases():
    assert L.diffusion_lpo_loss([1.5], 1.0).value == 0.0
    assert L.diffusion_lpo_loss([0.0, 0.0, 0.0], 1.0).value == pytest.approx(LN3 + LN2, abs=1e-14)


def test_gp_dpo_all_equal():
    assert L.gp_dpo_loss(np.zeros(4), 1.0).value == pytest.approx(6 * LN2, abs=1e-14)


def test_gp_dpo_three_items_by_hand():
    d, be = np.array([1.0, 0.2, -0.4]), 1.5
    want = sum(math.log1p(math.exp(-be * (d[a] - d[b]))) for a, b in combinations(range(3), 2))
    assert L.gp_dpo_loss(d, be).value == pytest.approx(want, abs=1e-14)


def test_gpo_coefficients():
    # s = -delta; coefficients (1, -1) and (2, 0, -2)
    assert L.gpo_rank_loss([1.0, 0.0], 1.0).value == pytest.approx(-1.0)
    assert L.gpo_rank_loss([0.0, 1.0], 1.0).value == pytest.approx(1.0)
    np.testing.assert_allclose(L.gpo_rank_loss([0, 0, 0], 2.0).grad_wrt_deltas, [-4.0, 0.0, 4.0])
    assert L.gpo_rank_loss([0.7, 0.7, 0.7, 0.7], 3.0).value == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("fn", [L.gp_dpo_loss, L.gpo_rank_loss])
def test_group_losses_need_two_items(fn):
    with pytest.raises(ValueError):
        fn([1.0], 1.0)


def test_dspo_balanced_gate():
    out = L.dspo_loss([0.0], [1.0], [0.0], 0.2, 0.2, 1.0, lambda_gamma=0.5)
    assert out.gate == pytest.approx(0.5)
    # residual 1 - 0.5 * 0.5 * 1
    assert out.value == pytest.approx(0.75**2)
    np.testing.assert_allclose(out.grad_wrt_eps_theta, [2 * 0.75 * 0.75])


def test_dspo_gate_closes_when_preferred_sample_is_ahead():
    out = L.dspo_loss([0.0], [1.0], [0.0], 40.0, 0.0, 1.0)
    assert out.gate < 1e-15
    assert out.value == pytest.approx(1.0)


def test_dspo_lpo_matches_dspo_for_pairs(rng):
    eps, pt, pr = (rng.normal(size=3) for _ in range(3))
    d = rng.normal(size=2)
    pair = L.dspo_loss(eps, pt, pr, d[0], d[1], 1.3, 0.4)
    lst = L.dspo_lpo_loss([(eps, pt, pr), (eps * 0, pt * 0, pr * 0)], d, 1.3, 0.4)
    assert lst.value == pytest.approx(pair.value, abs=1e-14)
    assert lst.gate == pytest.approx(pair.gate, abs=1e-15)
    np.testing.assert_allclose(lst.grad_wrt_deltas, pair.grad_wrt_deltas, atol=1e-14)
    np.testing.assert_allclose(lst.grad_wrt_eps_theta, pair.grad_wrt_eps_theta, atol=1e-14)


def test_dspo_lpo_uniform_list():
    trip = ([0.0], [1.0], [0.0])
    out = L.dspo_lpo_loss([trip] * 4, np.zeros(4), 1.0, 0.5)
    assert out.gate == pytest.approx(0.75)
    assert out.value == pytest.approx((1 - 0.5 * 0.75) ** 2)
    with pytest.raises(ValueError):
        L.dspo_lpo_loss([trip] * 3, np.zeros(4), 1.0)


def test_aggregates_on_equal_scores():
    s = np.ones(3)
    assert L.lpo_negative_aggregate(s, 1, 1.0) == pytest.approx(LN3)
    assert L.gpdpo_negative_aggregate(s, 1, 1.0) == pytest.approx(2 * LN2 / 3)


def test_aggregate_ordering_reverses_when_log_sum_negative():
    s = np.array([0.01, 0.01])
    lpo = L.lpo_negative_aggregate(s, 1, 1.0)
    gp = L.gpdpo_negative_aggregate(s, 1, 1.0)
    assert lpo == pytest.approx(math.log(0.02))
    assert gp == pytest.approx(lpo / 2)
    assert gp > lpo


def test_aggregate_argument_checks():
    with pytest.raises(ValueError):
        L.lpo_negative_aggregate([1.0, 0.0], 1, 1.0)
    with pytest.raises(ValueError):
        L.gpdpo_negative_aggregate([1.0, 2.0], 2, 1.0)
    with pytest.raises(ValueError):
        L.lpo_negative_aggregate([1.0, 2.0], 3, 1.0)


@given(arrays(np.float64, st.integers(2, 8), elements=st.floats(0.05, 20)),
       st.sampled_from([0.1, 1.0, 10.0]), st.data())
def test_aggregate_ordering_with_non_negative_log_sum(s, beta, data):
    j = data.draw(st.integers(1, s.size - 1))
    lpo = L.lpo_negative_aggregate(s, j, beta)
    if lpo >= 0:
        assert L.gpdpo_negative_aggregate(s, j, beta) <= lpo + 1e-12


@given(deltas, st.floats(0.1, 5), st.floats(-10, 10))
def test_shift_invariance_of_list_losses(d, be, c):
    for fn in (L.diffusion_lpo_loss, L.gp_dpo_loss, L.gpo_rank_loss):
        assert fn(d + c, be).value == pytest.approx(fn(d, be).value, abs=1e-9)


def test_order_matters():
    d = np.array([2.0, 1.0, 0.0])
    for fn in (L.diffusion_lpo_loss, L.gp_dpo_loss, L.gpo_rank_loss):
        assert fn(d, 1.0).value < fn(d[::-1], 1.0).value


@given(deltas, deltas, st.floats(0, 1), st.floats(0.1, 3))
def test_lpo_is_convex_in_deltas(a, b, lam, be):
    n = min(a.size, b.size)
    a, b = a[:n], b[:n]
    mid = L.diffusion_lpo_loss(lam * a + (1 - lam) * b, be).value
    chord = lam * L.diffusion_lpo_loss(a, be).value + (1 - lam) * L.diffusion_lpo_loss(b, be).value
    assert mid <= chord + 1e-9


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_all_loss_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for name, fn, m in _loss_cases(rng):
        d = rng.normal(0, 1.5, m)
        out = fn(d)
        num = central_difference(lambda v: fn(v).value, d)
        assert rel_error(out.grad_wrt_deltas, num, fd_floor(out.value)) < 1e-6, name


def test_dspo_eps_theta_gradient(rng):
    eps, pt, pr = (rng.normal(size=3) for _ in range(3))
    out = L.dspo_loss(eps, pt, pr, 0.3, -0.2, 1.1, 0.6)
    num = central_difference(lambda v: L.dspo_loss(eps, v, pr, 0.3, -0.2, 1.1, 0.6).value, pt)
    assert rel_error(out.grad_wrt_eps_theta, num) < 1e-7
