import math
from dataclasses import replace

import numpy as np
import pytest

from lpokit.diffusion import Denoiser, DenoiserSpec, default_schedule
from lpokit.gradients import LOSS_NAMES, objective, sample_draws
from lpokit.synthetic import SyntheticDataset, SyntheticTask, generate_synthetic_preferences, pairs_only
from lpokit.trainer import (
    Adam,
    TrainingConfig,
    TrainingDiverged,
    eval_ranking_accuracy,
    implicit_reward,
    metrics_csv,
    pretrain,
    ranking_metrics,
    run_experiment,
    train,
    warmup_lr,
)
from lpokit.verify import fd_floor, rel_error

SPEC = DenoiserSpec(dim=2, time_width=4, hidden=16, cond_width=2, n_conditions=2)
TINY_TASK = SyntheticTask(n_train=200, n_heldout=100, n_pretrain=400)
TINY_CFG = TrainingConfig(steps=30, batch_size=16, pretrain_steps=30, pretrain_batch=64,
                          eval_every=10, eval_draws=4, time_width=4, hidden=16, cond_width=2, T=20)


def test_synthetic_is_deterministic():
    a = generate_synthetic_preferences(TINY_TASK, 7)
    b = generate_synthetic_preferences(TINY_TASK, 7)
    np.testing.assert_array_equal(a.train.x, b.train.x)
    np.testing.assert_array_equal(a.pretrain_x, b.pretrain_x)
    assert not np.array_equal(a.train.x, generate_synthetic_preferences(TINY_TASK, 8).train.x)


def test_clean_lists_are_sorted_by_oracle():
    d = generate_synthetic_preferences(TINY_TASK, 0)
    r = TINY_TASK.oracle_reward(d.train.x, d.train.cond[:, None])
    assert np.all(np.diff(r, axis=1) <= 0)
    assert d.train.x.shape == (200, 4, 2) and len(d.heldout) == 100


def test_full_corruption_swaps_every_adjacent_pair():
    # every adjacent swap applied left to right rotates the top element to the end
    clean = generate_synthetic_preferences(TINY_TASK, 0).train.x
    rot = generate_synthetic_preferences(replace(TINY_TASK, corruption=1.0), 0).train.x
    np.testing.assert_array_equal(rot, np.roll(clean, -1, axis=1))


def test_partial_corruption_changes_some_lists():
    task = replace(TINY_TASK, corruption=0.2)
    d = generate_synthetic_preferences(task, 0)
    r = task.oracle_reward(d.train.x, d.train.cond[:, None])
    frac = np.mean(np.any(np.diff(r, axis=1) > 0, axis=1))
    assert 0.3 < frac < 0.7  # 1 - 0.8**3 = 0.488


def test_pairs_only_shapes():
    d = generate_synthetic_preferences(TINY_TASK, 0)
    p = pairs_only(d.train)
    assert p.x.shape == (600, 2, 2)
    np.testing.assert_array_equal(p.x[1], d.train.x[0, 1:3])


def test_task_validation():
    with pytest.raises(ValueError):
        SyntheticTask(list_size=9)
    with pytest.raises(ValueError):
        SyntheticTask(corruption=1.5)
    with pytest.raises(ValueError):
        SyntheticTask(centers=((0.0, 0.0),))


@pytest.mark.parametrize("loss", LOSS_NAMES)
@pytest.mark.parametrize("independent_t", [False, True])
def test_objective_gradient_on_sampled_parameters(loss, independent_t):
    rng = np.random.default_rng(LOSS_NAMES.index(loss))
    ref = Denoiser.init(SPEC, rng)
    theta = Denoiser(SPEC, ref.params + 0.05 * rng.standard_normal(ref.params.size))
    sched = default_schedule(20, "snr" if independent_t else "constant")
    x = rng.normal(size=(3, 4, 2))
    cond = rng.integers(0, 2, 3)
    draws = sample_draws(rng, 3, 4, 2, 20, independent_t)

    def f(p):
        return objective(Denoiser(SPEC, p), ref, x, cond, draws, sched, 0.05, loss).value

    res = objective(theta, ref, x, cond, draws, sched, 0.05, loss)
    idx = rng.choice(SPEC.n_params, 200, replace=False)
    h = 1e-5
    num = np.empty(idx.size)
    for n, i in enumerate(idx):
        p1, p2 = theta.params.copy(), theta.params.copy()
        p1[i] += h
        p2[i] -= h
        num[n] = (f(p1) - f(p2)) / (2 * h)
    assert rel_error(res.grad[idx], num, fd_floor(res.value)) < 1e-5


def test_objective_at_reference_has_zero_deltas(rng):
    ref = Denoiser.init(SPEC, rng)
    draws = sample_draws(rng, 5, 4, 2, 20)
    res = objective(ref.copy(), ref, rng.normal(size=(5, 4, 2)), np.zeros(5, int), draws,
                    default_schedule(20), 0.05, "lpo")
    np.testing.assert_array_equal(res.deltas, 0.0)
    assert res.value == pytest.approx(math.log(24))


def test_unknown_loss_rejected(rng):
    ref = Denoiser.init(SPEC, rng)
    with pytest.raises(ValueError):
        objective(ref, ref, np.zeros((1, 2, 2)), np.zeros(1, int), sample_draws(rng, 1, 2, 2, 5),
                  default_schedule(5), 0.1, "ipo")
    with pytest.raises(ValueError):
        TrainingConfig(loss="ipo")


def test_adam_zero_lr_is_a_no_op():
    p = np.array([1.0, -2.0])
    Adam(2).step(p, np.array([3.0, 4.0]), 0.0)
    np.testing.assert_array_equal(p, [1.0, -2.0])


def test_warmup():
    assert warmup_lr(1.0, 1, 100, 0.05) == pytest.approx(0.2)
    assert warmup_lr(1.0, 5, 100, 0.05) == 1.0
    assert warmup_lr(1.0, 1, 100, 0.0) == 1.0


def test_pretraining_reduces_loss_and_leaves_input_alone():
    d = generate_synthetic_preferences(TINY_TASK, 0)
    net = Denoiser.init(SPEC, np.random.default_rng(0))
    before = net.params.copy()
    res = pretrain(net, d.pretrain_x, d.pretrain_cond, replace(TINY_CFG, pretrain_steps=300),
                   np.random.default_rng(1))
    np.testing.assert_array_equal(net.params, before)
    assert np.mean(res.losses[-50:]) < np.mean(res.losses[:50])


def test_untrained_policy_scores_chance(rng):
    ref = Denoiser.init(SPEC, rng)
    d = generate_synthetic_preferences(TINY_TASK, 0)
    acc, tau, gap = eval_ranking_accuracy(ref.copy(), ref, d.heldout, default_schedule(20), 0.05, 4, 0)
    assert (acc, tau, gap) == (0.5, 0.0, 0.0)
    assert implicit_reward(ref.copy(), ref, [0.3, 0.1], 1, default_schedule(20), 0.05, 8, 0) == 0.0


def test_implicit_reward_variance_halves_with_twice_the_draws(rng):
    ref = Denoiser.init(SPEC, rng)
    theta = Denoiser(SPEC, ref.params + 0.1 * rng.standard_normal(ref.params.size))
    s = default_schedule(20)
    x0 = np.array([0.5, -0.2])
    v = [np.var([implicit_reward(theta, ref, x0, 0, s, 0.05, n, seed) for seed in range(2000)], ddof=1)
         for n in (8, 16)]
    assert v[1] / v[0] == pytest.approx(0.5, abs=0.1)


def test_ranking_metrics():
    assert ranking_metrics(np.array([[3.0, 2.0, 1.0]])) == (1.0, 1.0, 2.0)
    assert ranking_metrics(np.array([[1.0, 2.0, 3.0]])) == (0.0, -1.0, -2.0)
    assert ranking_metrics(np.zeros((2, 4))) == (0.5, 0.0, 0.0)


def test_oracle_and_random_scores():
    d = generate_synthetic_preferences(SyntheticTask(n_heldout=4000), 0)
    r = SyntheticTask().oracle_reward(d.heldout.x, d.heldout.cond[:, None])
    assert ranking_metrics(r)[:2] == (1.0, 1.0)
    acc, tau, _ = ranking_metrics(np.random.default_rng(0).normal(size=r.shape))
    assert abs(acc - 0.5) < 0.02 and abs(tau) < 0.02


def _pair_data(seed):
    d = generate_synthetic_preferences(TINY_TASK, seed)
    return SyntheticDataset(pairs_only(d.train), pairs_only(d.heldout), d.pretrain_x, d.pretrain_cond)


def test_lpo_and_dpo_coincide_on_pairs():
    data = _pair_data(0)
    ref = Denoiser.init(SPEC, np.random.default_rng(0))
    runs = [train(replace(TINY_CFG, loss=loss), data, ref, np.random.default_rng(5), 1)
            for loss in ("lpo", "dpo", "gp-dpo")]
    for other in runs[1:]:
        assert np.max(np.abs(other.theta.params - runs[0].theta.params)) < 1e-10
        for a, b in zip(runs[0].records, other.records):
            assert abs(a.loss - b.loss) < 1e-10 and a.adj_acc == b.adj_acc


def test_training_records_and_reference_are_stable():
    data = generate_synthetic_preferences(TINY_TASK, 0)
    ref = Denoiser.init(SPEC, np.random.default_rng(0))
    before = ref.params.copy()
    res = train(TINY_CFG, data, ref, np.random.default_rng(2), 3)
    np.testing.assert_array_equal(ref.params, before)
    assert [r.step for r in res.records] == [0, 10, 20, 30]
    assert res.records[0].loss == pytest.approx(math.log(24))
    assert res.records[0].adj_acc == 0.5


def test_run_experiment_is_reproducible():
    a = run_experiment(TINY_TASK, TINY_CFG)
    b = run_experiment(TINY_TASK, TINY_CFG)
    assert metrics_csv(a.records) == metrics_csv(b.records)
    np.testing.assert_array_equal(a.theta.params, b.theta.params)
    assert metrics_csv(run_experiment(TINY_TASK, replace(TINY_CFG, seed=1)).records) != metrics_csv(a.records)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    with pytest.raises(TrainingDiverged) as exc:
        run_experiment(TINY_TASK, replace(TINY_CFG, lr=1e300, loss="gpo"))
    assert exc.value.phase == "train"
