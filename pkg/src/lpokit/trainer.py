"""Pretraining, preference fine-tuning and ranking evaluation at desk scale."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .diffusion import (
    Denoiser,
    DenoiserSpec,
    NoiseSchedule,
    default_schedule,
    dm_loss,
    forward_noise,
)
from .gradients import LOSS_NAMES, objective, sample_draws
from .synthetic import ListSet, SyntheticDataset, SyntheticTask, generate_synthetic_preferences

METRICS_HEADER = ("step", "loss", "adj_acc", "kendall_tau", "reward_gap")


class TrainingDiverged(RuntimeError):
    def __init__(self, phase: str, step: int):
        super().__init__(f"{phase} loss became non-finite at step {step}")
        self.phase = phase
        self.step = step


@dataclass(frozen=True)
class TrainingConfig:
    seed: int = 0
    steps: int = 2000
    batch_size: int = 64
    lr: float = 1e-3
    warmup_frac: float = 0.05
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: str = "lpo"
    beta: float = 0.01
    lambda_gamma: float = 0.5
    independent_t: bool = False
    T: int = 100
    omega_mode: str = "constant"
    time_width: int = 16
    hidden: int = 64
    cond_width: int = 4
    pretrain_steps: int = 1500
    pretrain_batch: int = 256
    pretrain_lr: float = 3e-3
    eval_every: int = 100
    eval_draws: int = 32

    def __post_init__(self):
        if self.loss not in LOSS_NAMES:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {LOSS_NAMES}")
        if self.steps < 0 or self.pretrain_steps < 0:
            raise ValueError("step counts must be non-negative")
        if self.lr < 0 or self.pretrain_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if self.batch_size < 1 or self.pretrain_batch < 1 or self.eval_every < 1 or self.eval_draws < 1:
            raise ValueError("batch sizes, eval_every and eval_draws must be positive")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ValueError("warmup_frac must lie in [0, 1]")

    def schedule(self) -> NoiseSchedule:
        return default_schedule(self.T, self.omega_mode)

    def denoiser_spec(self, task: SyntheticTask) -> DenoiserSpec:
        return DenoiserSpec(task.dim, self.time_width, self.hidden, self.cond_width, task.n_conditions)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    loss: float
    adj_acc: float
    kendall_tau: float
    reward_gap: float

    def csv_row(self) -> str:
        return ",".join([str(self.step), *(repr(float(v)) for v in
                                           (self.loss, self.adj_acc, self.kendall_tau, self.reward_gap))])


class Adam:
    def __init__(self, n: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        params -= lr * mhat / (np.sqrt(vhat) + self.eps)


def warmup_lr(base: float, step: int, total: int, warmup_frac: float) -> float:
    """Linear warmup over the first ``warmup_frac`` of training, then flat.
    ``step`` is 1-based."""
    n = math.ceil(warmup_frac * total)
    return base * min(1.0, step / n) if n > 0 else base


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("data", "init", "pretrain", "train", "eval")
    kids = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(k) for n, k in zip(names, kids)}


@dataclass
class PretrainResult:
    reference: Denoiser
    losses: list[float]


def pretrain(net: Denoiser, x0: np.ndarray, cond: np.ndarray, cfg: TrainingConfig,
             rng: np.random.Generator) -> PretrainResult:
    """Fit the denoising loss on unranked data. The returned network is the
    frozen reference; ``net`` itself is not modified."""
    net = net.copy()
    sched = cfg.schedule()
    opt = Adam(net.params.size, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    losses = []
    n = x0.shape[0]
    for step in range(1, cfg.pretrain_steps + 1):
        idx = rng.integers(0, n, size=min(cfg.pretrain_batch, n))
        loss, grad = dm_loss(net, x0[idx], cond[idx], sched, rng)
        if not math.isfinite(loss):
            raise TrainingDiverged("pretrain", step)
        losses.append(loss)
        opt.step(net.params, grad, warmup_lr(cfg.pretrain_lr, step, cfg.pretrain_steps, cfg.warmup_frac))
    return PretrainResult(net, losses)


# -- evaluation ------------------------------------------------------------

def list_scores(theta: Denoiser, ref: Denoiser, lists: ListSet, sched: NoiseSchedule,
                beta: float, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo implicit reward of every list element, (G, m).

    All elements of a list share the same ``(t, eps)`` draws, so differences
    within a list come only from the clean samples.
    """
    G, m, d = lists.x.shape
    t = rng.integers(1, sched.T + 1, size=(G, n_draws))
    eps = rng.standard_normal((G, n_draws, d))
    x0 = np.broadcast_to(lists.x[:, None], (G, n_draws, m, d)).reshape(-1, d)
    tt = np.broadcast_to(t[:, :, None], (G, n_draws, m)).reshape(-1)
    ee = np.broadcast_to(eps[:, :, None], (G, n_draws, m, d)).reshape(-1, d)
    cc = np.broadcast_to(lists.cond[:, None, None], (G, n_draws, m)).reshape(-1)
    xt = forward_noise(x0, tt, ee, sched)
    dlt = -(np.sum((ee - theta.forward(xt, tt, cc)) ** 2, axis=1)
            - np.sum((ee - ref.forward(xt, tt, cc)) ** 2, axis=1))
    r = beta * sched.T * sched.omega(tt) * dlt
    return r.reshape(G, n_draws, m).mean(axis=1)


def implicit_reward(theta: Denoiser, ref: Denoiser, x0, cond, sched: NoiseSchedule, beta: float,
                    n_draws: int, seed: int) -> float:
    """Monte-Carlo estimate of ``E_{t, eps}[beta * T * omega_t * delta]`` for one sample."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    x = np.asarray(x0, dtype=np.float64).reshape(1, 1, -1)
    scores = list_scores(theta, ref, ListSet(x, np.array([cond])), sched, beta, n_draws,
                         np.random.default_rng(seed))
    return float(scores[0, 0])


def ranking_metrics(scores: np.ndarray) -> tuple[float, float, float]:
    """Adjacent-pair accuracy, mean Kendall tau and mean top-minus-bottom gap
    for scores (G, m) whose columns are in true preference order.

    Ties earn half credit in accuracy and count zero in tau.
    """
    scores = np.asarray(scores, dtype=np.float64)
    G, m = scores.shape
    adj = np.sign(scores[:, :-1] - scores[:, 1:])
    acc = float(np.mean((adj + 1.0) / 2.0))
    j, k = np.triu_indices(m, 1)
    tau = float(np.mean(np.sign(scores[:, j] - scores[:, k]).sum(axis=1) / len(j)))
    gap = float(np.mean(scores[:, 0] - scores[:, -1]))
    return acc, tau, gap


def eval_ranking_accuracy(theta: Denoiser, ref: Denoiser, lists: ListSet, sched: NoiseSchedule,
                          beta: float, n_draws: int, seed: int) -> tuple[float, float, float]:
    if len(lists) == 0:
        raise ValueError("no lists to evaluate")
    scores = list_scores(theta, ref, lists, sched, beta, n_draws, np.random.default_rng(seed))
    return ranking_metrics(scores)


# -- preference fine-tuning -------------------------------------------------

@dataclass
class TrainResult:
    records: list[MetricsRecord]
    theta: Denoiser
    reference: Denoiser
    pretrain_losses: list[float] = field(default_factory=list)


def train(cfg: TrainingConfig, data: SyntheticDataset, reference: Denoiser,
          rng: np.random.Generator, eval_seed: int = 0) -> TrainResult:
    """Fine-tune a copy of ``reference`` on ranked lists with ``cfg.loss``.

    Metrics are recorded at step 0 (before any update) and every
    ``eval_every`` steps. The loss column is the mean batch loss since the
    previous record; the step-0 row uses the first batch at the reference.
    Every evaluation uses the same held-out draws (``eval_seed``).
    """
    sched = cfg.schedule()
    theta = reference.copy()
    frozen = reference.params.copy()
    opt = Adam(theta.params.size, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    train_set = data.train
    G, m, d = train_set.x.shape

    def evaluate():
        return eval_ranking_accuracy(theta, reference, data.heldout, sched, cfg.beta,
                                     cfg.eval_draws, eval_seed)

    initial_eval = evaluate()
    records: list[MetricsRecord] = []
    window: list[float] = []
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, G, size=cfg.batch_size)
        draws = sample_draws(rng, cfg.batch_size, m, d, sched.T, cfg.independent_t)
        res = objective(theta, reference, train_set.x[idx], train_set.cond[idx], draws, sched,
                        cfg.beta, cfg.loss, cfg.lambda_gamma)
        if not (math.isfinite(res.value) and np.all(np.isfinite(res.grad))):
            raise TrainingDiverged("train", step)
        if step == 1:
            records.append(MetricsRecord(0, res.value, *initial_eval))
        window.append(res.value)
        opt.step(theta.params, res.grad, warmup_lr(cfg.lr, step, cfg.steps, cfg.warmup_frac))
        if step % cfg.eval_every == 0 or step == cfg.steps:
            records.append(MetricsRecord(step, math.fsum(window) / len(window), *evaluate()))
            window = []
    if cfg.steps == 0:
        records.append(MetricsRecord(0, float("nan"), *initial_eval))
    if not np.array_equal(frozen, reference.params):
        raise RuntimeError("reference parameters changed during training")
    return TrainResult(records, theta, reference)


def run_experiment(task: SyntheticTask, cfg: TrainingConfig) -> TrainResult:
    """Data generation, pretraining and fine-tuning from a single seed."""
    streams = seed_streams(cfg.seed)
    data = generate_synthetic_preferences(task, int(streams["data"].integers(2**31)))
    net = Denoiser.init(cfg.denoiser_spec(task), streams["init"])
    pre = pretrain(net, data.pretrain_x, data.pretrain_cond, cfg, streams["pretrain"])
    eval_seed = int(streams["eval"].integers(2**31))
    result = train(cfg, data, pre.reference, streams["train"], eval_seed)
    result.pretrain_losses = pre.losses
    return result


def metrics_csv(records: list[MetricsRecord]) -> str:
    return "\n".join([",".join(METRICS_HEADER), *(r.csv_row() for r in records)]) + "\n"
