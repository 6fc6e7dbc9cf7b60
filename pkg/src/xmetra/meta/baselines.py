"""Internal baselines: PRE, MONO, FT, FT w/EN, and dispatch to the meta-learners."""

import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from xmetra.autodiff import make_state, optimizer_step, value_and_grad
from xmetra.exceptions import ConfigError, DivergenceError
from xmetra.meta.config import BaselineKind, MetaConfig, TrainConfig
from xmetra.meta.maml import Checkpoint, ConvergenceMonitor, StageReport, run_xmetra, run_xmetra_ada


def model_loss_fn(model):
    """Adapt ``model.loss`` to the ``loss_fn(params, examples, rng)`` contract."""

    def loss_fn(params, examples, rng=None):
        return model.loss(params, examples, train=rng is not None, rng=rng)

    return loss_fn


def example_language(ex):
    src = getattr(ex, "source", None)
    return getattr(src if src is not None else ex, "language", "und")


class ProvenanceCounter:
    """Wraps a loss function and counts, per language, every example it sees."""

    def __init__(self, loss_fn):
        self.loss_fn = loss_fn
        self.counts = Counter()
        self.seen_ids = set()

    def __call__(self, params, examples, rng=None):
        for ex in examples:
            self.counts[example_language(ex)] += 1
            self.seen_ids.add(id(ex))
        return self.loss_fn(params, examples, rng)


def epoch_batches(n, batch_size, rng):
    """Endless stream of index batches; each epoch is a fresh permutation."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]


def train_supervised(params, examples, loss_fn, config, rng, eval_fn=None, frozen=(), stage="train"):
    """Mini-batch AdamW training until ``max_steps`` or loss convergence."""
    report = StageReport(stage)
    if config.max_steps == 0 or not examples:
        report.stop_reason = "empty"
        return params, report
    opt = config.optimizer()
    monitor = ConvergenceMonitor(config.convergence)
    batches = epoch_batches(len(examples), config.batch_size, rng)
    t0 = time.perf_counter()
    for step in range(1, config.max_steps + 1):
        batch = [examples[i] for i in next(batches)]
        loss, grads = value_and_grad(lambda p: loss_fn(p, batch, rng), params)
        if not np.isfinite(loss):
            raise DivergenceError(f"stage {stage}: non-finite loss at step {step}", step=step, stage=stage)
        params, opt = optimizer_step(params, grads, opt, frozen)
        report.log(step, loss, step * config.batch_size, time.perf_counter() - t0)
        converged = monitor.update(loss)
        last = converged or step == config.max_steps
        if eval_fn is not None and (step % config.eval_every == 0 or last):
            report.checkpoints.append(Checkpoint(step, step * config.batch_size, dict(eval_fn(params)),
                                                 {k: p.values.copy() for k, p in params.items()}))
        if converged:
            report.stop_reason = "converged"
            break
    return params, report


@dataclass
class Corpora:
    """Featurized example lists a baseline may draw on."""

    source_train: list = None
    target_dev: list = None


@dataclass
class BaselineConfig:
    pre: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1e-3, batch_size=32, max_steps=2000))
    mono: TrainConfig = field(default_factory=TrainConfig)
    ft: TrainConfig = field(default_factory=TrainConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    family: str = "mtod"


@dataclass
class BaselineResult:
    kind: BaselineKind
    params: dict
    reports: list
    provenance: Counter


def init_params(model, seed):
    return make_state(model.init_params(np.random.default_rng([seed, 0x1A17])))


def _need(corpora, *names):
    for name in names:
        if not getattr(corpora, name):
            raise ConfigError(f"baseline needs the {name} corpus")


def run_baseline(kind, corpora, model, config, seed=0, pre_params=None, eval_fn=None, frozen=()):
    """Train one baseline.

    PRE and MONO start from a fresh initialisation; FT, FT w/EN and both
    meta-learners start from ``pre_params`` (trained here from scratch on
    the source corpus when not supplied).
    """
    kind = BaselineKind(kind)
    counter = ProvenanceCounter(model_loss_fn(model))
    rng = np.random.default_rng([seed, 0xBA5E, list(BaselineKind).index(kind)])

    if kind is BaselineKind.PRE:
        _need(corpora, "source_train")
        params, rep = train_supervised(init_params(model, seed), corpora.source_train, counter, config.pre,
                                       rng, eval_fn, frozen, "pre")
        return BaselineResult(kind, params, [rep], counter.counts)
    if kind is BaselineKind.MONO:
        _need(corpora, "target_dev")
        params, rep = train_supervised(init_params(model, seed), corpora.target_dev, counter, config.mono,
                                       rng, eval_fn, frozen, "mono")
        return BaselineResult(kind, params, [rep], counter.counts)

    if pre_params is None:
        pre_params = run_baseline(BaselineKind.PRE, corpora, model, config, seed).params
    if kind is BaselineKind.FT:
        _need(corpora, "target_dev")
        params, rep = train_supervised(pre_params, corpora.target_dev, counter, config.ft, rng, eval_fn, frozen, "ft")
        return BaselineResult(kind, params, [rep], counter.counts)
    if kind is BaselineKind.FT_WITH_EN:
        _need(corpora, "target_dev", "source_train")
        pool = list(corpora.target_dev) + list(corpora.source_train)
        params, rep = train_supervised(pre_params, pool, counter, config.ft, rng, eval_fn, frozen, "ft_with_en")
        return BaselineResult(kind, params, [rep], counter.counts)

    _need(corpora, "source_train", "target_dev")
    runner = run_xmetra if kind is BaselineKind.X_METRA else run_xmetra_ada
    result = runner(pre_params, corpora.source_train, corpora.target_dev, config.meta, counter, seed,
                    eval_fn, config.family, frozen)
    return BaselineResult(kind, result.params, result.reports, counter.counts)
