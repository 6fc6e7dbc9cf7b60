"""First-order two-stage MAML: inner adaptation, outer update, stage driver.

``loss_fn(params, examples, rng)`` is the only model contract the loops
need: it returns a scalar Tensor; ``rng=None`` means evaluation mode
(no dropout).
"""

import time
from dataclasses import dataclass, field

import numpy as np

from xmetra.autodiff import clone_state, optimizer_step, sgd_step, value_and_grad
from xmetra.episodes import TaskDistribution, draw_task_batch, split_dev
from xmetra.exceptions import ConfigError, DivergenceError


@dataclass
class Checkpoint:
    step: int
    tasks_seen: int
    metrics: dict
    params: dict = field(repr=False)


@dataclass
class StageReport:
    stage: str
    steps: list = field(default_factory=list)
    query_losses: list = field(default_factory=list)
    tasks_seen: list = field(default_factory=list)
    elapsed: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    stop_reason: str = "budget"

    def __len__(self):
        return len(self.steps)

    def log(self, step, loss, tasks, elapsed):
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}", step=step, stage=self.stage)
        self.steps.append(step)
        self.query_losses.append(float(loss))
        self.tasks_seen.append(tasks)
        self.elapsed.append(elapsed)

    def rows(self):
        """One dict per logged step; checkpoint metrics are merged in where evaluated."""
        by_step = {c.step: c.metrics for c in self.checkpoints}
        for step, loss, tasks, el in zip(self.steps, self.query_losses, self.tasks_seen, self.elapsed):
            row = {"stage": self.stage, "step": step, "tasks": tasks, "query_loss": loss, "elapsed_s": el}
            row.update(by_step.get(step, {}))
            yield row

    def best_checkpoint(self, metric):
        if not self.checkpoints:
            return None
        # first checkpoint wins ties: earlier models are preferred
        return max(self.checkpoints, key=lambda c: (c.metrics.get(metric, -np.inf), -c.step))


class ConvergenceMonitor:
    def __init__(self, conv):
        self.conv = conv
        self.buffer = []
        self.best = np.inf
        self.stale = 0

    def update(self, loss):
        """Feed one loss; True once the stopping rule fires."""
        if not self.conv.enabled:
            return False
        self.buffer.append(loss)
        if len(self.buffer) < self.conv.window:
            return False
        avg = float(np.mean(self.buffer))
        self.buffer = []
        if avg < self.best - self.conv.min_delta:
            self.best = avg
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.conv.patience


def _snapshot(params):
    return {k: p.values.copy() for k, p in params.items()}


def freeze_layers(encoder, block_ids):
    """Parameter names whose updates are suppressed when ``block_ids`` are frozen.

    Only encoder blocks can be frozen; task heads always train.
    """
    names = set()
    for b in block_ids:
        if b not in encoder.block_ids:
            raise ConfigError(f"unknown encoder block {b}; valid ids are {encoder.block_ids}")
        names.update(encoder.block_params(b))
    return frozenset(names)


def inner_adapt(theta, support, n, alpha, loss_fn, rng=None, frozen=()):
    """``n`` plain gradient steps on the support loss, detaching after each.

    ``theta`` itself is never modified; the adapted copy is returned.
    """
    if len(support) == 0:
        raise ConfigError("empty support set")
    theta_j = clone_state(theta)
    for t in range(n):
        loss, grads = value_and_grad(lambda p: loss_fn(p, support, rng), theta_j)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite support loss at inner step {t}", step=t)
        theta_j = sgd_step(theta_j, grads, alpha, frozen)
    return theta_j


def outer_step(theta, tasks, config, opt_state, loss_fn, rng=None, frozen=()):
    """One meta-update over a task batch.

    Query-loss gradients are taken at each adapted ``theta_j`` (first-order
    surrogate for the gradient at ``theta``) and SUMMED over tasks before a
    single optimizer step at the outer rate.  Returns
    ``(theta', opt_state', summed query loss)``.
    """
    if not tasks:
        raise ConfigError("empty task batch")
    total = {k: np.zeros_like(p.values) for k, p in theta.items()}
    batch_loss = 0.0
    inner_rng = rng if config.inner_dropout else None
    for j, task in enumerate(tasks):
        try:
            theta_j = inner_adapt(theta, task.support, config.n, config.alpha, loss_fn, inner_rng, frozen) \
                if len(task.support) else clone_state(theta)
        except DivergenceError as exc:
            raise DivergenceError(f"task {j}: {exc}", step=exc.step, task=j) from None
        loss, grads = value_and_grad(lambda p: loss_fn(p, task.query, inner_rng), theta_j)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite query loss for task {j}", task=j)
        batch_loss += loss
        for k in total:
            total[k] += grads[k]
    theta_new, opt_state = optimizer_step(theta, total, opt_state, frozen)
    return theta_new, opt_state, batch_loss


def run_stage(theta, dist, config, loss_fn, rng, opt_state=None, eval_fn=None, frozen=(), stage_name=None):
    """Repeat :func:`outer_step` over fresh task batches until the task budget
    is spent or the query loss converges.

    ``eval_fn(params) -> dict`` is called every ``config.eval_every`` outer
    steps and after the last one; each call stores a parameter snapshot.
    """
    report = StageReport(stage_name or dist.stage.value)
    if opt_state is None:
        opt_state = config.outer_state()
    if dist.total_tasks == 0:
        report.stop_reason = "empty"
        return theta, report
    monitor = ConvergenceMonitor(config.convergence)
    t0 = time.perf_counter()
    seen, step = 0, 0
    while seen < dist.total_tasks:
        b = min(config.task_batch_size, dist.total_tasks - seen)
        tasks = draw_task_batch(dist, b, rng)
        try:
            theta, opt_state, loss = outer_step(theta, tasks, config, opt_state, loss_fn, rng, frozen)
        except DivergenceError as exc:
            exc.stage = report.stage
            exc.args = (f"stage {report.stage}, outer step {step + 1}: {exc}",)
            raise
        seen += b
        step += 1
        report.log(step, loss, seen, time.perf_counter() - t0)
        converged = monitor.update(loss / b)
        last = converged or seen >= dist.total_tasks
        if eval_fn is not None and (step % config.eval_every == 0 or last):
            report.checkpoints.append(Checkpoint(step, seen, dict(eval_fn(theta)), _snapshot(theta)))
        if converged:
            report.stop_reason = "converged"
            break
    return theta, report


@dataclass
class MetaResult:
    params: dict
    reports: list
    query_slice: list
    adapt_slice: list


def _stage_rng(seed, stage):
    return np.random.default_rng([seed, stage])


def run_xmetra(theta_pre, source_train, target_dev, config, loss_fn, seed=0, eval_fn=None, family="mtod",
               frozen=()):
    """Meta-train only: support from ``source_train``, query from all of ``target_dev``."""
    dist = TaskDistribution.meta_train(source_train, list(target_dev), config.episode_spec,
                                       config.total_tasks, family)
    params, rep = run_stage(clone_state(theta_pre), dist, config, loss_fn, _stage_rng(seed, 1),
                            config.outer_state(), eval_fn, frozen, "meta_train")
    return MetaResult(params, [rep], list(target_dev), [])


def run_xmetra_ada(theta_pre, source_train, target_dev, config, loss_fn, seed=0, eval_fn=None, family="mtod",
                   frozen=()):
    """Meta-train on (source support, target query slice), then meta-adapt on the
    remaining target slice.  ``dev_split_fraction == 1`` reduces to X-METRA.
    """
    q_slice, a_slice = split_dev(list(target_dev), config.dev_split_fraction, seed)
    if config.dev_split_fraction < 1.0 and not a_slice:
        raise ConfigError("meta-adapt slice is empty; use X-METRA (dev_split_fraction=1.0) instead")
    dist = TaskDistribution.meta_train(source_train, q_slice, config.episode_spec, config.total_tasks, family)
    params, rep1 = run_stage(clone_state(theta_pre), dist, config, loss_fn, _stage_rng(seed, 1),
                             config.outer_state(), eval_fn, frozen, "meta_train")
    if not a_slice:
        return MetaResult(params, [rep1], q_slice, [])
    dist2 = TaskDistribution.meta_adapt(a_slice, config.episode_spec, config.total_tasks, family)
    # fresh outer-optimizer moments for the second stage
    params, rep2 = run_stage(params, dist2, config, loss_fn, _stage_rng(seed, 2),
                             config.outer_state(), eval_fn, frozen, "meta_adapt")
    return MetaResult(params, [rep1, rep2], q_slice, a_slice)
