"""Experiment harness: data preparation, per-seed training cells, sweeps, CSV reports."""

import csv
import dataclasses
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from xmetra.cli.config import all_blocks, block_label, parse_blocks
from xmetra.data import (LabelSpace, Schema, Split, Vocab, featurize_mtod, featurize_qa, generate_synthetic_pair,
                         generate_synthetic_qa, load_corpus)
from xmetra.episodes import EpisodeSpec
from xmetra.evaluation import evaluate_mtod, evaluate_qa
from xmetra.exceptions import ConfigError, SamplingError, SpecError
from xmetra.meta import BaselineConfig, BaselineKind, Corpora, freeze_layers, run_baseline
from xmetra.metrics import aggregate_seeds
from xmetra.models import IntentSlotModel, QASpanModel
from xmetra.models.qa import MAX_SEQ_LEN

SUMMARY_COLUMNS = ("cell", "kind", "metric", "mean", "std", "n", "values")
_PRE_DEPENDENT = (BaselineKind.FT, BaselineKind.FT_WITH_EN, BaselineKind.X_METRA, BaselineKind.X_METRA_ADA)


# ---------------------------------------------------------------- CSV

def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _parse(text):
    if text == "":
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def write_csv(path, rows, columns=None):
    """Write dict rows; floats use their shortest exact repr so reading back is lossless."""
    rows = list(rows)
    if columns is None:
        columns = []
        for row in rows:
            columns += [k for k in row if k not in columns]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
    return path


def read_csv(path):
    """Rows as dicts with ints, floats and ``None`` (empty cells) restored."""
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# ---------------------------------------------------------------- data

@dataclass
class Experiment:
    family: str
    model: object
    source_train: list
    target_dev: list
    target_test: list
    eval_fn: object


def _load_corpora(cfg):
    if cfg.synthetic:
        if cfg.family == "mtod":
            src, tgt = generate_synthetic_pair(cfg.source_spec, cfg.target_spec)
            return src[Split.TRAIN], tgt[Split.DEV], tgt[Split.TEST]
        s, t = cfg.source_spec, cfg.target_spec
        return (generate_synthetic_qa(s, s.train_size, Split.TRAIN), generate_synthetic_qa(t, t.dev_size, Split.DEV),
                generate_synthetic_qa(t, t.test_size, Split.TEST))
    schema = Schema.MTOD if cfg.family == "mtod" else Schema.QA
    p = cfg.paths
    return (load_corpus(p["source_train"], schema, Split.TRAIN), load_corpus(p["target_dev"], schema, Split.DEV),
            load_corpus(p["target_test"], schema, Split.TEST))


def prepare(cfg):
    """Corpora, vocabulary, model and target-test evaluator for one config.

    The vocabulary covers source train and target dev only; test words
    outside it map to ``[UNK]``.
    """
    train, dev, test = _load_corpora(cfg)
    vocab = Vocab.build([train, dev])
    enc = dataclasses.replace(cfg.encoder, vocab_size=len(vocab))
    if cfg.family == "mtod":
        labels = LabelSpace.from_corpora([train, dev, test])
        feats = [featurize_mtod(c.examples, vocab, labels) for c in (train, dev, test)]
        model = IntentSlotModel(enc, len(labels.intents), len(labels.slots))

        def eval_fn(params):
            return evaluate_mtod(model, params, feats[2], labels.slots)
    else:
        if "model.max_seq_len" not in dict(cfg.raw):
            enc = dataclasses.replace(enc, max_seq_len=MAX_SEQ_LEN)
        feats = [featurize_qa(c.examples, vocab) for c in (train, dev, test)]
        model = QASpanModel(enc)

        def eval_fn(params):
            return evaluate_qa(model, params, feats[2])
    return Experiment(cfg.family, model, feats[0], feats[1], feats[2], eval_fn)


def subsample_pool(pool, fraction, seed):
    """Seeded subset of ``round(fraction * n)`` items in original order.

    Subsets for increasing fractions are nested; fraction 1 is the pool itself.
    """
    pool = list(pool)
    if fraction >= 1.0:
        return pool
    order = np.random.default_rng([seed, 0xD0]).permutation(len(pool))
    keep = np.sort(order[:int(round(fraction * len(pool)))])
    return [pool[i] for i in keep]


# ---------------------------------------------------------------- training cells

@dataclass
class Selection:
    kind: str
    seed: int
    stage: str
    step: int
    metrics: dict


def select_checkpoint(kind, reports, metric, fallback=None):
    """Best checkpoint on ``metric`` for the meta-learners; final checkpoint otherwise.

    FT, FT w/EN and MONO train on the target dev pool, so no held-out
    target signal exists for choosing among their checkpoints.
    """
    kind = BaselineKind(kind)
    cands = [(rep.stage, ck) for rep in reports for ck in rep.checkpoints]
    if not cands:
        return "final", 0, dict(fallback() if fallback else {})
    if kind.is_meta:
        # earliest checkpoint wins ties
        best = max(range(len(cands)), key=lambda i: (cands[i][1].metrics.get(metric, -np.inf), -i))
        stage, ck = cands[best]
    else:
        stage, ck = cands[-1]
    return stage, ck.step, dict(ck.metrics)


def baseline_config(cfg, meta=None):
    return BaselineConfig(pre=cfg.pre, mono=cfg.mono, ft=cfg.ft, meta=meta or cfg.meta, family=cfg.family)


_PRE_CACHE = {}


def _data_key(cfg):
    keep = ("synthetic.", "data.", "model.", "experiment.family")
    stats = tuple((p, os.stat(p).st_mtime_ns, os.stat(p).st_size) for p in sorted((cfg.paths or {}).values()))
    return tuple(kv for kv in cfg.resolved() if kv[0].startswith(keep)), stats


def _pre_key(cfg, seed):
    keep = ("pre.", "convergence.", "experiment.eval_every", "experiment.select_metric")
    return _data_key(cfg), tuple(kv for kv in cfg.resolved() if kv[0].startswith(keep)), seed


def pre_run(exp, cfg, seed):
    """PRE result for ``seed``, memoised per process (it is shared by every dependent kind)."""
    key = _pre_key(cfg, seed)
    if key not in _PRE_CACHE:
        corpora = Corpora(exp.source_train, exp.target_dev)
        _PRE_CACHE[key] = run_baseline(BaselineKind.PRE, corpora, exp.model, baseline_config(cfg), seed,
                                       eval_fn=exp.eval_fn)
    return _PRE_CACHE[key]


def frozen_names(exp, blocks):
    return freeze_layers(exp.model.encoder, sorted(blocks)) if blocks else frozenset()


def train_kind(exp, cfg, kind, seed, meta=None, target_dev=None, blocks=None):
    """Train one kind for one seed; returns ``(BaselineResult, Selection)``."""
    kind = BaselineKind(kind)
    blocks = (meta or cfg.meta).frozen_blocks if blocks is None else blocks
    frozen = frozen_names(exp, blocks)
    if kind is BaselineKind.PRE and not frozen:
        result = pre_run(exp, cfg, seed)
    else:
        pre = pre_run(exp, cfg, seed).params if kind in _PRE_DEPENDENT else None
        dev = exp.target_dev if target_dev is None else target_dev
        result = run_baseline(kind, Corpora(exp.source_train, dev), exp.model, baseline_config(cfg, meta), seed,
                              pre_params=pre, eval_fn=exp.eval_fn, frozen=frozen)
    stage, step, metrics = select_checkpoint(kind, result.reports, cfg.metric, lambda: exp.eval_fn(result.params))
    return result, Selection(kind.value, seed, stage, step, metrics)


def _stage_rows(result, **extra):
    rows = []
    for rep in result.reports:
        for row in rep.rows():
            rows.append({**extra, **row})
    return rows


def _selection_row(sel, **extra):
    return {**extra, "kind": sel.kind, "seed": sel.seed, "selected_stage": sel.stage, "selected_step": sel.step,
            **sel.metrics}


# ---------------------------------------------------------------- cell execution

def _workers():
    raw = os.environ.get("XMETRA_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"XMETRA_WORKERS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("XMETRA_WORKERS must be >= 1")
    return n


_WORKER_EXP = {}


def _cell_entry(fn, cfg, cell):
    key = _data_key(cfg)
    if key not in _WORKER_EXP:
        _WORKER_EXP.clear()
        _WORKER_EXP[key] = prepare(cfg)
    return fn(_WORKER_EXP[key], cfg, cell)


def run_cells(fn, cfg, cells, exp=None):
    """Evaluate ``fn(exp, cfg, cell)`` for every cell, merged in cell order.

    ``XMETRA_WORKERS`` > 1 runs cells in separate processes; results are
    identical to the serial run because every cell seeds itself.
    """
    cells = list(cells)
    workers = min(_workers(), len(cells)) if cells else 1
    if workers <= 1:
        exp = exp if exp is not None else prepare(cfg)
        return [fn(exp, cfg, c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_cell_entry, [fn] * len(cells), [cfg] * len(cells), cells))


# ---------------------------------------------------------------- summaries

def summarize(groups, metric_names):
    """``groups``: ordered ``{(cell, kind): [metrics dict per seed]}`` -> summary rows."""
    rows = []
    for (cell, kind), per_seed in groups.items():
        for m in metric_names:
            vals = [d[m] for d in per_seed if d.get(m) is not None]
            if not vals:
                continue
            agg = aggregate_seeds(vals, m, len(vals))
            rows.append({"cell": cell, "kind": kind, "metric": m, "mean": agg.mean, "std": agg.std,
                         "n": len(vals), "values": ";".join(repr(v) for v in agg.values)})
    return rows


def _metric_names(family):
    return ("intent_acc", "slot_f1") if family == "mtod" else ("qa_f1", "qa_em")


def _start(cfg, sweep=None):
    cfg.validate(sweep)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.echo(), encoding="utf-8")
    return out


def _finish(out, summary_rows, extra_files):
    files = [write_csv(out / "summary.csv", summary_rows, SUMMARY_COLUMNS)]
    return files + extra_files


# ---------------------------------------------------------------- run

def _seed_cell(exp, cfg, seed):
    sels, stages = [], []
    for kind in cfg.kinds:
        result, sel = train_kind(exp, cfg, kind, seed)
        sels.append(sel)
        stages.append((kind.value, result))
    return sels, stages


def run_experiment(cfg, exp=None):
    """Train every configured kind for every seed and write the reports.

    Files: ``config.txt``, ``seed<S>/<KIND>.<stage>.csv`` learning curves,
    ``runs.csv`` (selected checkpoint per kind and seed) and ``summary.csv``
    (mean and sample std over seeds).
    """
    out = _start(cfg)
    results = run_cells(_seed_cell, cfg, cfg.seeds, exp)
    files, run_rows, groups = [], [], {}
    for seed, (sels, stages) in zip(cfg.seeds, results):
        for kind, result in stages:
            for rep in result.reports:
                files.append(write_csv(out / f"seed{seed}" / f"{kind}.{rep.stage}.csv", list(rep.rows())))
        for sel in sels:
            run_rows.append(_selection_row(sel))
            groups.setdefault(("run", sel.kind), []).append(sel.metrics)
    files.append(write_csv(out / "runs.csv", run_rows))
    summary = summarize(groups, _metric_names(cfg.family))
    return {"summary": summary, "runs": run_rows, "files": _finish(out, summary, files)}


# ---------------------------------------------------------------- k-shot sweep

def _kq_status(cfg, k, q):
    try:
        spec = EpisodeSpec(k, q)
        if cfg.family == "qa":
            spec.check_qa()
    except SpecError as exc:
        return f"skipped: {exc}"
    return "ok"


def _kshot_cell(exp, cfg, cell):
    k, q, seed = cell
    meta = cfg.meta.with_(k=k, q=q)
    result, sel = train_kind(exp, cfg, cfg.sweep.kind, seed, meta=meta)
    return result, sel


def kshot_sweep(cfg, exp=None):
    """One run of ``sweep.kind`` per (k, q, seed); invalid cells become warning rows."""
    out = _start(cfg, "kshot")
    grid = cfg.sweep.kq_grid()
    status = {kq: _kq_status(cfg, *kq) for kq in grid}
    for kq, st in status.items():
        if st != "ok":
            warnings.warn(f"k={kq[0]}, q={kq[1]} {st}", RuntimeWarning, stacklevel=2)
    cells = [(k, q, s) for (k, q) in grid if status[(k, q)] == "ok" for s in cfg.seeds]
    results = iter(run_cells(_kshot_cell, cfg, cells, exp))
    curve, groups = [], {}
    for k, q in grid:
        if status[(k, q)] != "ok":
            curve.append({"k": k, "q": q, "status": status[(k, q)]})
            continue
        for seed in cfg.seeds:
            result, sel = next(results)
            base = {"k": k, "q": q, "seed": seed, "kind": sel.kind, "status": "ok"}
            for rep in result.reports:
                for ck in rep.checkpoints:
                    idx = rep.steps.index(ck.step)
                    curve.append({**base, "stage": rep.stage, "step": ck.step, "tasks": ck.tasks_seen,
                                  "query_loss": rep.query_losses[idx], **ck.metrics})
            groups.setdefault((f"k={k},q={q}", sel.kind), []).append(sel.metrics)
    files = [write_csv(out / "kshot.csv", curve)]
    summary = summarize(groups, _metric_names(cfg.family))
    return {"summary": summary, "curve": curve, "files": _finish(out, summary, files)}


# ---------------------------------------------------------------- downsampling sweep

DOWNSAMPLE_KINDS = (BaselineKind.X_METRA_ADA, BaselineKind.FT)


def _downsample_cell(exp, cfg, cell):
    fraction, seed = cell
    pool = subsample_pool(exp.target_dev, fraction, seed)
    row = {"fraction": fraction, "seed": seed, "pool_size": len(pool)}
    if not pool:
        return {**row, "status": "skipped: empty pool"}, []
    sels = []
    try:
        for kind in DOWNSAMPLE_KINDS:
            sels.append(train_kind(exp, cfg, kind, seed, target_dev=pool)[1])
    except (ConfigError, SamplingError) as exc:
        return {**row, "status": f"skipped: {exc}"}, []
    row["status"] = "ok"
    for sel in sels:
        row.update({f"{sel.kind}_{m}": v for m, v in sel.metrics.items()})
    return row, sels


def downsample_sweep(cfg, exp=None):
    """X-METRA-ADA and FT on seeded subsets of the target dev pool."""
    out = _start(cfg, "downsample")
    cells = [(f, s) for f in cfg.sweep.fractions for s in cfg.seeds]
    rows, groups = [], {}
    for (fraction, _), (row, sels) in zip(cells, run_cells(_downsample_cell, cfg, cells, exp)):
        if row["status"] != "ok":
            warnings.warn(f"fraction {fraction}: {row['status']}", RuntimeWarning, stacklevel=2)
        rows.append(row)
        for sel in sels:
            groups.setdefault((f"fraction={fraction}", sel.kind), []).append(sel.metrics)
    files = [write_csv(out / "downsample.csv", rows)]
    summary = summarize(groups, _metric_names(cfg.family))
    return {"summary": summary, "rows": rows, "files": _finish(out, summary, files)}


# ---------------------------------------------------------------- freezing sweep

def freeze_grid(entries, encoder_config):
    """Expand ``none`` / ``pairs`` / ``all`` / explicit sets into ordered, distinct block sets.

    ``pairs`` is consecutive disjoint pairs ``0+1, 2+3, ...`` (a trailing
    odd block stands alone).
    """
    blocks = sorted(all_blocks(encoder_config))
    grid = []
    for entry in entries:
        if entry.strip().lower() == "pairs":
            sets = [frozenset(blocks[i:i + 2]) for i in range(0, len(blocks), 2)]
        else:
            b = parse_blocks(entry, "sweep.freeze")
            sets = [frozenset(blocks) if b == "all" else b]
        for s in sets:
            bad = sorted(set(s) - set(blocks))
            if bad:
                raise ConfigError(f"sweep.freeze: unknown encoder blocks {bad}; valid ids are {blocks}")
            if s not in grid:
                grid.append(s)
    return grid


def _changed(before, after, names):
    return any(not np.array_equal(before[n].values, after[n].values) for n in names)


def _freeze_cell(exp, cfg, cell):
    blocks, seed = cell
    result, sel = train_kind(exp, cfg, cfg.sweep.kind, seed, blocks=blocks)
    names = frozen_names(exp, blocks)
    start = pre_run(exp, cfg, seed).params
    heads = [n for n in start if not n.startswith("encoder.")]
    final = result.reports[-1].checkpoints[-1].metrics if result.reports[-1].checkpoints else exp.eval_fn(result.params)
    row = {"freeze": block_label(blocks), "seed": seed, "kind": sel.kind,
           "frozen_changed": _changed(start, result.params, names) if names else None,
           "heads_changed": _changed(start, result.params, heads),
           **{f"final_{m}": v for m, v in final.items()}, **{f"best_{m}": v for m, v in sel.metrics.items()}}
    return row, final


def freeze_sweep(cfg, exp=None):
    """One run of ``sweep.kind`` per frozen block set, with a parameter-change audit."""
    out = _start(cfg, "freeze")
    grid = freeze_grid(cfg.sweep.freeze, cfg.encoder)
    cells = [(b, s) for b in grid for s in cfg.seeds]
    rows, groups = [], {}
    for (blocks, _), (row, final) in zip(cells, run_cells(_freeze_cell, cfg, cells, exp)):
        rows.append(row)
        groups.setdefault((f"freeze={block_label(blocks)}", cfg.sweep.kind.value), []).append(final)
    files = [write_csv(out / "freeze.csv", rows)]
    summary = summarize(groups, _metric_names(cfg.family))
    return {"summary": summary, "rows": rows, "files": _finish(out, summary, files)}
