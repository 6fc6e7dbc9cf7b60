"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v``; the verdicts are also gathered
in the "acceptance criteria" section of the terminal summary.
"""

import dataclasses
import itertools
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from xmetra.autodiff import Tensor, finite_difference_check, log_softmax, make_state, mean, nll_pick
from xmetra.autodiff import sum as tsum
from xmetra.cli.config import all_blocks, load_config
from xmetra.cli.harness import pre_run, prepare, run_experiment, train_kind, write_csv
from xmetra.data import SyntheticLanguageSpec, Utterance, generate_synthetic_qa
from xmetra.episodes import EpisodeSpec, PseudoTask, SimilarityIndex, sample_mtod_task, sample_qa_task
from xmetra.exceptions import SpecError
from xmetra.meta import (Convergence, MetaConfig, init_params, inner_adapt, model_loss_fn, outer_step, run_xmetra,
                         run_xmetra_ada)
from xmetra.metrics import qa_f1_em, slot_f1
from xmetra.models import (CLS_ID, EncodedQA, EncodedUtterance, EncoderConfig, IntentSlotModel, QASpanModel,
                           crf_log_partition, crf_nll, viterbi_decode)

ROOT = Path(__file__).resolve().parents[1]
DIRECTIONAL = ROOT / "configs" / "directional.cfg"


# ---------------------------------------------------------------- 1

def _intent_ce(model, batch):
    def fn(p):
        logits, _, _ = model.forward(p, [ex.ids for ex in batch])
        return mean(nll_pick(log_softmax(logits), np.array([ex.intent for ex in batch])))
    return fn


def test_criterion_1_gradients(verdict):
    t0 = time.perf_counter()
    worst = {"intent_ce": 0.0, "crf_nll": 0.0, "qa_joint": 0.0}
    seeds = range(20)
    for seed in seeds:
        rng = np.random.default_rng(seed)
        cfg = EncoderConfig(vocab_size=15, embed_dim=4, hidden_dim=4, num_layers=2, max_seq_len=20)

        mtod = IntentSlotModel(cfg, 3, 5)
        params = make_state(mtod.init_params(rng))
        batch = [EncodedUtterance(np.concatenate([[CLS_ID], rng.integers(4, 15, size=n)]), int(rng.integers(3)),
                                  rng.integers(0, 5, size=n)) for n in (2, 4)]
        rep = finite_difference_check(_intent_ce(mtod, batch), params)
        worst["intent_ce"] = max(worst["intent_ce"], max(rep.max_rel_error.values()))

        L, K = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        crf = make_state({"em": rng.normal(size=(2, L, K)), "tr": rng.normal(size=(K, K)),
                          "s": rng.normal(size=K), "e": rng.normal(size=K)})
        tags = rng.integers(0, K, size=(2, L))
        lengths = np.array([L, max(1, L - 1)])
        rep = finite_difference_check(
            lambda p: tsum(crf_nll(p["em"], p["tr"], p["s"], p["e"], tags, lengths)), crf)
        worst["crf_nll"] = max(worst["crf_nll"], max(rep.max_rel_error.values()))

        qa = QASpanModel(cfg)
        qparams = make_state(qa.init_params(rng))
        qbatch = []
        for _ in range(2):
            c_len = int(rng.integers(2, 8))
            s = int(rng.integers(c_len))
            qbatch.append(EncodedQA(rng.integers(4, 15, size=3), rng.integers(4, 15, size=c_len), s,
                                    int(rng.integers(s, c_len))))
        rep = finite_difference_check(lambda p: qa.loss(p, qbatch), qparams)
        worst["qa_joint"] = max(worst["qa_joint"], max(rep.max_rel_error.values()))
    elapsed = time.perf_counter() - t0
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} max rel err {v:.2e}" for k, v in worst.items()) + f"; {len(seeds)} seeds; {elapsed:.1f}s"
    assert verdict(1, "gradient correctness", ok, detail)


# ---------------------------------------------------------------- 2

def test_criterion_2_crf_oracle(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    err_z = err_v = 0.0
    path_mismatch = 0
    for _ in range(200):
        L, K = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        em, tr, s, e = rng.normal(size=(L, K)) * 2, rng.normal(size=(K, K)), rng.normal(size=K), rng.normal(size=K)
        paths = list(itertools.product(range(K), repeat=L))
        scores = np.array([s[p[0]] + e[p[-1]] + sum(em[t, y] for t, y in enumerate(p))
                           + sum(tr[a, b] for a, b in zip(p, p[1:])) for p in paths])
        m = scores.max()
        logz = m + math.log(np.exp(scores - m).sum())
        err_z = max(err_z, abs(crf_log_partition(em, tr, s, e).item() - logz))
        best, best_score = viterbi_decode(em, tr, s, e)
        err_v = max(err_v, abs(best_score - m))
        path_mismatch += tuple(best) != paths[int(np.argmax(scores))]
    elapsed = time.perf_counter() - t0
    ok = err_z < 1e-8 and err_v < 1e-8 and path_mismatch == 0 and elapsed < 10
    assert verdict(2, "CRF oracle", ok, f"logZ abs err {err_z:.1e}, Viterbi score err {err_v:.1e}, "
                                        f"{path_mismatch} path mismatches, 200 instances, {elapsed:.2f}s")


# ---------------------------------------------------------------- 3

def _quadratic(params, examples, rng=None):
    d = params["theta"] - Tensor(examples[0])
    return tsum(d * d) * 0.5


def _linreg(params, examples, rng=None):
    x, y = examples[0]
    r = params["w"] * x + params["b"] - y
    return tsum(r * r * 0.5)


def test_criterion_3_maml_analytics(verdict):
    rng = np.random.default_rng(3)
    quad_err = 0.0
    for _ in range(50):
        n, alpha = int(rng.integers(1, 10)), float(rng.uniform(0.001, 0.5))
        theta0, c = rng.normal(size=5), rng.normal(size=5)
        out = inner_adapt(make_state({"theta": theta0}), [c], n, alpha, _quadratic)["theta"].values
        expected = (1 - alpha) ** n * (theta0 - c)
        quad_err = max(quad_err, float(np.max(np.abs((out - c) - expected) / np.maximum(np.abs(expected), 1e-300))))

    lin_err = 0.0
    for _ in range(50):
        w, b, xs, ys, xq, yq = rng.normal(size=6)
        n, alpha, beta = int(rng.integers(1, 4)), float(rng.uniform(0.01, 0.2)), float(rng.uniform(0.01, 0.2))
        cfg = MetaConfig(n=n, alpha=alpha, beta=beta, outer_optimizer="sgd", weight_decay=0.0, inner_dropout=False)
        theta = make_state({"w": np.array([w]), "b": np.array([b])})
        task = PseudoTask([(xs, ys)], [(xq, yq)], np.array([0]), np.array([0]))
        new, _, _ = outer_step(theta, [task], cfg, cfg.outer_state(), _linreg)
        # hand derivation: n SGD steps on the support residual, then one step on the query residual
        w1, b1 = w, b
        for _ in range(n):
            r = w1 * xs + b1 - ys
            w1, b1 = w1 - alpha * r * xs, b1 - alpha * r
        rq = w1 * xq + b1 - yq
        for got, want in ((new["w"].values[0], w - beta * rq * xq), (new["b"].values[0], b - beta * rq)):
            lin_err = max(lin_err, abs(got - want) / max(abs(want), 1e-300))
    ok = quad_err < 1e-12 and lin_err < 1e-10
    assert verdict(3, "MAML analytics", ok, f"quadratic max rel err {quad_err:.1e}; "
                                            f"linear-regression first-order update max rel err {lin_err:.1e}")


# ---------------------------------------------------------------- 4

def test_criterion_4_sampler_contracts(verdict):
    rng = np.random.default_rng(4)
    intents = [f"i{j}" for j in range(5)]
    src = [Utterance([f"s{n}"], it, ["O"], "en") for it in intents for n in range(12)]
    tgt = [Utterance([f"t{n}"], it, ["O"], "tgt") for it in intents for n in range(14)]
    mtod_bad = 0
    for t in range(1000):
        k, q = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        same = t % 2 == 0
        pool_s, pool_q = (tgt, tgt) if same else (src, tgt)
        task = sample_mtod_task(pool_s, pool_q, EpisodeSpec(k, q), rng)
        counts_s = {c: sum(ex.intent == c for ex in task.support) for c in intents}
        counts_q = {c: sum(ex.intent == c for ex in task.query) for c in intents}
        overlap = {id(x) for x in task.support} & {id(x) for x in task.query}
        mtod_bad += not (all(v == k for v in counts_s.values()) and all(v == q for v in counts_q.values())
                         and not overlap)

    pool = list(generate_synthetic_qa(SyntheticLanguageSpec(vocab_size=60), 60).examples)
    index = SimilarityIndex(pool)
    sim = index.matrix
    valid = [(k, q) for q in (1, 2, 3) for k in (q, 2 * q, 3 * q)]
    qa_bad = 0
    for t in range(1000):
        k, q = valid[t % len(valid)]
        task = sample_qa_task(pool, EpisodeSpec(k, q), index, rng)
        used = set(task.query_idx.tolist())
        expected = []
        for a in task.query_idx:
            cands = sorted((i for i in range(len(pool)) if i not in used), key=lambda i: (-sim[a, i], i))[:k // q]
            used.update(cands)
            expected += cands
        qa_bad += not (len(task.support) == k and len(task.query) == q and task.support_idx.tolist() == expected)
    rejected = 0
    bad_pairs = [(k, q) for k in range(1, 10) for q in range(1, 10) if k % q]
    for k, q in bad_pairs:
        try:
            sample_qa_task(pool, EpisodeSpec(k, q), index, rng)
        except SpecError:
            rejected += 1
    ok = mtod_bad == 0 and qa_bad == 0 and rejected == len(bad_pairs)
    assert verdict(4, "sampler contracts", ok, f"MTOD violations {mtod_bad}/1000; QA violations {qa_bad}/1000; "
                                               f"k%q rejections {rejected}/{len(bad_pairs)}")


# ---------------------------------------------------------------- 5

@pytest.mark.slow
def test_criterion_5_directional_claim(verdict, tmp_path):
    cfg = load_config(DIRECTIONAL, out=tmp_path / "directional")
    assert cfg.target_spec.lexical_overlap <= 0.3 and cfg.meta.k == cfg.meta.q == 6 and len(cfg.seeds) == 3
    t0 = time.perf_counter()
    result = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    acc = {r["kind"]: r["mean"] for r in result["summary"] if r["metric"] == "intent_acc"}
    ada, xm, ft, pre = (acc[k] for k in ("X_METRA_ADA", "X_METRA", "FT", "PRE"))
    gap = 100 * (ada - ft)
    ok = ada >= xm >= ft > pre and gap >= 2.0 and elapsed < 1800
    detail = (f"mean target intent acc ADA {100 * ada:.2f}, X_METRA {100 * xm:.2f}, FT {100 * ft:.2f}, "
              f"PRE {100 * pre:.2f}; ADA-FT {gap:+.2f} points (need >= +2); {elapsed / 60:.1f} min")
    assert verdict(5, "directional claim", ok, detail)


# ---------------------------------------------------------------- 6

def _trajectory_bytes(result, path):
    rows = [row for rep in result.reports for row in rep.rows()]
    for row in rows:
        row.pop("elapsed_s")
    write_csv(path, rows)
    blob = path.read_bytes()
    for k in sorted(result.params):
        blob += k.encode() + result.params[k].values.tobytes()
    return blob


def test_criterion_6_degenerate_equivalence(verdict, tmp_path):
    cfg = load_config(DIRECTIONAL, ["synthetic.source.train_size=300", "synthetic.target.dev_size=96",
                                    "synthetic.target.test_size=100"])
    exp = prepare(cfg)
    meta = dataclasses.replace(cfg.meta, total_tasks=200, eval_every=10)
    theta = init_params(exp.model, 0)
    loss_fn = model_loss_fn(exp.model)
    same = True
    for seed in (0, 1, 2):
        a = run_xmetra(theta, exp.source_train, exp.target_dev, meta, loss_fn, seed, exp.eval_fn)
        b = run_xmetra_ada(theta, exp.source_train, exp.target_dev, meta.with_(dev_split_fraction=1.0), loss_fn,
                           seed, exp.eval_fn)
        same &= _trajectory_bytes(a, tmp_path / f"a{seed}.csv") == _trajectory_bytes(b, tmp_path / f"b{seed}.csv")
        same &= len(b.reports) == 1
    assert verdict(6, "degenerate equivalence", same, "fraction=1.0 trajectory and parameters byte-identical "
                                                      "to X-METRA for seeds 0, 1, 2" if same else "bytes differ")


# ---------------------------------------------------------------- 7

def _oracle_spans(tags):
    out, i = set(), 0
    while i < len(tags):
        if tags[i] == "O":
            i += 1
            continue
        typ, j = tags[i][2:], i + 1
        while j < len(tags) and tags[j] == f"I-{typ}":
            j += 1
        out.add((i, j - 1, typ))
        i = j
    return out


def test_criterion_7_metric_oracles(verdict):
    rng = np.random.default_rng(7)
    tags = ["O", "B-a", "I-a", "B-b", "I-b"]
    worst = 0.0
    for _ in range(500):
        lens = rng.integers(1, 7, size=int(rng.integers(1, 4)))
        gold = [[tags[i] for i in rng.integers(0, 5, size=n)] for n in lens]
        pred = [[tags[i] for i in rng.integers(0, 5, size=n)] for n in lens]
        tp = sum(len(_oracle_spans(p) & _oracle_spans(g)) for p, g in zip(pred, gold))
        n_p = sum(len(_oracle_spans(p)) for p in pred)
        n_g = sum(len(_oracle_spans(g)) for g in gold)
        f = 0.0 if tp == 0 else 2 * (tp / n_p) * (tp / n_g) / (tp / n_p + tp / n_g)
        worst = max(worst, abs(slot_f1(pred, gold)[2] - f))
    fixtures = [("the cat", "cat", 2 / 3, 0), ("The cat.", "the cat", 1.0, 1), ("a dog", "the cat", 0.0, 0),
                ("cat cat", "cat", 2 / 3, 0)]
    fixture_ok = all(qa_f1_em(p, g) == (f, em) for p, g, f, em in fixtures)
    ok = worst < 1e-12 and fixture_ok
    assert verdict(7, "metric oracles", ok, f"slot F1 max abs diff {worst:.1e} over 500 cases; "
                                            f"QA fixtures {'exact' if fixture_ok else 'MISMATCH'}")


# ---------------------------------------------------------------- 8

SMALL = [
    "synthetic.source.vocab_size=80", "synthetic.target.vocab_size=80", "synthetic.source.num_intents=6",
    "synthetic.target.num_intents=6", "synthetic.source.num_domains=2", "synthetic.target.num_domains=2",
    "synthetic.source.train_size=120", "synthetic.target.dev_size=60", "synthetic.target.test_size=60",
    "model.embed_dim=12", "model.hidden_dim=12", "pre.max_steps=60", "ft.max_steps=40", "mono.max_steps=40",
    "meta.total_tasks=40", "meta.k=2", "meta.q=2", "experiment.eval_every=5", "experiment.num_seeds=2",
    "experiment.kinds=PRE,MONO,FT,FT_WITH_EN,X_METRA,X_METRA_ADA", "sweep.k=1,2", "sweep.fractions=0.5,1.0",
    "sweep.freeze=none;0+1;all",
]


def _cli(command, out):
    args = [sys.executable, "-m", "xmetra.cli.main", command, "--config", str(DIRECTIONAL), "--out", str(out),
            "--seed", "11"]
    for item in SMALL:
        args += ["--override", item]
    proc = subprocess.run(args, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return (out / "summary.csv").read_bytes()


def test_criterion_8_determinism(verdict, tmp_path):
    identical = {}
    for command in ("run", "kshot", "downsample", "freeze"):
        first = _cli(command, tmp_path / f"{command}1")
        second = _cli(command, tmp_path / f"{command}2")
        identical[command] = first == second and len(first) > 0
    ok = all(identical.values())
    detail = ", ".join(f"{c}: {'identical' if v else 'DIFFERENT'}" for c, v in identical.items())
    assert verdict(8, "determinism", ok, detail + " (fresh processes, master seed 11, two seeds)")


# ---------------------------------------------------------------- 9

@pytest.mark.slow
def test_criterion_9_freezing_audit(verdict):
    cfg = load_config(DIRECTIONAL, ["experiment.seeds=0"])
    exp = prepare(cfg)
    meta = cfg.meta.with_(total_tasks=500 * cfg.meta.task_batch_size, convergence=Convergence(enabled=False))
    blocks = all_blocks(cfg.encoder)
    frozen_res, _ = train_kind(exp, cfg, "X_METRA", 0, meta=meta, blocks=blocks)
    free_res, _ = train_kind(exp, cfg, "X_METRA", 0, meta=meta, blocks=frozenset())
    start = pre_run(exp, cfg, 0).params
    steps = len(frozen_res.reports[0])
    enc = [k for k in start if k.startswith("encoder.")]
    heads = [k for k in start if k not in enc]
    enc_same = all(start[k].values.tobytes() == frozen_res.params[k].values.tobytes() for k in enc)
    heads_moved = all(not np.array_equal(start[k].values, frozen_res.params[k].values) for k in heads)
    acc_frozen = frozen_res.reports[0].checkpoints[-1].metrics["intent_acc"]
    acc_free = free_res.reports[0].checkpoints[-1].metrics["intent_acc"]
    ok = steps == 500 and enc_same and heads_moved
    detail = (f"{steps} outer steps; encoder bit-unchanged={enc_same}; every head tensor changed={heads_moved}; "
              f"final intent acc frozen {100 * acc_frozen:.2f} vs unfrozen {100 * acc_free:.2f} "
              f"(gap {100 * (acc_free - acc_frozen):+.2f} points)")
    assert verdict(9, "freezing audit", ok, detail)
