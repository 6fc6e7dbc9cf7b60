import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmetra.autodiff import Tensor, make_state
from xmetra.autodiff import sum as tsum
from xmetra.data import LabelSpace, Split, SyntheticLanguageSpec, Vocab, featurize_mtod, generate_synthetic_pair
from xmetra.episodes import EpisodeSpec, PseudoTask, TaskDistribution
from xmetra.exceptions import ConfigError, DivergenceError
from xmetra.meta import (BaselineConfig, BaselineKind, Convergence, ConvergenceMonitor, Corpora, MetaConfig,
                         TrainConfig, freeze_layers, init_params, inner_adapt, model_loss_fn, outer_step, run_baseline,
                         run_stage, run_xmetra, run_xmetra_ada)
from xmetra.models import EncoderConfig, IntentSlotModel

NO_STOP = Convergence(enabled=False)


# ---- analytic oracles

def quadratic_loss(params, examples, rng=None):
    # 0.5 * sum_i ||theta - c_i||^2
    total = None
    for c in examples:
        d = params["theta"] - Tensor(c)
        term = tsum(d * d) * 0.5
        total = term if total is None else total + term
    return total


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.floats(1e-3, 0.9), st.integers(0, 10_000))
def test_inner_loop_on_quadratic_contracts_by_one_minus_alpha(n, alpha, seed):
    rng = np.random.default_rng(seed)
    theta0, c = rng.normal(size=3), rng.normal(size=3)
    theta = make_state({"theta": theta0})
    adapted = inner_adapt(theta, [c], n, alpha, quadratic_loss)
    np.testing.assert_allclose(adapted["theta"].values - c, (1 - alpha) ** n * (theta0 - c), rtol=1e-10, atol=1e-12)
    # the input state is untouched
    np.testing.assert_array_equal(theta["theta"].values, theta0)


def linreg_loss(params, examples, rng=None):
    total = None
    for x, y in examples:
        r = params["w"] * x + params["b"] - y
        term = r * r * 0.5
        total = term if total is None else total + term
    return tsum(total)


def sgd_meta(**kw):
    return MetaConfig(**{"n": 1, "alpha": 0.1, "beta": 0.05, "outer_optimizer": "sgd", "weight_decay": 0.0,
                         "inner_dropout": False, **kw})


def test_first_order_update_matches_hand_derivation():
    w, b, alpha, beta = 0.7, -0.2, 0.1, 0.05
    xs, ys, xq, yq = 1.5, 2.0, -0.5, 0.3
    theta = make_state({"w": np.array([w]), "b": np.array([b])})
    task = PseudoTask([(xs, ys)], [(xq, yq)], np.array([0]), np.array([0]))
    cfg = sgd_meta(alpha=alpha, beta=beta)
    new, _, loss = outer_step(theta, [task], cfg, cfg.outer_state(), linreg_loss)

    rs = w * xs + b - ys
    w1, b1 = w - alpha * rs * xs, b - alpha * rs
    rq = w1 * xq + b1 - yq
    assert loss == pytest.approx(0.5 * rq ** 2, rel=1e-14)
    assert new["w"].values[0] == pytest.approx(w - beta * rq * xq, rel=1e-14)
    assert new["b"].values[0] == pytest.approx(b - beta * rq, rel=1e-14)


def test_first_order_gradient_omits_exactly_the_hessian_term():
    w, b, alpha = 0.7, -0.2, 0.1
    xs, ys, xq, yq = 1.5, 2.0, -0.5, 0.3

    def composed(theta):
        rs = theta[0] * xs + theta[1] - ys
        t1 = theta - alpha * rs * np.array([xs, 1.0])
        return 0.5 * (t1[0] * xq + t1[1] - yq) ** 2

    h = 1e-6
    full = np.array([(composed(np.array([w, b]) + h * e) - composed(np.array([w, b]) - h * e)) / (2 * h)
                     for e in np.eye(2)])
    theta = make_state({"w": np.array([w]), "b": np.array([b])})
    task = PseudoTask([(xs, ys)], [(xq, yq)], np.array([0]), np.array([0]))
    cfg = sgd_meta(alpha=alpha, beta=1.0)
    new, _, _ = outer_step(theta, [task], cfg, cfg.outer_state(), linreg_loss)
    g_fo = np.array([w - new["w"].values[0], b - new["b"].values[0]])
    hess = np.array([[xs * xs, xs], [xs, 1.0]])
    np.testing.assert_allclose(full, (np.eye(2) - alpha * hess) @ g_fo, rtol=1e-7)
    assert np.abs(full - g_fo).max() > 1e-3


@pytest.mark.parametrize("b", [1, 2, 4, 7])
def test_outer_gradients_are_summed_over_tasks(b):
    rng = np.random.default_rng(b)
    theta = make_state({"theta": rng.normal(size=4)})
    task = PseudoTask([rng.normal(size=4)], [rng.normal(size=4)], np.array([0]), np.array([0]))
    cfg = sgd_meta(n=3, alpha=0.2, beta=0.01)
    one, _, loss1 = outer_step(theta, [task], cfg, cfg.outer_state(), quadratic_loss)
    many, _, loss_b = outer_step(theta, [task] * b, cfg, cfg.outer_state(), quadratic_loss)
    start = theta["theta"].values
    np.testing.assert_allclose(many["theta"].values - start, b * (one["theta"].values - start), rtol=1e-12)
    assert loss_b == pytest.approx(b * loss1, rel=1e-12)


def test_frozen_parameters_skip_inner_and_outer_updates():
    theta = make_state({"w": np.array([0.5]), "b": np.array([0.1])})
    task = PseudoTask([(1.0, 3.0)], [(2.0, -1.0)], np.array([0]), np.array([0]))
    cfg = MetaConfig(n=2, alpha=0.1, beta=0.1, inner_dropout=False)
    new, _, _ = outer_step(theta, [task], cfg, cfg.outer_state(), linreg_loss, frozen={"w"})
    assert new["w"].values[0] == 0.5 and new["b"].values[0] != 0.1


def test_convergence_monitor_fires_after_patience_windows():
    mon = ConvergenceMonitor(Convergence(window=50, patience=5, min_delta=1e-4))
    fired = [mon.update(1.0) for _ in range(300)]
    assert fired.index(True) == 299
    mon = ConvergenceMonitor(Convergence(window=50, patience=5, min_delta=1e-4))
    assert not any(mon.update(1.0 - 1e-3 * (i // 50)) for i in range(2000))
    assert not ConvergenceMonitor(NO_STOP).update(0.0)


def test_meta_config_validation():
    with pytest.raises(ConfigError):
        MetaConfig(n=0)
    with pytest.raises(ConfigError):
        MetaConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        MetaConfig(dev_split_fraction=0.0)
    with pytest.raises(ConfigError):
        MetaConfig(task_batch_size=0)
    assert MetaConfig.for_mtod().dev_split_fraction == 0.75
    qa = MetaConfig.for_qa()
    assert (qa.alpha, qa.beta, qa.dev_split_fraction) == (3e-5, 3e-5, 0.60)


# ---- on a tiny intent/slot model

@pytest.fixture(scope="module")
def setup():
    src = SyntheticLanguageSpec(vocab_size=60, num_intents=4, num_slot_types=2, num_domains=2, train_size=60,
                                dev_size=0, test_size=0)
    tgt = SyntheticLanguageSpec(language="tgt", base_seed=1, vocab_size=60, num_intents=4, num_slot_types=2,
                                num_domains=2, lexical_overlap=0.5, train_size=0, dev_size=48, test_size=0)
    s, t = generate_synthetic_pair(src, tgt)
    corpora = [s[Split.TRAIN], t[Split.DEV]]
    vocab, labels = Vocab.build(corpora), LabelSpace.from_corpora(corpora)
    source = featurize_mtod(s[Split.TRAIN].examples, vocab, labels)
    dev = featurize_mtod(t[Split.DEV].examples, vocab, labels)
    model = IntentSlotModel(EncoderConfig(len(vocab), 8, 8, 2), len(labels.intents), len(labels.slots))
    return model, source, dev


def meta_cfg(**kw):
    return MetaConfig(**{"n": 2, "alpha": 1e-2, "beta": 1e-2, "total_tasks": 8, "k": 2, "q": 2,
                         "shortfall": "replace", "convergence": NO_STOP, **kw})


def test_meta_training_is_deterministic(setup):
    model, source, dev = setup
    theta = init_params(model, 0)
    a = run_xmetra_ada(theta, source, dev, meta_cfg(dev_split_fraction=0.5), model_loss_fn(model), seed=3)
    b = run_xmetra_ada(theta, source, dev, meta_cfg(dev_split_fraction=0.5), model_loss_fn(model), seed=3)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].values, b.params[k].values)
    assert a.reports[0].query_losses == b.reports[0].query_losses
    c = run_xmetra_ada(theta, source, dev, meta_cfg(dev_split_fraction=0.5), model_loss_fn(model), seed=4)
    assert any(not np.array_equal(a.params[k].values, c.params[k].values) for k in a.params)


def test_full_fraction_reduces_ada_to_xmetra(setup):
    model, source, dev = setup
    theta = init_params(model, 0)
    a = run_xmetra(theta, source, dev, meta_cfg(), model_loss_fn(model), seed=1)
    b = run_xmetra_ada(theta, source, dev, meta_cfg(dev_split_fraction=1.0), model_loss_fn(model), seed=1)
    assert len(b.reports) == 1
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].values, b.params[k].values)


def test_stage_provenance(setup):
    model, source, dev = setup
    calls = []
    inner = model_loss_fn(model)

    def recording(params, examples, rng=None):
        calls.append({id(ex) for ex in examples})
        return inner(params, examples, rng)

    cfg = meta_cfg(dev_split_fraction=0.5, total_tasks=6, task_batch_size=3)
    res = run_xmetra_ada(init_params(model, 0), source, dev, cfg, recording, seed=0)
    src_ids = {id(ex) for ex in source}
    q_ids = {id(ex) for ex in res.query_slice}
    a_ids = {id(ex) for ex in res.adapt_slice}
    assert q_ids and a_ids and not q_ids & a_ids
    per_task = cfg.n + 1
    stage1, stage2 = calls[:6 * per_task], calls[6 * per_task:]
    assert len(stage2) == 6 * per_task
    for j in range(0, len(stage1), per_task):
        assert all(c <= src_ids for c in stage1[j:j + cfg.n])
        assert stage1[j + cfg.n] <= q_ids
    for j in range(0, len(stage2), per_task):
        support, query = stage2[j], stage2[j + cfg.n]
        assert support <= a_ids and query <= a_ids and not support & query


def test_zero_task_budget_returns_input(setup):
    model, source, dev = setup
    theta = init_params(model, 0)
    dist = TaskDistribution.meta_train(source, dev, EpisodeSpec(2, 2, shortfall="replace"), total_tasks=0)
    out, rep = run_stage(theta, dist, meta_cfg(), model_loss_fn(model), np.random.default_rng(0))
    assert rep.stop_reason == "empty" and len(rep) == 0
    for k in theta:
        np.testing.assert_array_equal(out[k].values, theta[k].values)


def test_frozen_encoder_blocks_stay_fixed(setup):
    model, source, dev = setup
    theta = init_params(model, 0)
    frozen = freeze_layers(model.encoder, model.encoder.block_ids)
    assert frozen == {"encoder.embed", "encoder.layer1.weight", "encoder.layer1.bias", "encoder.layer2.weight",
                      "encoder.layer2.bias"}
    res = run_xmetra(theta, source, dev, meta_cfg(), model_loss_fn(model), frozen=frozen)
    for k in theta:
        same = np.array_equal(res.params[k].values, theta[k].values)
        assert same == (k in frozen), k
    with pytest.raises(ConfigError):
        freeze_layers(model.encoder, [9])


def test_checkpoints_and_eval_cadence(setup):
    model, source, dev = setup
    theta = init_params(model, 0)
    seen = []

    def eval_fn(params):
        seen.append(1)
        return {"score": float(len(seen))}

    res = run_xmetra(theta, source, dev, meta_cfg(total_tasks=20, eval_every=2), model_loss_fn(model),
                     eval_fn=eval_fn)
    rep = res.reports[0]
    assert rep.steps == [1, 2, 3, 4, 5] and rep.tasks_seen == [4, 8, 12, 16, 20]
    assert [c.step for c in rep.checkpoints] == [2, 4, 5]
    assert rep.best_checkpoint("score").step == 5
    rows = list(rep.rows())
    assert rows[1]["score"] == 1.0 and "score" not in rows[0]


def test_divergence_is_reported_with_stage(setup):
    model, source, dev = setup

    def bad(params, examples, rng=None):
        return model_loss_fn(model)(params, examples, rng) * np.nan

    with pytest.raises(DivergenceError) as info:
        run_xmetra(init_params(model, 0), source, dev, meta_cfg(), bad)
    assert info.value.stage == "meta_train"


def test_ada_rejects_empty_adapt_slice(setup):
    model, source, dev = setup
    with pytest.raises(ConfigError, match="empty"):
        run_xmetra_ada(init_params(model, 0), source, dev[:1], meta_cfg(dev_split_fraction=0.9),
                       model_loss_fn(model))


@pytest.mark.parametrize("kind,languages", [
    ("PRE", {"src"}), ("MONO", {"tgt"}), ("FT", {"tgt"}), ("FT_WITH_EN", {"src", "tgt"}),
    ("X_METRA", {"src", "tgt"}),
])
def test_baselines_see_only_their_corpora(setup, kind, languages):
    model, source, dev = setup
    train = TrainConfig(batch_size=8, max_steps=5, convergence=NO_STOP)
    cfg = BaselineConfig(pre=train, mono=train, ft=train, meta=meta_cfg())
    pre = init_params(model, 0)
    before = {k: p.values.copy() for k, p in pre.items()}
    res = run_baseline(kind, Corpora(source, dev), model, cfg, seed=0, pre_params=pre)
    assert res.kind is BaselineKind(kind)
    assert set(res.provenance) == languages
    if kind == "FT":
        assert any(not np.array_equal(res.params[k].values, pre[k].values) for k in pre)
    # the starting point is never modified in place
    assert all(np.array_equal(before[k], pre[k].values) for k in pre)


def test_baseline_missing_corpus():
    with pytest.raises(ConfigError, match="target_dev"):
        run_baseline("MONO", Corpora([1], None), None, BaselineConfig())
