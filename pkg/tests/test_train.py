"""Initialization, gradients, Adam, and training-loop tests."""

import math

import numpy as np
import pytest

from reviewrec.config import TrainConfig
from reviewrec.data import split as make_split
from reviewrec.embed import ReviewEmbeddingTable
from reviewrec.graph import build_graph
from reviewrec.train import (
    DivergenceError,
    EpochRow,
    adam_step,
    init_adam,
    init_params,
    make_step_batch,
    read_trace,
    step_loss,
    train_loop,
    write_trace,
)

from conftest import (
    SYNTH_RGCL,
    all_train_split,
    fd_gradient_check,
    gradcheck_instance,
    make_toy_dataset,
    random_instance,
)


def test_init_same_seed_bit_identical():
    cfg = TrainConfig(dim=8, batch_size=4, seed=12)
    a = init_params(cfg, 5, 4, [1, 2, 3, 4, 5])
    b = init_params(cfg, 5, 4, [1, 2, 3, 4, 5])
    assert sorted(a) == sorted(b)
    for name in a:
        assert np.array_equal(a[name], b[name]), name


def test_init_square_matrix_bound():
    cfg = TrainConfig(dim=64, batch_size=4, seed=0)
    params = init_params(cfg, 4, 4, [1, 2, 3, 4, 5])
    bound = math.sqrt(6.0 / 128.0)
    assert bound == pytest.approx(0.21651, abs=1e-5)
    w = params["agg_l1"]
    assert np.all(np.abs(w) <= bound)
    assert np.max(np.abs(w)) > 0.9 * bound  # uniform actually fills the range


def test_init_variance_moment_check():
    cfg = TrainConfig(dim=64, batch_size=4, seed=1)
    params = init_params(cfg, 4, 4, [1, 2, 3, 4, 5])
    bound = math.sqrt(6.0 / 128.0)
    var = float(params["mlp_w2"].var())
    expected = bound * bound / 3.0
    assert abs(var - expected) / expected < 0.20


def test_init_biases_zero():
    cfg = TrainConfig(dim=4, batch_size=4, seed=2, use_bias=True)
    params = init_params(cfg, 3, 3, [1, 2, 3, 4, 5])
    for name in ("mlp_b1", "mlp_b2", "bias_global", "bias_user", "bias_item"):
        assert np.all(params[name] == 0.0), name


def test_gradients_vanish_at_perfect_predictions():
    ds = make_toy_dataset([(0, 0), (0, 1), (1, 0), (1, 1)], [3, 3, 3, 3], 2, 2)
    rng = np.random.Generator(np.random.PCG64(0))
    table = ReviewEmbeddingTable(rows=rng.normal(size=(4, 4)).astype(np.float32),
                                 provenance="test")
    graph = build_graph(ds, all_train_split(4), table)
    cfg = TrainConfig(dim=4, batch_size=4, alpha=0.0, beta=0.0, use_bias=True)
    params = init_params(cfg, 2, 2, graph.rating_values)
    params["predict_w"][:] = 0.0
    params["bias_global"][0] = 3.0  # predictions are exactly the ratings
    rng2 = np.random.Generator(np.random.PCG64(1))
    batch = make_step_batch(graph.edge_arrays(), np.arange(4), cfg, 2, 2, rng2)
    losses, grads = step_loss(graph, None, batch, params, cfg, need_grads=True)
    assert losses["mse"] == pytest.approx(0.0, abs=1e-24)
    for name, g in grads.items():
        assert np.all(g == 0.0), name


def test_gradients_zero_for_disconnected_component():
    # Component A: users 0/1 with items 0/1 at rating 3. Component B:
    # user 2 and item 2 joined by the only rating-5 edge. A batch containing
    # only component-A edges must leave every rating-5 tensor and the
    # component-B embeddings untouched.
    ds = make_toy_dataset([(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)],
                          [3, 3, 3, 3, 5], 3, 3)
    rng = np.random.Generator(np.random.PCG64(4))
    table = ReviewEmbeddingTable(rows=rng.normal(size=(5, 4)).astype(np.float32),
                                 provenance="test")
    graph = build_graph(ds, all_train_split(5), table)
    cfg = TrainConfig(dim=4, batch_size=4, alpha=0.0, beta=0.0)
    params = init_params(cfg, 3, 3, graph.rating_values)
    rng2 = np.random.Generator(np.random.PCG64(5))
    batch = make_step_batch(graph.edge_arrays(), np.arange(4), cfg, 3, 3, rng2)
    _, grads = step_loss(graph, None, batch, params, cfg, need_grads=True)
    for name, g in grads.items():
        if "_r5" in name:
            assert np.all(g == 0.0), name
    assert np.all(grads["user_emb"][2] == 0.0)
    assert np.all(grads["item_emb"][2] == 0.0)


def test_gradcheck_default_variant():
    graph, aug, batch, params, cfg = gradcheck_instance()
    worst, name = fd_gradient_check(graph, aug, batch, params, cfg)
    assert worst < 1e-4, f"worst relative error {worst:.2e} at {name}"


def test_adam_zero_gradient_keeps_params():
    cfg = TrainConfig(dim=4, batch_size=4)
    params = init_params(cfg, 3, 3, [1, 2, 3, 4, 5])
    before = {k: v.copy() for k, v in params.items()}
    state = init_adam(params)
    zero = {k: np.zeros_like(v) for k, v in params.items()}
    adam_step(params, zero, state, cfg)
    assert state.step == 1
    for name in params:
        assert np.array_equal(params[name], before[name]), name


def test_adam_first_step_closed_form():
    cfg = TrainConfig(dim=1, batch_size=1, learning_rate=0.01)
    params = {"x": np.array([0.5])}
    grads = {"x": np.array([1.0])}
    state = init_adam(params)
    adam_step(params, grads, state, cfg)
    # m-hat = 1, v-hat = 1: update is exactly -lr / (sqrt(1) + eps).
    expected = 0.5 - 0.01 / (1.0 + 1e-8)
    assert params["x"][0] == pytest.approx(expected, abs=1e-15)
    assert params["x"][0] == pytest.approx(0.5 - 0.01, abs=1e-6)


def test_adam_identical_runs_identical_trajectories():
    cfg = TrainConfig(dim=3, batch_size=1, learning_rate=0.05)
    rng = np.random.Generator(np.random.PCG64(6))
    grads_seq = [{"x": rng.normal(size=3)} for _ in range(5)]

    def run():
        params = {"x": np.ones(3)}
        state = init_adam(params)
        for g in grads_seq:
            adam_step(params, {"x": g["x"].copy()}, state, cfg)
        return params["x"]

    assert np.array_equal(run(), run())


def test_step_batch_negatives_valid():
    _, _, cfg, graph, _ = random_instance(30, 8, 6, 30, 4,
                                          alpha=0.5, beta=0.5)
    rng = np.random.Generator(np.random.PCG64(7))
    arrays = graph.edge_arrays()
    train_ids = set(arrays[3].tolist())
    for _ in range(20):
        batch = make_step_batch(arrays, rng.permutation(30)[:10], cfg, 8, 6, rng)
        assert np.all(batch.neg_edge_ids != batch.edge_ids)
        assert set(batch.neg_edge_ids.tolist()) <= train_ids
        assert np.all(batch.user_negatives != batch.user_anchors)
        assert np.all(batch.item_negatives != batch.item_anchors)
        assert np.all(batch.user_negatives < 8)
        assert np.all(batch.item_negatives < 6)


def small_train_setup(seed=0, n_users=12, n_items=9, n_edges=60):
    rng = np.random.Generator(np.random.PCG64(99))
    pool = [(u, i) for u in range(n_users) for i in range(n_items)]
    take = rng.choice(len(pool), size=n_edges, replace=False)
    pairs = [pool[int(k)] for k in take]
    ratings = [int(r) for r in rng.integers(1, 6, size=n_edges)]
    ds = make_toy_dataset(pairs, ratings, n_users, n_items)
    sp = make_split(ds, seed=3)
    table = ReviewEmbeddingTable(rows=rng.normal(size=(n_edges, 4)).astype(np.float32),
                                 provenance="test")
    cfg = TrainConfig(dim=4, batch_size=16, max_epochs=4, patience=4,
                      learning_rate=0.01, alpha=0.3, beta=0.2, seed=seed,
                      keep_prob_users=0.9, keep_prob_items=0.9)
    return ds, sp, table, cfg


def test_train_loop_fixed_seed_reproducible(tmp_path):
    ds, sp, table, cfg = small_train_setup()
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    train_loop(ds, sp, table, cfg, out_dir=out1)
    train_loop(ds, sp, table, cfg, out_dir=out2)
    assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()
    assert (out1 / "model.ckpt").read_bytes() == (out2 / "model.ckpt").read_bytes()


def test_train_loop_features_stay_frozen():
    ds, sp, table, cfg = small_train_setup()
    before = table.rows.copy()
    train_loop(ds, sp, table, cfg)
    assert np.array_equal(table.rows, before)


def test_train_loop_test_ratings_never_train(tmp_path):
    ds, sp, table, cfg = small_train_setup()
    out1, out2 = tmp_path / "a", tmp_path / "b"
    train_loop(ds, sp, table, cfg, out_dir=out1)
    mutated = make_toy_dataset(
        [(r.user_idx, r.item_idx) for r in ds.records],
        [r.rating for r in ds.records], ds.num_users, ds.num_items)
    for eid in sp.test_edge_ids.tolist():
        rec = mutated.records[eid]
        rec.rating = 1 if rec.rating != 1 else 5
    train_loop(mutated, sp, table, cfg, out_dir=out2)
    assert (out1 / "model.ckpt").read_bytes() == (out2 / "model.ckpt").read_bytes()
    assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()


def test_train_loop_divergence_aborts(tmp_path):
    # All ratings at 1 keep the first validation MSE small; one oversized
    # step per epoch then overshoots past ten times that initial value.
    rng = np.random.Generator(np.random.PCG64(8))
    pool = [(u, i) for u in range(12) for i in range(9)]
    take = rng.choice(len(pool), size=60, replace=False)
    ds = make_toy_dataset([pool[int(k)] for k in take], [1] * 60, 12, 9)
    sp = make_split(ds, seed=3)
    table = ReviewEmbeddingTable(
        rows=rng.normal(size=(60, 4)).astype(np.float32), provenance="test")
    cfg = TrainConfig(dim=4, batch_size=60, learning_rate=2.0, max_epochs=40,
                      patience=40, alpha=0.0, beta=0.0, seed=0)
    out = tmp_path / "diverged"
    with pytest.raises(DivergenceError, match="exceeds 10x"):
        train_loop(ds, sp, table, cfg, out_dir=out)
    trace_lines = (out / "trace.csv").read_text().splitlines()
    assert len(trace_lines) >= 2  # header plus the epochs before the abort


def test_trace_round_trip(tmp_path):
    rows = [EpochRow(1, 1.25, 1.4, 2.8, 1.3), EpochRow(2, 1.1, 1.39, 2.7, 1.2)]
    path = tmp_path / "trace.csv"
    write_trace(rows, path)
    text = path.read_text().splitlines()
    assert text[0] == "epoch,train_mse,train_ed,train_nd,valid_mse"
    back = read_trace(path)
    assert back == rows


def test_trace_rejects_bad_header(tmp_path):
    path = tmp_path / "trace.csv"
    path.write_text("epoch,mse\n1,2\n")
    with pytest.raises(ValueError):
        read_trace(path)


def test_synthetic_valid_beats_baseline_within_30_epochs(synth_bundle, synth_rgcl_runs):
    ds = synth_bundle["dataset"]
    sp = synth_bundle["split"]
    ratings = np.array([r.rating for r in ds.records], dtype=np.float64)
    train_mean = ratings[sp.train_edge_ids].mean()
    valid_baseline = float(((ratings[sp.valid_edge_ids] - train_mean) ** 2).mean())
    for run in synth_rgcl_runs["runs"]:
        trace = run["result"].trace
        hit = next((row.epoch for row in trace
                    if row.epoch <= 30 and row.valid_mse < valid_baseline), None)
        assert hit is not None, f"seed {run['seed']} never beat {valid_baseline:.3f}"


def test_synthetic_training_loss_decreases(synth_rgcl_runs):
    alpha, beta = SYNTH_RGCL["alpha"], SYNTH_RGCL["beta"]
    deltas = []
    for run in synth_rgcl_runs["runs"]:
        trace = {row.epoch: row for row in run["result"].trace}
        total = {
            e: trace[e].train_mse + alpha * trace[e].train_ed + beta * trace[e].train_nd
            for e in (1, 10)
        }
        deltas.append(total[10] - total[1])
    assert float(np.median(deltas)) < 0.0
