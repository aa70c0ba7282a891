import json
import math

import numpy as np
import pytest

from goat_lab import tensor as T
from goat_lab.errors import InputError, NumericError, SchemaError, ValidationError
from goat_lab.graph import Dataset, Graph, erdos_renyi
from goat_lab.layers import NeighborhoodOrdering, neighborhoods
from goat_lab.rng import Rng
from goat_lab.tasks import gen_top2_pooling, generate
from goat_lab.tensor import Tensor
from goat_lab.training import (SuiteSpec, TrainConfig, adam_init, adam_step, aggregate,
                               build_model, evaluate, format_table, load_model, loss_fn,
                               run_experiment_suite, save_run, train)

FAST_GOAT = {"layer_stack": ["goat", "gcn"], "hidden_dim": 4, "second_dim": 4, "lstm_hidden": 3,
             "max_epochs": 15, "patience": 15}


def separable_dataset(n=20, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    train = np.zeros(n, bool)
    train[: n - 4] = True
    val = np.zeros(n, bool)
    val[n - 4: n - 2] = True
    return Dataset(Graph.from_edges(n, []), X, y, train, val, ~(train | val),
                   task_kind="classification", num_classes=2)


def first_perfect_epoch(model, d, mask, epochs, lr):
    """Plain Adam on ``mask`` until accuracy there hits 1.0; returns that epoch."""
    params = model.named_params()
    state = adam_init(params)
    cfg = TrainConfig(layer_stack=["mlp"], learning_rate=lr)
    for epoch in range(1, epochs + 1):
        with T.Tape():
            loss = loss_fn(model, model.forward(d.graph, d.features, training=True), d, mask)
            T.backward(loss, params.values())
        adam_step(params, {k: p.grad for k, p in params.items()}, state, cfg)
        if evaluate(model, d, mask) == 1.0:
            return epoch
    return math.inf


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps) == (0.005, 0.9, 0.999, 1e-8)
        assert (c.max_epochs, c.patience, c.weight_decay) == (1000, 100, 0.0)

    def test_round_trip(self):
        c = TrainConfig(**FAST_GOAT)
        assert TrainConfig.from_dict(c.to_dict()) == c

    @pytest.mark.parametrize("doc, field", [
        ({"layer_stack": ["goat"], "bogus": 1}, "bogus"),
        ({"layer_stack": ["transformer"]}, "layer_stack"),
        ({"layer_stack": ["gcn"], "patience": 5, "max_epochs": 2}, "patience"),
        ({"layer_stack": ["gcn"], "dropout_in": 1.0}, "dropout_in"),
        ({"layer_stack": ["gcn"], "hidden_dim": "8"}, "hidden_dim"),
        ({"hidden_dim": 8}, "layer_stack"),
    ])
    def test_schema_errors_name_field(self, doc, field):
        with pytest.raises(SchemaError) as info:
            TrainConfig.from_dict(doc, require=("layer_stack",))
        assert info.value.field == field


class TestAdam:
    def _one(self, value, grad, **kw):
        p = {"x": Tensor(np.array([value]))}
        cfg = TrainConfig(layer_stack=["mlp"], **kw)
        state = adam_init(p)
        adam_step(p, {"x": np.array([grad])}, state, cfg)
        return p["x"].data[0], state

    def test_zero_gradient_no_move(self):
        assert self._one(1.25, 0.0)[0] == 1.25

    def test_first_step_moves_by_learning_rate(self):
        # t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        x, _ = self._one(0.0, 1.0)
        assert x == pytest.approx(-0.005 / (1.0 + 1e-8), abs=1e-18)

    def test_deterministic(self):
        assert self._one(0.3, -2.0)[0] == self._one(0.3, -2.0)[0]

    def test_nan_names_parameter(self):
        p = {"layer0.W": Tensor(np.zeros(2))}
        with pytest.raises(NumericError, match="layer0.W"):
            adam_step(p, {"layer0.W": np.array([np.nan, 0.0])}, adam_init(p),
                      TrainConfig(layer_stack=["mlp"]))


class TestTrain:
    def test_mlp_fits_separable_data(self):
        d = separable_dataset()
        model = build_model(TrainConfig(layer_stack=["mlp", "mlp"], hidden_dim=8), d, seed=3)
        assert first_perfect_epoch(model, d, d.train_mask, 200, lr=0.005) <= 200

    def test_overfit_tiny_graph(self):
        g = erdos_renyi(10, 0.4, Rng(1))
        mask = np.ones(10, bool)
        d = Dataset(g, np.eye(10), [0, 1] * 5, mask, np.zeros(10, bool), np.zeros(10, bool),
                    task_kind="classification", num_classes=2)
        model = build_model(TrainConfig(layer_stack=["goat", "gcn"], hidden_dim=8, second_dim=8,
                                        lstm_hidden=4), d, seed=0)
        assert first_perfect_epoch(model, d, mask, 300, lr=0.05) <= 300
        assert evaluate(model, d, mask) == 1.0

    def test_early_stopping_patience_one(self):
        # train targets pull the output up, validation targets sit far below
        n = 6
        d = Dataset(Graph.from_edges(n, []), np.zeros((n, 1)), [5.0] * 3 + [-5.0] * 3,
                    [True] * 3 + [False] * 3, [False] * 3 + [True, True, False],
                    [False] * 5 + [True], task_kind="regression")
        cfg = TrainConfig(layer_stack=["mlp"], max_epochs=50, patience=1)
        result, _ = train(cfg, d, seed=0)
        vals = [h[2] for h in result.history]
        assert vals[1] > vals[0]
        assert result.epochs_run == 2 and result.epoch_of_best == 1

    def test_gcn_top2_smoke(self):
        d = gen_top2_pooling(200, 0.05, Rng(0))
        cfg = TrainConfig(layer_stack=["gcn", "gcn"], hidden_dim=16, second_dim=8,
                          max_epochs=30, patience=30)
        result, _ = train(cfg, d, seed=1)
        assert 0.0 <= result.test_metric <= 1.0 and math.isfinite(result.best_val_loss)

    def test_deterministic_and_checkpoint_consistent(self, tmp_path):
        d = generate("betweenness", 30, 0.15, Rng(2))
        cfg = TrainConfig(**FAST_GOAT, dropout_in=0.1, dropout_attn=0.1)
        r1, m1 = train(cfg, d, seed=5)
        r2, _ = train(cfg, d, seed=5)
        assert r1.to_json() == r2.to_json() and r1.history == r2.history
        save_run(tmp_path, cfg, r1, m1)
        model, ordering = load_model(tmp_path / "checkpoint.json", d)
        assert ordering is None
        assert evaluate(model, d, "test") == r1.test_metric
        assert evaluate(model, d, "test") == evaluate(model, d, "test")
        rows = (tmp_path / "history.csv").read_text().splitlines()
        assert rows[0] == "epoch,train_loss,val_loss,val_metric"
        assert [int(r.split(",")[0]) for r in rows[1:]] == list(range(1, r1.epochs_run + 1))

    def test_fixed_ordering_run(self, tmp_path):
        d = generate("betweenness", 30, 0.15, Rng(3))
        cfg = TrainConfig(**FAST_GOAT)
        snaps = {}
        r, m = train(cfg, d, seed=1, snapshot_epochs=[0, 5],
                     on_snapshot=lambda e, o: snaps.__setitem__(e, o))
        assert set(snaps) == {0, 5}
        rf, mf = train(cfg, d, seed=1, fixed_ordering=snaps[0])
        assert math.isfinite(rf.test_metric)
        save_run(tmp_path, cfg, rf, mf, fixed_ordering=snaps[0])
        model, ordering = load_model(tmp_path / "checkpoint.json", d)
        assert ordering == snaps[0]
        assert evaluate(model, d, "test", ordering=ordering) == rf.test_metric

    def test_fixed_ordering_needs_goat(self):
        d = generate("betweenness", 20, 0.2, Rng(3))
        ordering = NeighborhoodOrdering([[list(m) for m in neighborhoods(d.graph).members]])
        with pytest.raises(ValidationError):
            train(TrainConfig(layer_stack=["gcn"], max_epochs=2, patience=1), d, fixed_ordering=ordering)

    def test_empty_mask_rejected(self):
        d = separable_dataset()
        with pytest.raises(InputError):
            evaluate(build_model(TrainConfig(layer_stack=["mlp"]), d, seed=0), d,
                     np.zeros(20, bool))

    def test_task_kind_mismatch(self):
        with pytest.raises(ValidationError):
            build_model(TrainConfig(layer_stack=["mlp"], task_kind="regression"),
                        separable_dataset())


class TestSuite:
    def _spec(self, graphs=2):
        return SuiteSpec.from_dict({
            "task": "effective-size", "n": 25, "p": 0.2, "graphs": graphs, "seed": 4,
            "models": {"GOAT": FAST_GOAT,
                       "GCN": {"layer_stack": ["gcn", "gcn"], "max_epochs": 10, "patience": 10},
                       "GOAT-fixed-0": {**FAST_GOAT, "fixed_ordering_from": "GOAT",
                                        "fixed_ordering_epoch": 0}}})

    def test_aggregate_matches_run_files(self, tmp_path):
        results, timings = run_experiment_suite(self._spec(), out_dir=tmp_path)
        assert list(results["models"]) == ["GOAT", "GCN", "GOAT-fixed-0"]
        for name, row in results["models"].items():
            runs = [json.loads((tmp_path / f"graph_{i:03d}" / name / "run_result.json")
                               .read_text())["test_metric"] for i in range(2)]
            assert row["runs"] == runs
            assert row["mean"] == pytest.approx(np.mean(runs), abs=1e-15)
            assert row["std"] == pytest.approx(np.std(runs, ddof=1), abs=1e-15)
        assert (tmp_path / "graph_000" / "GOAT" / "orderings_epoch0000.json").exists()
        table = format_table(results)
        assert len(table.splitlines()) == 4 and "+-" in table

    def test_single_run_flag(self):
        assert aggregate([0.25]) == {"mean": 0.25, "std": 0.0, "n": 1, "std_defined": False}
        results, _ = run_experiment_suite(self._spec(graphs=1))
        assert "(single run)" in format_table(results)

    def test_deterministic(self):
        a, _ = run_experiment_suite(self._spec())
        b, _ = run_experiment_suite(self._spec())
        assert json.dumps(a) == json.dumps(b)

    def test_bad_reference(self):
        with pytest.raises(SchemaError, match="fixed_ordering_from"):
            SuiteSpec.from_dict({"task": "top2", "n": 10, "p": 0.1, "graphs": 1,
                                 "models": {"A": {"layer_stack": ["goat"],
                                                  "fixed_ordering_from": "B"}}})
