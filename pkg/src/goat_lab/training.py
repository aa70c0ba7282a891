"""Full-batch training with Adam and early stopping, plus multi-graph suites."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from . import tensor as T
from .errors import GoatLabError, InputError, NumericError, SchemaError, ValidationError
from .rng import derive_seed, Rng
from .tasks import generate

_MASK64 = (1 << 64) - 1


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    max_epochs: int = 1000
    patience: int = 100
    layer_stack: list = field(default_factory=lambda: ["goat", "gat"])
    hidden_dim: int = 32
    second_dim: int = 32
    lstm_hidden: int = 16
    heads: int = 1
    input_linear: int = 0
    readout: str = "auto"
    dropout_in: float = 0.0
    dropout_attn: float = 0.0
    seed: int = 0
    task_kind: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.layer_stack:
            raise SchemaError("layer_stack", "needs at least one layer")
        for kind in self.layer_stack:
            if kind not in L.LAYER_KINDS:
                raise SchemaError("layer_stack", f"unknown layer kind {kind!r}")
        if self.max_epochs < 1:
            raise SchemaError("max_epochs", "must be positive")
        if not 1 <= self.patience <= self.max_epochs:
            raise SchemaError("patience", "must lie in [1, max_epochs]")
        for name in ("dropout_in", "dropout_attn"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise SchemaError(name, "dropout rate must lie in [0, 1)")
        for name in ("hidden_dim", "second_dim", "lstm_hidden", "heads"):
            if getattr(self, name) < 1:
                raise SchemaError(name, "must be positive")
        if self.learning_rate <= 0:
            raise SchemaError("learning_rate", "must be positive")
        if self.readout not in ("auto", "linear", "none"):
            raise SchemaError("readout", "expected auto, linear or none")
        if self.task_kind not in (None, "classification", "regression"):
            raise SchemaError("task_kind", "expected classification or regression")

    @classmethod
    def from_dict(cls, doc, require=()):
        if not isinstance(doc, dict):
            raise SchemaError("<root>", "config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        for key in doc:
            if key not in names and key != "schema_version":
                raise SchemaError(key, "unknown config field")
        for key in require:
            if key not in doc:
                raise SchemaError(key, "missing config field")
        kwargs = {k: v for k, v in doc.items() if k in names}
        expected = {f.name: f.default for f in dataclasses.fields(cls)}
        for key, value in kwargs.items():
            default = expected[key]
            if isinstance(default, float) and not isinstance(value, (int, float)):
                raise SchemaError(key, "expected a number")
            if isinstance(default, int) and not isinstance(default, bool) and (
                    not isinstance(value, int) or isinstance(value, bool)):
                raise SchemaError(key, "expected an integer")
        return cls(**kwargs)

    def to_dict(self):
        return {"schema_version": 1, **dataclasses.asdict(self)}


REQUIRED_CONFIG_FIELDS = ("layer_stack",)


# --- model ----------------------------------------------------------------

class NodeModel:
    """A stack of graph layers with ELU in between and an optional linear readout."""

    def __init__(self, config, in_dim, out_dim, task_kind, seed=None):
        self.config = config
        self.task_kind = task_kind
        rng = np.random.default_rng(config.seed if seed is None else seed)
        self.init_seed = seed
        self.layers = []
        width = in_dim
        if config.input_linear:
            self.layers.append(L.Linear(width, config.input_linear, rng))
            width = config.input_linear
        readout = config.readout
        if readout == "auto":
            readout = "linear" if task_kind == "regression" else "none"
        if config.layer_stack[-1] == "goat":
            readout = "linear"
        stack = config.layer_stack
        for i, kind in enumerate(stack):
            last = i == len(stack) - 1
            target = config.hidden_dim if i == 0 else config.second_dim
            if last and readout == "none":
                target = out_dim
            heads = config.heads if i == 0 else 1
            if kind == "goat":
                layer = L.GoatLayer(width, target, config.lstm_hidden, heads=heads, rng=rng)
            elif kind == "gat":
                layer = L.GatLayer(width, target, heads=heads, rng=rng,
                                   concat=not (last and readout == "none"))
            elif kind == "gcn":
                layer = L.GcnLayer(width, target, rng)
            elif kind == "mean":
                layer = L.MeanLayer(width, target, rng)
            elif kind == "sum":
                layer = L.SumLayer(width, target, rng)
            else:
                layer = L.Linear(width, target, rng)
            self.layers.append(layer)
            width = layer.out_dim
        self.readout = L.Linear(width, out_dim, rng) if readout == "linear" else None
        self.dropout_rng = np.random.default_rng(
            derive_seed(config.seed if seed is None else seed, 0xD50))

    def named_params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.named_params(f"layer{i}"))
        if self.readout is not None:
            out.update(self.readout.named_params("readout"))
        return out

    def load_params(self, arrays):
        params = self.named_params()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ValidationError(
                f"checkpoint does not match model: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, t in params.items():
            if arrays[name].shape != t.shape:
                raise ValidationError(
                    f"checkpoint tensor {name} has shape {arrays[name].shape}, model expects {t.shape}")
            t.data = np.array(arrays[name], dtype=np.float64)

    def snapshot(self):
        return {k: t.data.copy() for k, t in self.named_params().items()}

    @property
    def goat_layer(self):
        for layer in self.layers:
            if isinstance(layer, L.GoatLayer):
                return layer
        return None

    def forward(self, graph, X, training=False, ordering=None, until_goat=False, embed=False):
        """Node outputs. ``embed`` stops before the output layer; ``until_goat``
        stops at the input of the GOAT layer."""
        cfg = self.config
        H = T.as_tensor(X)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, L.GoatLayer) and until_goat:
                return H
            if embed and self.readout is None and i == len(self.layers) - 1:
                return H
            if not (i == 0 and cfg.input_linear):
                H = T.dropout(H, cfg.dropout_in, self.dropout_rng, training)
            kwargs = dict(training=training, rng=self.dropout_rng, attn_dropout=cfg.dropout_attn)
            if isinstance(layer, L.GoatLayer):
                kwargs["ordering"] = ordering if layer is self.goat_layer else None
            H = layer.forward(graph, H, **kwargs)
            if i < len(self.layers) - 1 or self.readout is not None:
                H = T.elu(H)
        if self.readout is not None and not embed:
            H = self.readout(H)
        return H

    def extract_orderings(self, graph, X):
        layer = self.goat_layer
        if layer is None:
            raise ValidationError("model has no GOAT layer to take orderings from")
        H = self.forward(graph, X, until_goat=True)
        return L.extract_orderings(layer, graph, H)


def build_model(config, dataset, seed=None):
    out_dim = dataset.num_classes if dataset.task_kind == "classification" else 1
    if config.task_kind is not None and config.task_kind != dataset.task_kind:
        raise ValidationError(
            f"config is for {config.task_kind}, dataset is {dataset.task_kind}")
    return NodeModel(config, dataset.features.shape[1], out_dim, dataset.task_kind, seed=seed)


def loss_fn(model, out, dataset, mask):
    if dataset.task_kind == "classification":
        return T.cross_entropy(out, dataset.labels, mask)
    return T.mse(out, dataset.labels, mask)


def metric(model, out, dataset, mask):
    """Accuracy (fraction) for classification, MSE for regression."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InputError("evaluation mask selects no nodes")
    if dataset.task_kind == "classification":
        pred = np.argmax(out.data, axis=1)
        return float(np.mean(pred[mask] == dataset.labels[mask]))
    return float(np.mean((out.data[mask, 0] - dataset.labels[mask]) ** 2))


def evaluate(model, dataset, mask, ordering=None):
    """Inference-mode metric on ``mask`` (a boolean array or train/val/test)."""
    if isinstance(mask, str):
        mask = dataset.mask(mask)
    out = model.forward(dataset.graph, dataset.features, training=False, ordering=ordering)
    return metric(model, out, dataset, mask)


# --- optimizer ------------------------------------------------------------

def adam_init(params):
    return {"t": 0, "m": {k: np.zeros_like(p.data) for k, p in params.items()},
            "v": {k: np.zeros_like(p.data) for k, p in params.items()}}


def adam_step(params, grads, state, config):
    """One bias-corrected Adam update, in place on ``params`` (name -> Tensor)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
    state["t"] += 1
    t = state["t"]
    b1, b2 = config.adam_beta1, config.adam_beta2
    for name, p in params.items():
        g = grads[name]
        if config.weight_decay:
            g = g + config.weight_decay * p.data
        m = state["m"][name] = b1 * state["m"][name] + (1 - b1) * g
        v = state["v"][name] = b2 * state["v"][name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data = p.data - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)


# --- training -------------------------------------------------------------

@dataclass
class RunResult:
    best_val_loss: float
    best_val_metric: float
    test_metric: float
    epoch_of_best: int
    epochs_run: int
    history: list
    wall_time: float = 0.0
    metric_name: str = "mse"

    def to_json(self):
        # wall_time stays out so result files are reproducible byte for byte
        return {"schema_version": 1, "metric": self.metric_name,
                "best_val_loss": self.best_val_loss, "best_val_metric": self.best_val_metric,
                "test_metric": self.test_metric, "epoch_of_best": self.epoch_of_best,
                "epochs_run": self.epochs_run,
                "history_sha256": history_digest(self.history)}

    def history_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_metric"])
        for row in self.history:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
        return buf.getvalue()


def history_digest(history):
    return hashlib.sha256(json.dumps(history).encode()).hexdigest()


class TrainingDiverged(NumericError):
    def __init__(self, message, best_params):
        super().__init__(message)
        self.best_params = best_params


def train(config, dataset, fixed_ordering=None, snapshot_epochs=(), on_snapshot=None,
          seed=None, model=None):
    """Train on the train mask, early-stop on validation loss, test the best checkpoint.

    Returns ``(RunResult, model)``; the model holds the best-validation weights.
    ``on_snapshot(epoch, ordering)`` is called for each epoch in
    ``snapshot_epochs`` (epoch 0 is the initialization).
    """
    start = time.perf_counter()
    for name in ("train", "val", "test"):
        if not dataset.mask(name).any():
            raise ValidationError(f"{name} mask is empty")
    model = model or build_model(config, dataset, seed=seed)
    if fixed_ordering is not None:
        if model.goat_layer is None:
            raise ValidationError("a fixed ordering needs a GOAT layer")
        fixed_ordering.validate(dataset.graph)
    params = model.named_params()
    state = adam_init(params)
    snapshot_epochs = set(snapshot_epochs)
    g, X = dataset.graph, dataset.features
    train_mask, val_mask = dataset.train_mask, dataset.val_mask

    def snap(epoch):
        if epoch in snapshot_epochs and on_snapshot is not None:
            on_snapshot(epoch, model.extract_orderings(g, X))

    snap(0)
    history = []
    best = (math.inf, None, 0, None)  # val loss, val metric, epoch, params
    bad = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        # overflow surfaces as NumericError from the tape, not as numpy warnings
        with T.Tape(), np.errstate(over="ignore", invalid="ignore"):
            out = model.forward(g, X, training=True, ordering=fixed_ordering)
            loss = loss_fn(model, out, dataset, train_mask)
            T.backward(loss, params.values())
        try:
            adam_step(params, {k: p.grad for k, p in params.items()}, state, config)
        except NumericError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}", best[3]) from None
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                val_out = model.forward(g, X, training=False, ordering=fixed_ordering)
        except NumericError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}", best[3]) from None
        val_loss = loss_fn(model, val_out, dataset, val_mask).item()
        val_metric = metric(model, val_out, dataset, val_mask)
        history.append([epoch, loss.item(), val_loss, val_metric])
        snap(epoch)
        if val_loss < best[0]:
            best = (val_loss, val_metric, epoch, model.snapshot())
            bad = 0
        else:
            bad += 1
            if bad >= config.patience:
                break
    model.load_params(best[3])
    test = evaluate(model, dataset, dataset.test_mask, ordering=fixed_ordering)
    result = RunResult(best[0], best[1], test, best[2], epoch, history,
                       wall_time=time.perf_counter() - start,
                       metric_name="accuracy" if dataset.task_kind == "classification" else "mse")
    return result, model


def save_run(out_dir, config, result, model, fixed_ordering=None):
    """Write run_result.json, history.csv and checkpoint.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_result.json").write_text(json.dumps(result.to_json(), indent=1) + "\n")
    (out / "history.csv").write_text(result.history_csv())
    extra = {"config": config.to_dict(), "task_kind": model.task_kind}
    if model.init_seed is not None:
        extra["init_seed"] = model.init_seed
    if fixed_ordering is not None:
        extra["fixed_ordering"] = fixed_ordering.to_json()
    T.save_checkpoint(model.named_params(), out / "checkpoint.json", **extra)


def load_model(path, dataset):
    """Rebuild a model from a checkpoint file; returns ``(model, fixed_ordering)``."""
    arrays, doc = T.load_checkpoint(path)
    if "config" not in doc:
        raise SchemaError("config", "checkpoint has no config")
    config = TrainConfig.from_dict(doc["config"])
    model = build_model(config, dataset, seed=doc.get("init_seed"))
    model.load_params(arrays)
    ordering = None
    if "fixed_ordering" in doc:
        ordering = L.NeighborhoodOrdering.from_json(doc["fixed_ordering"])
        ordering.validate(dataset.graph)
    return model, ordering


# --- suites ---------------------------------------------------------------

@dataclass
class SuiteSpec:
    """Which datasets to generate and which models to train on each."""

    task: str
    n: int
    p: float
    num_graphs: int
    models: dict
    seed: int = 0
    fixed_from: dict = field(default_factory=dict)  # model -> (source model, epoch)

    @classmethod
    def from_dict(cls, doc):
        for key in ("task", "n", "p", "graphs", "models"):
            if key not in doc:
                raise SchemaError(key, "missing suite field")
        if doc["graphs"] < 1:
            raise SchemaError("graphs", "must be at least 1")
        models, fixed = {}, {}
        for name, cfg in doc["models"].items():
            cfg = dict(cfg)
            src = cfg.pop("fixed_ordering_from", None)
            ep = cfg.pop("fixed_ordering_epoch", 0)
            if src is not None:
                if src not in doc["models"]:
                    raise SchemaError(f"models.{name}.fixed_ordering_from",
                                      f"unknown model {src!r}")
                fixed[name] = (src, int(ep))
            try:
                models[name] = TrainConfig.from_dict(cfg)
            except SchemaError as exc:
                raise SchemaError(f"models.{name}.{exc.field}", str(exc).split(": ", 1)[-1]) from None
        return cls(doc["task"], int(doc["n"]), float(doc["p"]), int(doc["graphs"]), models,
                   int(doc.get("seed", 0)), fixed)


def _ordered_models(suite):
    names = list(suite.models)
    done, order = set(), []
    while len(order) < len(names):
        progressed = False
        for name in names:
            if name in done:
                continue
            dep = suite.fixed_from.get(name)
            if dep is None or dep[0] in done:
                order.append(name)
                done.add(name)
                progressed = True
        if not progressed:
            raise SchemaError("models", "circular fixed_ordering_from references")
    return order


def _run_graph(suite, index, out_dir):
    graph_seed = derive_seed(suite.seed, index)
    dataset = generate(suite.task, suite.n, suite.p, Rng(graph_seed))
    snapshots = {}  # (model, epoch) -> ordering
    wanted = {}
    for name, (src, ep) in suite.fixed_from.items():
        wanted.setdefault(src, set()).add(ep)
    cells = {}
    for name in _ordered_models(suite):
        cfg = suite.models[name]
        run_seed = derive_seed(graph_seed, cfg.seed & _MASK64)
        fixed = None
        if name in suite.fixed_from:
            fixed = snapshots.get(suite.fixed_from[name])
            if fixed is None:
                cells[name] = {"failed": True, "error": "source ordering unavailable"}
                continue

        def keep(epoch, ordering, _name=name):
            snapshots[(_name, epoch)] = ordering

        try:
            result, model = train(cfg, dataset, fixed_ordering=fixed,
                                  snapshot_epochs=wanted.get(name, ()), on_snapshot=keep,
                                  seed=run_seed)
        except (GoatLabError, FloatingPointError) as exc:
            cells[name] = {"failed": True, "error": str(exc)}
            continue
        if out_dir is not None:
            cell_dir = Path(out_dir) / f"graph_{index:03d}" / name
            save_run(cell_dir, cfg, result, model, fixed)
            for (src, ep), ordering in snapshots.items():
                if src == name:
                    ordering.save(cell_dir / f"orderings_epoch{ep:04d}.json")
        cells[name] = {"failed": False, "test_metric": result.test_metric,
                       "epoch_of_best": result.epoch_of_best, "wall_time": result.wall_time}
    return index, cells


def aggregate(values):
    values = [float(v) for v in values]
    if not values:
        return {"mean": None, "std": None, "n": 0, "std_defined": False}
    arr = np.asarray(values)
    defined = len(arr) > 1
    return {"mean": float(arr.mean()), "std": float(arr.std(ddof=1)) if defined else 0.0,
            "n": len(arr), "std_defined": defined}


def run_experiment_suite(suite, out_dir=None, jobs=1):
    """Train every model on every generated graph; mean and sample std per model."""
    if suite.num_graphs < 1:
        raise InputError("num_graphs must be at least 1")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_graph, [suite] * suite.num_graphs,
                                     range(suite.num_graphs), [out_dir] * suite.num_graphs))
    else:
        outcomes = [_run_graph(suite, i, out_dir) for i in range(suite.num_graphs)]
    outcomes.sort(key=lambda item: item[0])
    rows = {}
    for name in suite.models:
        cells = [cells[name] for _, cells in outcomes]
        failed = any(c["failed"] for c in cells)
        ok = [c["test_metric"] for c in cells if not c["failed"]]
        rows[name] = {**aggregate(ok), "failed": failed,
                      "runs": [None if c["failed"] else c["test_metric"] for c in cells]}
    metric_name = "accuracy" if suite.task == "top2" else "mse"
    results = {"schema_version": 1, "task": suite.task, "n": suite.n, "p": suite.p,
               "graphs": suite.num_graphs, "seed": suite.seed, "metric": metric_name,
               "models": rows}
    timings = {name: [cells[name].get("wall_time") for _, cells in outcomes]
               for name in suite.models}
    return results, timings


def format_table(results):
    """Aligned plain-text table: one row per model, mean +- std in the task column."""
    scale = 100.0 if results["metric"] == "accuracy" else 1.0
    digits = 2 if results["metric"] == "accuracy" else 4
    header = f"{results['task']} ({results['metric']}) N={results['n']}, p={results['p']}"
    lines = []
    width = max(len("Method"), *(len(k) for k in results["models"]))
    lines.append(f"{'Method':<{width}}  {header}")
    for name, row in results["models"].items():
        if row["failed"] and not row["n"]:
            cell = "FAILED"
        else:
            cell = f"{row['mean'] * scale:.{digits}f} +- {row['std'] * scale:.{digits}f}"
            if not row["std_defined"]:
                cell += " (single run)"
            if row["failed"]:
                cell += " [partial: failed cells]"
        lines.append(f"{name:<{width}}  {cell}")
    return "\n".join(lines) + "\n"
