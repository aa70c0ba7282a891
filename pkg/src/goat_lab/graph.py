"""Undirected simple graphs in compressed adjacency form, plus node datasets."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, SchemaError, ValidationError
from .rng import Rng

SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable CSR adjacency. ``neighbor_ids[offsets[u]:offsets[u+1]]`` is N(u)."""

    num_nodes: int
    neighbor_offsets: np.ndarray
    neighbor_ids: np.ndarray

    def __post_init__(self):
        self.neighbor_offsets.setflags(write=False)
        self.neighbor_ids.setflags(write=False)
        self.check()

    @classmethod
    def from_edges(cls, num_nodes, edges):
        """Build from an iterable of ``(u, v)`` pairs; order and direction do not matter."""
        if num_nodes < 0:
            raise InputError("num_nodes must be non-negative")
        adj = [set() for _ in range(num_nodes)]
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise ValidationError(f"edge ({u}, {v}) out of range for {num_nodes} nodes")
            if u == v:
                raise ValidationError(f"self-loop on node {u}")
            adj[u].add(v)
            adj[v].add(u)
        offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        for u in range(num_nodes):
            offsets[u + 1] = offsets[u] + len(adj[u])
        ids = np.fromiter((v for u in range(num_nodes) for v in sorted(adj[u])),
                          dtype=np.int64, count=int(offsets[-1]))
        return cls(num_nodes, offsets, ids)

    def check(self):
        """Assert the structural invariants; raises ValidationError."""
        n, off, ids = self.num_nodes, self.neighbor_offsets, self.neighbor_ids
        if off.shape != (n + 1,) or off[0] != 0 or off[-1] != len(ids):
            raise ValidationError("neighbor_offsets inconsistent with neighbor_ids")
        if np.any(np.diff(off) < 0):
            raise ValidationError("neighbor_offsets must be nondecreasing")
        if len(ids) % 2:
            raise ValidationError("odd adjacency length; graph is not symmetric")
        if len(ids) and (ids.min() < 0 or ids.max() >= n):
            raise ValidationError("neighbor id out of range")
        src = np.repeat(np.arange(n), np.diff(off))
        if np.any(src == ids):
            raise ValidationError("self-loop stored")
        same_row = src[1:] == src[:-1]
        if np.any(ids[1:][same_row] <= ids[:-1][same_row]):
            raise ValidationError("adjacency lists must be strictly ascending")
        fwd = np.sort(src * n + ids)
        bwd = np.sort(ids * n + src)
        if not np.array_equal(fwd, bwd):
            raise ValidationError("adjacency is not symmetric")

    @property
    def num_edges(self):
        return len(self.neighbor_ids) // 2

    @property
    def degrees(self):
        return np.diff(self.neighbor_offsets)

    def neighbors(self, u):
        return self.neighbor_ids[self.neighbor_offsets[u]:self.neighbor_offsets[u + 1]]

    def edges(self):
        """Canonical edge list, each edge once as ``(u, v)`` with ``u < v``."""
        src = np.repeat(np.arange(self.num_nodes), self.degrees)
        keep = src < self.neighbor_ids
        return np.stack([src[keep], self.neighbor_ids[keep]], axis=1)

    def relabel(self, perm):
        """Graph with node ``u`` renamed to ``perm[u]``."""
        perm = np.asarray(perm)
        return Graph.from_edges(self.num_nodes, ((perm[u], perm[v]) for u, v in self.edges()))

    def __eq__(self, other):
        return (isinstance(other, Graph) and self.num_nodes == other.num_nodes
                and np.array_equal(self.neighbor_offsets, other.neighbor_offsets)
                and np.array_equal(self.neighbor_ids, other.neighbor_ids))

    __hash__ = None


def erdos_renyi(n, p, rng):
    """G(n, p) with one uniform draw per pair, pairs visited row-major over i < j."""
    if n < 1:
        raise InputError("n must be at least 1")
    if not 0.0 <= p <= 1.0:
        raise InputError(f"p must lie in [0, 1], got {p}")
    uniform = rng.uniform
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if uniform() < p]
    return Graph.from_edges(n, edges)


def neighborhood(g, u, include_self=False):
    if not 0 <= u < g.num_nodes:
        raise InputError(f"node {u} out of range [0, {g.num_nodes})")
    nbrs = [int(v) for v in g.neighbors(u)]
    if include_self:
        nbrs.append(u)
        nbrs.sort()
    return nbrs


def k_hop_distances(g, u, k):
    """BFS hop distances from ``u`` up to ``k``, excluding ``u`` itself."""
    if k < 1:
        raise InputError("k must be at least 1")
    if not 0 <= u < g.num_nodes:
        raise InputError(f"node {u} out of range [0, {g.num_nodes})")
    dist = {u: 0}
    queue = deque([u])
    while queue:
        x = queue.popleft()
        if dist[x] == k:
            continue
        for y in g.neighbors(x):
            y = int(y)
            if y not in dist:
                dist[y] = dist[x] + 1
                queue.append(y)
    del dist[u]
    return dist


def max_degree(g):
    return int(g.degrees.max()) if g.num_nodes else 0


@dataclass(eq=False)
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    task_kind: str = "regression"
    num_classes: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.task_kind == "classification":
            self.labels = np.asarray(self.labels, dtype=np.int64)
        else:
            self.labels = np.asarray(self.labels, dtype=np.float64)
        for name in ("train_mask", "val_mask", "test_mask"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=bool))
        self.validate()

    @property
    def num_nodes(self):
        return self.graph.num_nodes

    def mask(self, name):
        if name not in ("train", "val", "test"):
            raise InputError(f"unknown mask {name!r}; expected train, val or test")
        return getattr(self, f"{name}_mask")

    def validate(self):
        n = self.graph.num_nodes
        if self.task_kind not in ("classification", "regression"):
            raise SchemaError("task", f"unknown task kind {self.task_kind!r}")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise SchemaError("features", f"expected {n} rows, got shape {self.features.shape}")
        if self.labels.shape != (n,):
            raise SchemaError("labels", f"expected {n} labels, got shape {self.labels.shape}")
        for name in ("train_mask", "val_mask", "test_mask"):
            if getattr(self, name).shape != (n,):
                raise SchemaError(name, f"expected length {n}")
        if np.any(self.train_mask & self.val_mask) or np.any(self.train_mask & self.test_mask) \
                or np.any(self.val_mask & self.test_mask):
            raise ValidationError("train/val/test masks overlap")
        labeled = self.train_mask | self.val_mask | self.test_mask
        if not np.all(np.isfinite(self.features[labeled])):
            raise ValidationError("non-finite features on a labeled node")
        if self.task_kind == "classification":
            if self.num_classes is None or self.num_classes < 1:
                raise SchemaError("num_classes", "required for classification")
            if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise ValidationError(
                    f"labels: values must lie in [0, {self.num_classes})")

    def to_json(self):
        doc = {
            "schema_version": SCHEMA_VERSION,
            "num_nodes": self.graph.num_nodes,
            "edges": self.graph.edges().tolist(),
            "features": self.features.tolist(),
            "labels": self.labels.tolist(),
            "task": self.task_kind,
            "num_classes": self.num_classes,
            "train_mask": self.train_mask.tolist(),
            "val_mask": self.val_mask.tolist(),
            "test_mask": self.test_mask.tolist(),
        }
        if self.meta:
            doc["meta"] = self.meta
        return doc

    @classmethod
    def from_json(cls, doc):
        if not isinstance(doc, dict):
            raise SchemaError("<root>", "expected a JSON object")
        for key in ("num_nodes", "edges", "features", "labels", "task",
                    "train_mask", "val_mask", "test_mask"):
            if key not in doc:
                raise SchemaError(key, "missing field")
        n = doc["num_nodes"]
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            raise SchemaError("num_nodes", "must be a positive integer")
        try:
            edges = np.asarray(doc["edges"], dtype=np.int64).reshape(-1, 2)
        except (TypeError, ValueError) as exc:
            raise SchemaError("edges", f"expected [[u, v], ...] ({exc})") from None
        if len(edges) and np.any(edges[:, 0] >= edges[:, 1]):
            raise SchemaError("edges", "each edge must be written as [u, v] with u < v")
        try:
            graph = Graph.from_edges(n, edges)
        except ValidationError as exc:
            raise SchemaError("edges", str(exc)) from None
        try:
            features = np.asarray(doc["features"], dtype=np.float64)
        except (TypeError, ValueError):
            raise SchemaError("features", "expected a rectangular numeric matrix") from None
        masks = {}
        for name in ("train_mask", "val_mask", "test_mask"):
            raw = doc[name]
            if not isinstance(raw, list) or any(x not in (0, 1) for x in raw):
                raise SchemaError(name, "expected a list of booleans")
            masks[name] = np.asarray(raw, dtype=bool)
        task = doc["task"]
        try:
            labels = np.asarray(doc["labels"],
                                dtype=np.int64 if task == "classification" else np.float64)
        except (TypeError, ValueError):
            raise SchemaError("labels", "expected a numeric vector") from None
        if task == "classification" and not all(
                isinstance(x, int) and not isinstance(x, bool) for x in doc["labels"]):
            raise SchemaError("labels", "classification labels must be integers")
        return cls(graph, features, labels, task_kind=task,
                   num_classes=doc.get("num_classes"), meta=doc.get("meta", {}), **masks)

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.graph == other.graph
                and self.task_kind == other.task_kind and self.num_classes == other.num_classes
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and all(np.array_equal(self.mask(m), other.mask(m))
                        for m in ("train", "val", "test")))

    __hash__ = None


def save_dataset(dataset, path):
    # json writes floats with repr(), the shortest string that round-trips exactly
    text = json.dumps(dataset.to_json(), separators=(",", ":"))
    Path(path).write_text(text + "\n")


def load_dataset(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"not valid JSON: {exc}") from None
    return Dataset.from_json(doc)


def split_masks(n, rng, fractions=(0.6, 0.2, 0.2)):
    """Seeded shuffle of node ids cut into train/val/test masks."""
    order = rng.shuffle(list(range(n)))
    n_train = int(math.floor(fractions[0] * n + 0.5))
    n_val = int(math.floor(fractions[1] * n + 0.5))
    masks = [np.zeros(n, dtype=bool) for _ in range(3)]
    masks[0][order[:n_train]] = True
    masks[1][order[n_train:n_train + n_val]] = True
    masks[2][order[n_train + n_val:]] = True
    return masks

