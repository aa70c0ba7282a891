"""Synthetic node tasks and exact structural metrics."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .graph import Dataset, erdos_renyi, k_hop_distances, split_masks

TOP2_MEANS = (1.0, 1.0, 2.0)
TOP2_STDS = (1.0, 4.0, 1.0)
TWO_HOP_WEIGHT = 0.8


@dataclass
class MetricVector:
    values: np.ndarray
    metric_kind: str

    def scaled(self):
        return minmax_scale(self.values)


def minmax_scale(values):
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def betweenness_centrality(g):
    """Brandes' algorithm; each unordered pair {s, t} counted once, endpoints excluded."""
    n = g.num_nodes
    bc = np.zeros(n)
    off, ids = g.neighbor_offsets, g.neighbor_ids
    for s in range(n):
        stack = []
        preds = [[] for _ in range(n)]
        sigma = np.zeros(n)
        sigma[s] = 1.0
        dist = np.full(n, -1)
        dist[s] = 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            stack.append(v)
            for w in ids[off[v]:off[v + 1]]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(n)
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return MetricVector(bc / 2.0, "betweenness")


def brute_force_betweenness(g):
    """Enumerate every shortest path explicitly and apply the ratio sum directly."""
    n = g.num_nodes
    if n > 14:
        raise InputError("brute_force_betweenness is limited to 14 nodes")
    adj = [[int(v) for v in g.neighbors(u)] for u in range(n)]
    bc = np.zeros(n)
    for s in range(n):
        dist = {s: 0}
        queue = deque([s])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if w not in dist:
                    dist[w] = dist[v] + 1
                    queue.append(w)
        for t in range(s + 1, n):
            if t not in dist:
                continue
            paths = []

            def walk(path):
                v = path[-1]
                if v == t:
                    paths.append(path)
                    return
                for w in adj[v]:
                    if dist.get(w) == dist[v] + 1 and _reaches(w, t, dist, adj):
                        walk(path + [w])

            walk([s])
            counts = np.zeros(n)
            for p in paths:
                for u in p[1:-1]:
                    counts[u] += 1
            bc += counts / len(paths)
    return MetricVector(bc, "betweenness")


def _reaches(w, t, dist, adj):
    # w lies on a shortest s-t path iff dist(s,w) + dist(w,t) == dist(s,t)
    return _hops(w, t, adj) == dist[t] - dist[w]


def _hops(a, b, adj):
    seen = {a: 0}
    queue = deque([a])
    while queue:
        v = queue.popleft()
        if v == b:
            return seen[v]
        for w in adj[v]:
            if w not in seen:
                seen[w] = seen[v] + 1
                queue.append(w)
    return -1


def effective_size(g):
    """Burt's effective size n - 2q/n; isolated nodes get 0."""
    n_nodes = g.num_nodes
    out = np.zeros(n_nodes)
    for u in range(n_nodes):
        nbrs = g.neighbors(u)
        n = len(nbrs)
        if n == 0:
            continue
        # each tie among the neighbors is seen from both endpoints
        q = sum(np.intersect1d(g.neighbors(v), nbrs, assume_unique=True).size for v in nbrs) / 2
        out[u] = n - 2.0 * q / n
    return MetricVector(out, "effective_size")


METRICS = {"betweenness": betweenness_centrality, "effective_size": effective_size}


def gen_structural_dataset(g, metric_kind, rng):
    """X = I, targets = min-max scaled metric, 60/20/20 split drawn from ``rng``."""
    if metric_kind not in METRICS:
        raise InputError(f"unknown metric {metric_kind!r}")
    labels = METRICS[metric_kind](g).scaled()
    train, val, test = split_masks(g.num_nodes, rng)
    return Dataset(g, np.eye(g.num_nodes), labels, train, val, test,
                   task_kind="regression", meta={"task": metric_kind})


def phi(xa, xb):
    return math.sqrt(math.exp(xa) + math.exp(xb))


def sample_gmm(n, rng):
    """Three equally weighted components, means (1, 1, 2), standard deviations (1, 4, 1)."""
    out = np.empty(n)
    for i in range(n):
        k = rng.below(3)
        out[i] = TOP2_MEANS[k] + TOP2_STDS[k] * rng.normal()
    return out


def top2_targets(g, x):
    """Continuous Top-2 pooling targets phi(x_a, x_b) for every node."""
    y = np.empty(g.num_nodes)
    for u in range(g.num_nodes):
        cands = {x[v] if d == 1 else TWO_HOP_WEIGHT * x[v]
                 for v, d in k_hop_distances(g, u, 2).items()}
        if not cands:
            y[u] = phi(0.0, 0.0)
            continue
        top = sorted(cands, reverse=True)
        xa = top[0]
        xb = top[1] if len(top) > 1 else top[0]
        y[u] = phi(xa, xb)
    return y


def binarize_at_median(y):
    """Class 1 strictly above the median, class 0 otherwise (ties go to 0)."""
    return (y > np.median(y)).astype(np.int64)


def gen_top2_pooling(n, p, rng):
    if n < 3:
        raise InputError("top-2 pooling needs at least 3 nodes")
    g = erdos_renyi(n, p, rng)
    x = sample_gmm(n, rng)
    labels = binarize_at_median(top2_targets(g, x))
    train, val, test = split_masks(n, rng)
    return Dataset(g, x[:, None], labels, train, val, test, task_kind="classification",
                   num_classes=2, meta={"task": "top2"})


def generate(task, n, p, rng):
    """Dataset for a CLI task name: ``top2``, ``betweenness`` or ``effective-size``."""
    if task == "top2":
        return gen_top2_pooling(n, p, rng)
    kinds = {"betweenness": "betweenness", "effective-size": "effective_size",
             "effective_size": "effective_size"}
    if task not in kinds:
        raise InputError(f"unknown task {task!r}")
    return gen_structural_dataset(erdos_renyi(n, p, rng), kinds[task], rng)
