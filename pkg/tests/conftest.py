import numpy as np
import pytest

from goat_lab.graph import Dataset, Graph, erdos_renyi
from goat_lab.rng import Rng


def path_graph(n):
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n):
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def star_graph(leaves):
    return Graph.from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def complete_graph(n):
    return Graph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def barbell_graph(k, bridge=1):
    """Two K_k cliques joined by a path through ``bridge`` extra nodes."""
    edges = [(i, j) for i in range(k) for j in range(i + 1, k)]
    edges += [(k + bridge + i, k + bridge + j) for i in range(k) for j in range(i + 1, k)]
    chain = [k - 1] + [k + b for b in range(bridge)] + [k + bridge]
    edges += list(zip(chain[:-1], chain[1:]))
    return Graph.from_edges(2 * k + bridge, edges)


def named_graphs():
    return {
        "path5": path_graph(5), "path8": path_graph(8), "cycle6": cycle_graph(6),
        "cycle7": cycle_graph(7), "star3": star_graph(3), "star6": star_graph(6),
        "k4": complete_graph(4), "k6": complete_graph(6), "barbell": barbell_graph(4, 2),
    }


def seeded_graphs(count, seed=0, max_n=12):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        n = int(rng.integers(2, max_n + 1))
        p = float(rng.uniform(0.1, 0.7))
        out.append(erdos_renyi(n, p, Rng(seed * 1000 + i)))
    return out


def toy_dataset(task="regression"):
    g = path_graph(3)
    labels = [0, 1, 0] if task == "classification" else [0.5, 1.0, 0.25]
    return Dataset(g, np.array([[1.0, 0.1], [0.2, 0.3], [1.0 / 3.0, 2.0]]), labels,
                   [True, False, False], [False, True, False], [False, False, True],
                   task_kind=task, num_classes=2 if task == "classification" else None)


@pytest.fixture
def np_rng():
    return np.random.default_rng(12345)


def reference_lstm(xs, W, b, d_h):
    """Scalar-loop LSTM over a list of input vectors; gate blocks i, f, o, g."""
    import math

    sig = lambda z: 1.0 / (1.0 + math.exp(-z))  # noqa: E731
    W, b = [list(r) for r in W], list(b)
    h = [0.0] * d_h
    c = [0.0] * d_h
    for x in xs:
        v = list(x) + h
        z = [sum(v[r] * W[r][col] for r in range(len(v))) + b[col] for col in range(4 * d_h)]
        i = [sig(z[k]) for k in range(d_h)]
        f = [sig(z[d_h + k]) for k in range(d_h)]
        o = [sig(z[2 * d_h + k]) for k in range(d_h)]
        g = [math.tanh(z[3 * d_h + k]) for k in range(d_h)]
        c = [f[k] * c[k] + i[k] * g[k] for k in range(d_h)]
        h = [o[k] * math.tanh(c[k]) for k in range(d_h)]
    return h
