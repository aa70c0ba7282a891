"""GOAT layer, baseline message-passing layers and neighborhood orderings.

Every layer aggregates over the closed neighborhood (neighbors plus the node
itself). Batched execution pads each closed neighborhood to the largest one
in the graph; :class:`Neighborhoods` holds those padded index tables.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import InputError, SchemaError, ShapeError, ValidationError
from .tensor import Tensor

LEAKY_SLOPE = 0.2


class Neighborhoods:
    """Padded closed-neighborhood tables for one graph.

    Attributes:
        members: list of ascending id arrays, one per node.
        index: ``(N, P_max)`` node ids, padded with the row's own id.
        mask: ``(N, P_max)`` True on real entries.
        sizes: ``(N,)`` closed-neighborhood sizes.
    """

    def __init__(self, g):
        self.graph = g
        n = g.num_nodes
        self.members = []
        for u in range(n):
            nbrs = g.neighbors(u)
            self.members.append(np.insert(nbrs, np.searchsorted(nbrs, u), u))
        self.sizes = g.degrees + 1
        self.width = int(self.sizes.max()) if n else 1
        self.index = np.repeat(np.arange(n)[:, None], self.width, axis=1)
        self.mask = np.zeros((n, self.width), dtype=bool)
        for u, m in enumerate(self.members):
            self.index[u, :len(m)] = m
            self.mask[u, :len(m)] = True
        self.rows = np.repeat(np.arange(n)[:, None], self.width, axis=1)
        self._gcn = None

    @property
    def num_nodes(self):
        return self.graph.num_nodes

    def gcn_coefficients(self):
        """Entries of (D+I)^-1/2 (A+I) (D+I)^-1/2 laid out like ``index``."""
        if self._gcn is None:
            inv = 1.0 / np.sqrt(self.sizes.astype(np.float64))
            self._gcn = np.where(self.mask, inv[:, None] * inv[self.index], 0.0)
        return self._gcn


_CACHE: dict = {}


def neighborhoods(g):
    """Cached :class:`Neighborhoods` for ``g`` (graphs are immutable)."""
    key = id(g)
    hit = _CACHE.get(key)
    if hit is None or hit.graph is not g:
        if len(_CACHE) > 64:
            _CACHE.clear()
        hit = _CACHE[key] = Neighborhoods(g)
    return hit


def glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# --- parameter containers -------------------------------------------------

@dataclass
class LstmParams:
    """One direction pair. ``*_W`` is ``(d_in + d_h, 4 d_h)`` with gate blocks i, f, o, g."""

    fwd_W: Tensor
    fwd_b: Tensor
    bwd_W: Tensor
    bwd_b: Tensor

    @property
    def hidden(self):
        return self.fwd_b.shape[0] // 4

    @classmethod
    def init(cls, rng, d_in, d_h):
        def direction():
            W = np.concatenate([glorot(rng, d_in + d_h, d_h, (d_in + d_h, d_h))
                                for _ in range(4)], axis=1)
            b = np.zeros(4 * d_h)
            b[d_h:2 * d_h] = 1.0  # forget gate
            return Tensor(W, requires_grad=True), Tensor(b, requires_grad=True)

        return cls(*direction(), *direction())

    @classmethod
    def zeros(cls, d_in, d_h):
        z = lambda *s: Tensor(np.zeros(s), requires_grad=True)  # noqa: E731
        return cls(z(d_in + d_h, 4 * d_h), z(4 * d_h), z(d_in + d_h, 4 * d_h), z(4 * d_h))

    def named(self, prefix):
        return {f"{prefix}.fwd_W": self.fwd_W, f"{prefix}.fwd_b": self.fwd_b,
                f"{prefix}.bwd_W": self.bwd_W, f"{prefix}.bwd_b": self.bwd_b}


@dataclass
class GoatHead:
    W1: Tensor  # (d_att, d_in)
    w2: Tensor  # (2 d_att,)
    lstm: LstmParams

    def named(self, prefix):
        return {f"{prefix}.W1": self.W1, f"{prefix}.w2": self.w2, **self.lstm.named(f"{prefix}.lstm")}


# --- GOAT building blocks -------------------------------------------------

def _project(head, H):
    return T.matmul(H, T.transpose(head.W1))


def _score_parts(head, Z):
    d = head.W1.shape[0]
    if head.w2.shape != (2 * d,):
        raise ShapeError(f"w2 has shape {head.w2.shape}, expected ({2 * d},)")
    return T.matmul(Z, head.w2[:d]), T.matmul(Z, head.w2[d:])


def attention_scores(head, H, g, i):
    """LeakyReLU(w2 . [W1 h_i || W1 h_j]) for v_j in the closed neighborhood of i, ascending j."""
    H = T.as_tensor(H)
    if H.ndim != 2 or H.shape[0] != g.num_nodes or H.shape[1] != head.W1.shape[1]:
        raise ShapeError(f"H has shape {H.shape}; expected ({g.num_nodes}, {head.W1.shape[1]})")
    if not 0 <= i < g.num_nodes:
        raise InputError(f"node {i} out of range")
    members = neighborhoods(g).members[i]
    s_self, s_nb = _score_parts(head, _project(head, H))
    return T.leaky_relu(T.gather_rows(s_nb, members) + s_self[i], LEAKY_SLOPE)


def order_neighborhood(scores, members, H):
    """Sort ``members`` by descending score; break exact ties on raw hidden states.

    Tied nodes are compared coordinate by coordinate and the smaller value at
    the first difference goes first. Bit-identical hidden states fall back to
    ascending node id, so the result never depends on the input order.
    """
    scores = np.asarray(scores.data if isinstance(scores, Tensor) else scores, dtype=np.float64)
    members = np.asarray(members, dtype=np.int64)
    if scores.shape != members.shape:
        raise InputError(f"{len(scores)} scores for {len(members)} members")
    H = np.asarray(H.data if isinstance(H, Tensor) else H)
    keys = np.vstack([members[None, :], H[members].T[::-1], -scores[None, :]])
    return members[np.lexsort(keys)]


def build_sorted_sequence(scores, members, permutation, Z):
    """Rows ``softmax(scores)[pi(t)] * Z[pi(t)]`` in permutation order.

    ``scores`` is a tensor aligned with ``members``; ``Z`` holds W1-projected
    hidden states for every node. The softmax is taken over the sorted
    scores so its rounding does not depend on the input order.
    """
    members = np.asarray(members)
    pos = {int(m): k for k, m in enumerate(members)}
    where = [pos[int(v)] for v in permutation]
    alpha = T.softmax(T.gather_rows(scores, where))
    return T.mul(T.reshape(alpha, (-1, 1)), T.gather_rows(Z, np.asarray(permutation)))


def bilstm_forward(lstm, seq):
    """Concatenated final hidden states of both directions over a ``(P, d)`` sequence."""
    seq = T.as_tensor(seq)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise InputError("bilstm_forward needs a nonempty (P, d) sequence")
    x = T.reshape(seq, (seq.shape[0], 1, seq.shape[1]))
    mask = np.ones((seq.shape[0], 1), dtype=bool)
    fwd = T.lstm_sequence(x, mask, lstm.fwd_W, lstm.fwd_b)
    bwd = T.lstm_sequence(x, mask, lstm.bwd_W, lstm.bwd_b, reverse=True)
    return T.reshape(T.concat([fwd, bwd], axis=1), (-1,))


def _sorted_positions(scores, nb, H):
    """Column order that sorts each padded score row (real entries first)."""
    n, w = scores.shape
    neg = np.where(nb.mask, -scores, np.inf)
    flat = np.lexsort((nb.index.ravel(), neg.ravel(), nb.rows.ravel()))
    pos = flat.reshape(n, w) - nb.rows * w
    sneg = np.take_along_axis(neg, pos, axis=1)
    smask = np.take_along_axis(nb.mask, pos, axis=1)
    tied = np.any((sneg[:, 1:] == sneg[:, :-1]) & smask[:, 1:], axis=1)
    for u in np.flatnonzero(tied):
        size = nb.sizes[u]
        perm = order_neighborhood(scores[u, :size], nb.index[u, :size], H)
        lookup = {int(v): k for k, v in enumerate(nb.index[u, :size])}
        pos[u, :size] = [lookup[int(v)] for v in perm]
    return pos


def ordering_positions(ordering_rows, nb):
    """Translate per-node id permutations into padded column positions."""
    if len(ordering_rows) != nb.num_nodes:
        raise ValidationError(
            f"ordering covers {len(ordering_rows)} nodes, graph has {nb.num_nodes}")
    pos = np.repeat(np.arange(nb.width)[None, :], nb.num_nodes, axis=0)
    for u, perm in enumerate(ordering_rows):
        members = nb.members[u]
        perm = np.asarray(perm, dtype=np.int64)
        if perm.shape != members.shape or not np.array_equal(np.sort(perm), members):
            raise ValidationError(
                f"ordering for node {u} is not a permutation of its closed neighborhood")
        pos[u, :len(perm)] = np.searchsorted(members, perm)
    return pos


class GoatLayer:
    """K-head Graph Ordering Attention layer; output width ``K * 2 * lstm_hidden``."""

    kind = "goat"

    def __init__(self, in_dim, att_dim, lstm_hidden, heads=1, rng=None, zero=False):
        self.in_dim, self.att_dim, self.lstm_hidden = in_dim, att_dim, lstm_hidden
        self.heads = []
        for _ in range(heads):
            if zero:
                W1 = np.zeros((att_dim, in_dim))
                w2 = np.zeros(2 * att_dim)
                lstm = LstmParams.zeros(att_dim, lstm_hidden)
            else:
                W1 = glorot(rng, in_dim, att_dim, (att_dim, in_dim))
                w2 = glorot(rng, 2 * att_dim, 1, (2 * att_dim,))
                lstm = LstmParams.init(rng, att_dim, lstm_hidden)
            self.heads.append(GoatHead(Tensor(W1, requires_grad=True),
                                       Tensor(w2, requires_grad=True), lstm))

    @property
    def out_dim(self):
        return len(self.heads) * 2 * self.lstm_hidden

    def named_params(self, prefix):
        out = {}
        for k, head in enumerate(self.heads):
            out.update(head.named(f"{prefix}.head{k}"))
        return out

    def forward(self, g, H, batched=True, ordering=None, training=False, rng=None,
                attn_dropout=0.0):
        return goat_forward(self, g, H, batched=batched, ordering=ordering,
                            training=training, rng=rng, attn_dropout=attn_dropout)

    def extract_orderings(self, g, H):
        return extract_orderings(self, g, H)


def _head_batched(head, nb, H, positions, training, rng, attn_dropout):
    Z = _project(head, H)
    s_self, s_nb = _score_parts(head, Z)
    scores = T.leaky_relu(T.add(T.gather_rows(s_nb, nb.index), T.reshape(s_self, (-1, 1))),
                          LEAKY_SLOPE)
    pos = _sorted_positions(scores.data, nb, H.data) if positions is None else positions
    n, w = pos.shape
    order_ids = np.take_along_axis(nb.index, pos, axis=1)
    smask = np.take_along_axis(nb.mask, pos, axis=1)
    flat = (nb.rows * w + pos).ravel()
    sorted_scores = T.reshape(T.gather_rows(T.reshape(scores, (-1,)), flat), (n, w))
    alpha = T.softmax(sorted_scores, axis=1, mask=smask)
    alpha = T.dropout(alpha, attn_dropout, rng, training)
    seq = T.mul(T.reshape(alpha, (n, w, 1)), T.gather_rows(Z, order_ids))
    seq = T.transpose(seq, (1, 0, 2))
    steps = smask.T
    fwd = T.lstm_sequence(seq, steps, head.lstm.fwd_W, head.lstm.fwd_b)
    bwd = T.lstm_sequence(seq, steps, head.lstm.bwd_W, head.lstm.bwd_b, reverse=True)
    return T.concat([fwd, bwd], axis=1)


def goat_node_forward(head, H, members, center, Z=None, permutation=None):
    """Single-neighborhood evaluation for one head; ``members`` may come in any order."""
    H = T.as_tensor(H)
    Z = _project(head, H) if Z is None else Z
    s_self, s_nb = _score_parts(head, Z)
    members = np.asarray(members, dtype=np.int64)
    scores = T.leaky_relu(T.gather_rows(s_nb, members) + s_self[center], LEAKY_SLOPE)
    if permutation is None:
        permutation = order_neighborhood(scores.data, members, H.data)
    return bilstm_forward(head.lstm, build_sorted_sequence(scores, members, permutation, Z))


def goat_forward(layer, g, H, batched=True, ordering=None, training=False, rng=None,
                 attn_dropout=0.0):
    """Apply every head to every closed neighborhood and concatenate head outputs.

    Args:
        ordering: optional :class:`NeighborhoodOrdering`; when given, its
            permutations replace score sorting (scores still feed the softmax).
        batched: zero-padded batch execution if True, else one neighborhood at a time.
    """
    H = T.as_tensor(H)
    if H.ndim != 2 or H.shape != (g.num_nodes, layer.in_dim):
        raise ShapeError(f"H has shape {H.shape}; expected ({g.num_nodes}, {layer.in_dim})")
    nb = neighborhoods(g)
    if ordering is not None and len(ordering.orderings) != len(layer.heads):
        raise ValidationError(
            f"ordering has {len(ordering.orderings)} heads, layer has {len(layer.heads)}")
    outs = []
    for k, head in enumerate(layer.heads):
        if batched:
            positions = None if ordering is None else ordering.positions(k, nb)
            outs.append(_head_batched(head, nb, H, positions, training, rng, attn_dropout))
        else:
            if ordering is not None:
                ordering.positions(k, nb)  # validates
            Z = _project(head, H)
            rows = []
            for u in range(g.num_nodes):
                perm = None if ordering is None else ordering.orderings[k][u]
                rows.append(goat_node_forward(head, H, nb.members[u], u, Z=Z, permutation=perm))
            outs.append(T.stack(rows))
    return outs[0] if len(outs) == 1 else T.concat(outs, axis=1)


class NeighborhoodOrdering:
    """Per head, per node: the closed neighborhood as an aggregation-order id list."""

    def __init__(self, orderings):
        self.orderings = [[[int(v) for v in perm] for perm in head] for head in orderings]
        self._pos = {}

    @property
    def heads(self):
        return len(self.orderings)

    def positions(self, k, nb):
        key = (k, id(nb))
        if key not in self._pos:
            self._pos[key] = ordering_positions(self.orderings[k], nb)
        return self._pos[key]

    def validate(self, g):
        nb = neighborhoods(g)
        for k in range(self.heads):
            ordering_positions(self.orderings[k], nb)

    def to_json(self):
        return {"schema_version": 1, "heads": self.heads, "orderings": self.orderings}

    @classmethod
    def from_json(cls, doc):
        if "orderings" not in doc:
            raise SchemaError("orderings", "missing field")
        if doc.get("heads", len(doc["orderings"])) != len(doc["orderings"]):
            raise SchemaError("heads", "does not match the number of orderings")
        return cls(doc["orderings"])

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))

    def __eq__(self, other):
        return isinstance(other, NeighborhoodOrdering) and self.orderings == other.orderings


def extract_orderings(layer, g, H):
    """The permutations the layer would use on ``(g, H)`` right now."""
    H = T.as_tensor(H)
    nb = neighborhoods(g)
    result = []
    for head in layer.heads:
        Z = _project(head, H)
        s_self, s_nb = _score_parts(head, Z)
        scores = np.where(nb.mask, s_nb.data[nb.index] + s_self.data[:, None], 0.0)
        scores = np.where(scores > 0, scores, LEAKY_SLOPE * scores)
        pos = _sorted_positions(scores, nb, H.data)
        ids = np.take_along_axis(nb.index, pos, axis=1)
        result.append([ids[u, :nb.sizes[u]].tolist() for u in range(g.num_nodes)])
    return NeighborhoodOrdering(result)


def apply_fixed(layer, g, H, ordering, **kwargs):
    ordering.validate(g)
    return goat_forward(layer, g, H, ordering=ordering, **kwargs)


# --- baselines ------------------------------------------------------------

class Linear:
    kind = "mlp"

    def __init__(self, in_dim, out_dim, rng=None, bias=True):
        self.in_dim, self.out_dim = in_dim, out_dim
        self.W = Tensor(glorot(rng, in_dim, out_dim, (out_dim, in_dim)), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def named_params(self, prefix):
        out = {f"{prefix}.W": self.W}
        if self.b is not None:
            out[f"{prefix}.b"] = self.b
        return out

    def __call__(self, H):
        out = T.matmul(H, T.transpose(self.W))
        return out if self.b is None else T.add(out, self.b)

    def forward(self, g, H, **_):
        return self(H)


def mlp_forward(layer, H):
    return layer(T.as_tensor(H))


def mean_agg_forward(g, H):
    """Mean of hidden states over each closed neighborhood."""
    H = T.as_tensor(H)
    nb = neighborhoods(g)
    w = np.where(nb.mask, 1.0 / nb.sizes[:, None], 0.0)
    return T.sum_(T.mul(T.gather_rows(H, nb.index), w[:, :, None]), axis=1)


class MeanLayer:
    """Closed-neighborhood mean followed by a linear map."""

    kind = "mean"

    def __init__(self, in_dim, out_dim, rng=None):
        self.lin = Linear(in_dim, out_dim, rng)
        self.out_dim = out_dim

    def named_params(self, prefix):
        return self.lin.named_params(prefix)

    def forward(self, g, H, **_):
        return self.lin(mean_agg_forward(g, H))


class SumLayer:
    """GIN with epsilon = 0: neighborhood sum then a two-layer perceptron."""

    kind = "sum"

    def __init__(self, in_dim, out_dim, rng=None, hidden=None):
        hidden = hidden or out_dim
        self.lin1 = Linear(in_dim, hidden, rng)
        self.lin2 = Linear(hidden, out_dim, rng)
        self.out_dim = out_dim

    def named_params(self, prefix):
        return {**self.lin1.named_params(f"{prefix}.lin1"), **self.lin2.named_params(f"{prefix}.lin2")}

    def forward(self, g, H, **_):
        return sum_agg_forward(self, g, H)


def sum_agg_forward(layer, g, H):
    H = T.as_tensor(H)
    nb = neighborhoods(g)
    agg = T.sum_(T.mul(T.gather_rows(H, nb.index), nb.mask[:, :, None].astype(float)), axis=1)
    return layer.lin2(T.relu(layer.lin1(agg)))


class GcnLayer:
    kind = "gcn"

    def __init__(self, in_dim, out_dim, rng=None):
        self.lin = Linear(in_dim, out_dim, rng, bias=False)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)
        self.out_dim = out_dim

    def named_params(self, prefix):
        return {f"{prefix}.W": self.lin.W, f"{prefix}.b": self.b}

    def forward(self, g, H, **_):
        return gcn_forward(self, g, H)


def gcn_forward(layer, g, H):
    """Symmetric-normalized shift with self-loops applied to ``H W^T``, plus bias."""
    nb = neighborhoods(g)
    Z = layer.lin(T.as_tensor(H))
    coef = nb.gcn_coefficients()
    return T.add(T.sum_(T.mul(T.gather_rows(Z, nb.index), coef[:, :, None]), axis=1), layer.b)


class GatLayer:
    """Multi-head GAT over closed neighborhoods; heads concatenated or averaged."""

    kind = "gat"

    def __init__(self, in_dim, out_dim, heads=1, rng=None, concat=True, zero_attention=False):
        self.heads = []
        for _ in range(heads):
            W = glorot(rng, in_dim, out_dim, (out_dim, in_dim))
            a = np.zeros(2 * out_dim) if zero_attention else glorot(rng, 2 * out_dim, 1, (2 * out_dim,))
            self.heads.append((Tensor(W, requires_grad=True), Tensor(a, requires_grad=True)))
        self.concat = concat
        self.head_dim = out_dim
        self.out_dim = out_dim * heads if concat else out_dim
        self.b = Tensor(np.zeros(self.out_dim), requires_grad=True)

    def named_params(self, prefix):
        out = {}
        for k, (W, a) in enumerate(self.heads):
            out[f"{prefix}.head{k}.W1"] = W
            out[f"{prefix}.head{k}.w2"] = a
        out[f"{prefix}.b"] = self.b
        return out

    def forward(self, g, H, training=False, rng=None, attn_dropout=0.0, **_):
        return gat_forward(self, g, H, training=training, rng=rng, attn_dropout=attn_dropout)


def gat_forward(layer, g, H, training=False, rng=None, attn_dropout=0.0):
    H = T.as_tensor(H)
    nb = neighborhoods(g)
    outs = []
    d = layer.head_dim
    for W, a in layer.heads:
        Z = T.matmul(H, T.transpose(W))
        s_self, s_nb = T.matmul(Z, a[:d]), T.matmul(Z, a[d:])
        scores = T.leaky_relu(T.add(T.gather_rows(s_nb, nb.index), T.reshape(s_self, (-1, 1))),
                              LEAKY_SLOPE)
        alpha = T.softmax(scores, axis=1, mask=nb.mask)
        alpha = T.dropout(alpha, attn_dropout, rng, training)
        outs.append(T.sum_(T.mul(T.gather_rows(Z, nb.index),
                                 T.reshape(alpha, alpha.shape + (1,))), axis=1))
    if len(outs) == 1:
        out = outs[0]
    elif layer.concat:
        out = T.concat(outs, axis=1)
    else:
        out = T.scale(T.sum_(T.stack(outs), axis=0), 1.0 / len(outs))
    return T.add(out, layer.b)


LAYER_KINDS = ("goat", "gat", "gcn", "mean", "sum", "mlp")
