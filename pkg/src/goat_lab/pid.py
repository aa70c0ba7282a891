"""Two-source partial information decomposition of a discrete joint table.

Redundancy uses the Williams-Beer I_min measure, which keeps all four
atoms non-negative. All quantities are in bits.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import GoatLabError, SchemaError, ValidationError

NORM_TOL = 1e-12
CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteJoint:
    """``probs[t, s1, s2]`` = P(T=t, S1=s1, S2=s2)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 3 or 0 in p.shape:
            raise ValidationError(f"joint table must be 3-dimensional and nonempty, got {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValidationError("probabilities must be finite and non-negative")
        if abs(p.sum() - 1.0) > NORM_TOL:
            raise ValidationError(f"probabilities sum to {p.sum()!r}, not 1")

    @property
    def arities(self):
        return self.probs.shape

    @classmethod
    def from_json(cls, doc):
        if "arities" not in doc:
            raise SchemaError("arities", "missing field")
        if "probs" not in doc:
            raise SchemaError("probs", "missing field")
        arities = doc["arities"]
        if not (isinstance(arities, list) and len(arities) == 3
                and all(isinstance(a, int) and a > 0 for a in arities)):
            raise SchemaError("arities", "expected [t, s1, s2] positive integers")
        probs = np.asarray(doc["probs"], dtype=np.float64)
        if probs.size != int(np.prod(arities)):
            raise SchemaError("probs", f"expected {int(np.prod(arities))} entries, got {probs.size}")
        return cls(probs.reshape(arities))

    @classmethod
    def from_function(cls, fn, s1_arity, s2_arity, t_arity):
        """Uniform independent sources with a deterministic target ``t = fn(s1, s2)``."""
        p = np.zeros((t_arity, s1_arity, s2_arity))
        for a in range(s1_arity):
            for b in range(s2_arity):
                p[fn(a, b), a, b] += 1.0 / (s1_arity * s2_arity)
        return cls(p)


def _mi(pxy):
    """Mutual information of a 2-D joint, base 2, with 0 log 0 = 0."""
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    return float(np.sum(pxy[nz] * np.log2(pxy[nz] / (px @ py)[nz])))


def mutual_information(joint, sources=(1, 2)):
    """I(T; selected sources). ``sources`` is a subset of {1, 2}."""
    p = joint.probs
    sources = tuple(sorted(set(sources)))
    if sources == (1, 2):
        return _mi(p.reshape(p.shape[0], -1))
    if sources == (1,):
        return _mi(p.sum(axis=2))
    if sources == (2,):
        return _mi(p.sum(axis=1))
    if sources == ():
        return 0.0
    raise ValueError(f"sources must be a subset of (1, 2), got {sources}")


def specific_information(pts):
    """I(T=t; S) for every t, from a 2-D table ``pts[t, s]``."""
    pt = pts.sum(axis=1)
    ps = pts.sum(axis=0)
    out = np.zeros(len(pt))
    for t in range(len(pt)):
        if pt[t] == 0:
            continue
        for s in range(len(ps)):
            if pts[t, s] > 0:
                p_s_given_t = pts[t, s] / pt[t]
                p_t_given_s = pts[t, s] / ps[s]
                out[t] += p_s_given_t * np.log2(p_t_given_s / pt[t])
    return out


def redundancy_imin(joint):
    p = joint.probs
    pt = p.sum(axis=(1, 2))
    spec1 = specific_information(p.sum(axis=2))
    spec2 = specific_information(p.sum(axis=1))
    return float(np.sum(pt * np.minimum(spec1, spec2)))


def _clamp(name, value):
    if value < -CLAMP_TOL:
        raise GoatLabError(f"PID atom {name} = {value!r} is negative; this is a bug")
    return max(value, 0.0)


def pid_decompose(joint):
    """Unique (U1, U2), redundant (R) and synergistic (S) information."""
    r = redundancy_imin(joint)
    i1 = mutual_information(joint, (1,))
    i2 = mutual_information(joint, (2,))
    i12 = mutual_information(joint, (1, 2))
    u1 = i1 - r
    u2 = i2 - r
    s = i12 - u1 - u2 - r
    return {"U1": _clamp("U1", u1), "U2": _clamp("U2", u2),
            "R": _clamp("R", r), "S": _clamp("S", s)}


def aggregator_capture_gap(joint):
    """What summing per-neighbor information captures versus the joint information.

    A per-neighbor aggregator sees I(T;S1) + I(T;S2) = U1 + U2 + 2R, which
    double-counts redundancy and misses synergy entirely.
    """
    pairwise = mutual_information(joint, (1,)) + mutual_information(joint, (2,))
    joint_mi = mutual_information(joint, (1, 2))
    atoms = pid_decompose(joint)
    identity = atoms["U1"] + atoms["U2"] + 2 * atoms["R"]
    if abs(pairwise - identity) > 1e-10:
        raise GoatLabError(f"pairwise sum {pairwise} != U1 + U2 + 2R = {identity}")
    return {"pairwise_sum": pairwise, "joint_mi": joint_mi, "gap": joint_mi - pairwise}


def report(joint):
    """JSON-ready summary used by the CLI."""
    return {
        "schema_version": 1,
        "arities": list(joint.arities),
        "mutual_information": {
            "I(T;S1)": mutual_information(joint, (1,)),
            "I(T;S2)": mutual_information(joint, (2,)),
            "I(T;S1,S2)": mutual_information(joint, (1, 2)),
        },
        "decomposition": pid_decompose(joint),
        "aggregator": aggregator_capture_gap(joint),
    }


def load_joint(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("<root>", f"not valid JSON: {exc}") from None
    return DiscreteJoint.from_json(doc)
