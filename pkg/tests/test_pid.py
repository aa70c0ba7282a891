import numpy as np
import pytest

from goat_lab.errors import SchemaError, ValidationError
from goat_lab.pid import (DiscreteJoint, aggregator_capture_gap, mutual_information,
                          pid_decompose, redundancy_imin)

XOR = DiscreteJoint.from_function(lambda a, b: a ^ b, 2, 2, 2)
COPY = DiscreteJoint.from_function(lambda a, b: a, 2, 2, 2)  # T = S1, S2 independent noise


def _both_copy():
    p = np.zeros((2, 2, 2))
    p[0, 0, 0] = p[1, 1, 1] = 0.5
    return DiscreteJoint(p)


def _independent(rng):
    pt = rng.dirichlet(np.ones(3))
    ps = rng.dirichlet(np.ones(4)).reshape(2, 2)
    return DiscreteJoint(pt[:, None, None] * ps[None])


def _close(atoms, expect):
    return all(abs(atoms[k] - v) < 1e-10 for k, v in expect.items())


class TestMutualInformation:
    def test_independent_is_zero(self, np_rng):
        assert abs(mutual_information(_independent(np_rng))) < 1e-12

    def test_copy_is_one_bit(self):
        assert mutual_information(COPY, (1,)) == pytest.approx(1.0, abs=1e-15)

    def test_xor(self):
        assert abs(mutual_information(XOR, (1,))) < 1e-15
        assert abs(mutual_information(XOR, (2,))) < 1e-15
        assert mutual_information(XOR, (1, 2)) == pytest.approx(1.0, abs=1e-15)


class TestDecomposition:
    def test_redundancy(self, np_rng):
        assert redundancy_imin(_both_copy()) == pytest.approx(1.0, abs=1e-15)
        assert abs(redundancy_imin(XOR)) < 1e-15
        assert abs(redundancy_imin(_independent(np_rng))) < 1e-12

    def test_closed_forms(self):
        assert _close(pid_decompose(XOR), {"U1": 0, "U2": 0, "R": 0, "S": 1})
        assert _close(pid_decompose(_both_copy()), {"U1": 0, "U2": 0, "R": 1, "S": 0})
        assert _close(pid_decompose(COPY), {"U1": 1, "U2": 0, "R": 0, "S": 0})

    def test_and_gate(self):
        # textbook values for AND with uniform inputs
        atoms = pid_decompose(DiscreteJoint.from_function(lambda a, b: a & b, 2, 2, 2))
        assert atoms["R"] == pytest.approx(0.311278124459, abs=1e-10)
        assert atoms["S"] == pytest.approx(0.5, abs=1e-10)
        assert atoms["U1"] == pytest.approx(0.0, abs=1e-12)

    def test_random_joints_consistent(self):
        rng = np.random.default_rng(77)
        for _ in range(500):
            shape = tuple(rng.integers(2, 4, size=3))
            joint = DiscreteJoint(rng.dirichlet(np.ones(np.prod(shape)) * 0.5).reshape(shape))
            atoms = pid_decompose(joint)
            assert min(atoms.values()) >= 0.0
            total = atoms["U1"] + atoms["U2"] + atoms["R"] + atoms["S"]
            assert abs(total - mutual_information(joint, (1, 2))) < 1e-10
            assert abs(mutual_information(joint, (1,)) - atoms["U1"] - atoms["R"]) < 1e-10
            assert abs(mutual_information(joint, (2,)) - atoms["U2"] - atoms["R"]) < 1e-10


class TestCaptureGap:
    def test_examples(self, np_rng):
        xor = aggregator_capture_gap(XOR)
        assert xor["gap"] == pytest.approx(1.0, abs=1e-12)
        red = aggregator_capture_gap(_both_copy())
        assert red["pairwise_sum"] == pytest.approx(2.0) and red["joint_mi"] == pytest.approx(1.0)
        assert red["gap"] == pytest.approx(-1.0)
        assert abs(aggregator_capture_gap(_independent(np_rng))["gap"]) < 1e-12


class TestValidation:
    def test_not_normalized(self):
        with pytest.raises(ValidationError):
            DiscreteJoint(np.full((2, 2, 2), 0.2))

    def test_negative(self):
        p = np.full((2, 2, 2), 0.125)
        p[0, 0, 0], p[0, 0, 1] = -0.125, 0.375
        with pytest.raises(ValidationError):
            DiscreteJoint(p)

    def test_json(self):
        j = DiscreteJoint.from_json({"arities": [2, 2, 2], "probs": XOR.probs.ravel().tolist()})
        assert np.array_equal(j.probs, XOR.probs)
        with pytest.raises(SchemaError) as info:
            DiscreteJoint.from_json({"arities": [2, 2, 2], "probs": [0.5, 0.5]})
        assert info.value.field == "probs"
        with pytest.raises(SchemaError):
            DiscreteJoint.from_json({"probs": [1.0]})
