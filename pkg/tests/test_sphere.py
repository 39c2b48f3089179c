import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sphereda.errors import EmptyInput, EmptyPrototypes, MissingPrototype, TooFewClasses, ZeroVector
from sphereda.sphere import (
    UNKNOWN,
    PrototypeSet,
    class_compactness,
    class_sparsity,
    classify,
    compute_prototypes,
    distance,
    normalize,
    self_paced_threshold,
    threshold_state,
)


def protoset(vectors):
    v = normalize(np.asarray(vectors, dtype=float))
    return PrototypeSet(tuple(range(len(v))), v, tuple([1] * len(v)))


def random_unit(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class TestNormalize:
    def test_scales(self):
        np.testing.assert_allclose(normalize([3.0, 4.0]), [0.6, 0.8])

    def test_unit_is_fixed(self):
        np.testing.assert_array_equal(normalize([0.0, 1.0]), [0.0, 1.0])

    def test_zero(self):
        with pytest.raises(ZeroVector):
            normalize([1e-15, 0.0])


class TestDistance:
    def test_values(self):
        a = np.array([1.0, 0.0])
        assert distance(a, a) == 0.0
        assert distance(a, -a) == 1.0
        assert distance(a, np.array([0.0, 1.0])) == 0.5

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 32))
    def test_properties(self, seed, d):
        a, b = random_unit(np.random.default_rng(seed), 2, d)
        dab = distance(a, b)
        assert 0.0 <= dab <= 1.0
        assert dab == distance(b, a)
        assert distance(a, a) == pytest.approx(0.0, abs=1e-15)
        assert distance(a, -a) == pytest.approx(1.0, abs=1e-15)


class TestPrototypes:
    def test_mean_of_two(self):
        p = compute_prototypes([([1.0, 0.0], 0), ([0.0, 1.0], 0)])
        np.testing.assert_allclose(p[0], [math.sqrt(2) / 2] * 2)
        assert p.counts == (2,)

    def test_single_member(self):
        np.testing.assert_array_equal(compute_prototypes([([1.0, 0.0], 0)])[0], [1.0, 0.0])

    def test_antipodal_collapse(self):
        with pytest.raises(ZeroVector):
            compute_prototypes([([1.0, 0.0], 0), ([-1.0, 0.0], 0)])

    def test_empty(self):
        with pytest.raises(EmptyInput):
            compute_prototypes([])

    def test_absent_classes_absent(self):
        p = compute_prototypes([([1.0, 0.0], 2), ([0.0, 1.0], 5)])
        assert p.classes == (2, 5)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        z = random_unit(rng, 40, 8)
        y = rng.integers(0, 4, 40)
        perm = rng.permutation(40)
        a = compute_prototypes(z, y)
        b = compute_prototypes(z[perm], y[perm])
        assert a.classes == b.classes
        np.testing.assert_allclose(a.vectors, b.vectors, atol=1e-14)


class TestSparsityCompactness:
    def test_antipodal(self):
        assert class_sparsity(protoset([[1, 0], [-1, 0]])) == 1.0

    def test_three(self):
        assert class_sparsity(protoset([[1, 0], [0, 1], [-1, 0]])) == pytest.approx(0.5)

    def test_too_few(self):
        with pytest.raises(TooFewClasses):
            class_sparsity(protoset([[1, 0]]))

    def test_compactness_zero(self):
        p = protoset([[1, 0], [0, 1]])
        assert class_compactness([([1, 0], 0), ([0, 1], 1)], p) == 0.0

    def test_compactness_single_class(self):
        # members at distance 0.1 and 0.3 from the prototype [1, 0]
        members = []
        for d in (0.1, 0.3):
            c = 1 - 2 * d
            members.append(([c, math.sqrt(1 - c * c)], 0))
        assert class_compactness(members, protoset([[1, 0]])) == pytest.approx(0.2, abs=1e-15)

    def test_missing_prototype(self):
        with pytest.raises(MissingPrototype):
            class_compactness([([1, 0], 1)], protoset([[1, 0]]))

    @pytest.mark.parametrize("d", [2, 8, 32])
    def test_match_oracle(self, d):
        rng = np.random.default_rng(d)
        for _ in range(40):
            c = int(rng.integers(2, 11))
            y = np.concatenate([np.arange(c), rng.integers(0, c, 30)])
            z = random_unit(rng, len(y), d)
            p = compute_prototypes(z, y)
            protos = {cl: list(p[cl]) for cl in p.classes}
            assert abs(class_sparsity(p) - oracles.sparsity(protos)) < 1e-12
            assert abs(class_compactness(z, p, y) - oracles.compactness(z.tolist(), y.tolist(), protos)) < 1e-12


class TestThreshold:
    def test_ratio_one(self):
        assert self_paced_threshold(0.2, 0.1) == pytest.approx(0.1, rel=1e-15)

    def test_ratio_e(self):
        assert self_paced_threshold(0.1 * math.e, 0.05) == pytest.approx(0.1, rel=1e-14)

    def test_negative_clamps(self):
        assert self_paced_threshold(0.1, 0.2) == 0.0

    def test_collapsed_phi(self):
        a = self_paced_threshold(0.5, 0.0)
        assert 0.0 <= a <= 1.0 and a > 0

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1e-6, 1.0))
    def test_fixed_point(self, phi):
        assert self_paced_threshold(2 * phi, phi) == pytest.approx(phi, rel=1e-12)

    def test_alpha_c(self):
        z = normalize(np.array([[1, 0.1], [1, -0.1], [-1, 0.1], [-1, -0.1]]))
        _, th = threshold_state(z, [0, 0, 1, 1], alpha_m=0.5)
        assert th.alpha_c == 0.5 * th.alpha


class TestClassify:
    def setup_method(self):
        self.p = protoset(np.eye(4))

    def test_on_prototype(self):
        pred = classify(np.eye(4)[3], self.p, 0.2)
        assert (pred.label, pred.min_distance, pred.nearest_class) == (3, 0.0, 3)

    def test_equidistant_rejected(self):
        z = np.array([0.0, 0.0, 0.0, 0.0, 1.0])
        p = protoset(np.eye(5)[:4])
        pred = classify(z, p, 0.3)
        assert pred.label == UNKNOWN and pred.min_distance == 0.5 and pred.nearest_class == 0

    def test_boundary_is_unknown(self):
        z = normalize([1.0, 0.3, 0.0, 0.0])
        alpha = distance(z, np.eye(4)[0])
        assert classify(z, self.p, alpha).label == UNKNOWN
        assert classify(z, self.p, np.nextafter(alpha, 1.0)).label == 0

    def test_tie_lowest_index(self):
        z = normalize([1.0, 1.0, 0.0, 0.0])
        assert classify(z, self.p, 1.0).nearest_class == 0

    def test_empty(self):
        with pytest.raises(EmptyPrototypes):
            classify([1.0, 0.0], PrototypeSet((), np.zeros((0, 2)), ()), 0.5)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
    def test_scale_invariant(self, seed, c):
        rng = np.random.default_rng(seed)
        p = protoset(rng.standard_normal((5, 8)))
        v = rng.standard_normal(8)
        assert classify(normalize(v), p, 0.3).nearest_class == classify(normalize(c * v), p, 0.3).nearest_class
