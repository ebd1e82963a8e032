"""Tests for numerical kernels and the gradient checker."""
import numpy as np
import pytest

from gnn_encoder.ml.numkit import (
    affine,
    as_matrix,
    as_vector,
    finite_difference_check,
    flatten_tensors,
    grouped_reports,
    leaky_relu,
    leaky_relu_grad,
    log_sum_exp,
    masked_softmax,
    relative_error,
    sigmoid,
    tensor_fingerprint,
    unflatten_tensors,
)
from gnn_encoder.models.errors import DimensionError, NumericError


class TestKernels:
    """Activations, softmax and affine maps."""

    def test_softmax_sums_to_one(self, rng):
        """Softmax output is a distribution for 1000 inputs of length 1 to 64."""
        for _ in range(1000):
            w = masked_softmax(rng.normal(0, 5, size=rng.integers(1, 65)))
            assert w.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(w >= 0)

    def test_softmax_shift_invariance(self, rng):
        """Adding a constant to every score leaves the weights unchanged."""
        for _ in range(100):
            scores = rng.normal(0, 3, size=10)
            shift = rng.uniform(-10, 10)
            np.testing.assert_allclose(masked_softmax(scores + shift), masked_softmax(scores), atol=1e-12, rtol=0)

    def test_softmax_large_scores_stay_finite(self):
        """Huge scores do not overflow."""
        w = masked_softmax([1000.0, 1000.0, -1000.0])
        np.testing.assert_allclose(w, [0.5, 0.5, 0.0])

    def test_softmax_single_entry(self):
        """A lone self-loop gets all the weight."""
        np.testing.assert_array_equal(masked_softmax([3.7]), [1.0])

    def test_softmax_empty_raises(self):
        """Empty neighbourhoods are rejected."""
        with pytest.raises(ValueError):
            masked_softmax([])

    def test_sigmoid_extremes(self):
        """Sigmoid saturates without warnings."""
        out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0])
        assert sigmoid(0.0) == 0.5

    def test_sigmoid_symmetry(self, rng):
        """sigmoid(x) + sigmoid(-x) = 1 on both branches."""
        x = rng.uniform(-30, 30, size=1000)
        np.testing.assert_allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-12, rtol=0)
        for value in x[:50]:
            assert abs(sigmoid(float(value)) + sigmoid(float(-value)) - 1.0) <= 1e-12

    def test_leaky_relu_kink(self):
        """Slope below zero, identity above, derivative 1 at zero."""
        x = np.array([-2.0, 0.0, 3.0])
        np.testing.assert_allclose(leaky_relu(x, 0.2), [-0.4, 0.0, 3.0])
        np.testing.assert_allclose(leaky_relu_grad(x, 0.2), [0.2, 1.0, 1.0])
        assert leaky_relu_grad(0.0, 0.2) == 1.0

    def test_log_sum_exp(self):
        """Matches the direct formula where that is finite."""
        v = np.array([0.1, -2.0, 3.0])
        assert log_sum_exp(v) == pytest.approx(np.log(np.exp(v).sum()))

    def test_affine_shape_mismatch(self):
        """Incompatible shapes raise DimensionError."""
        with pytest.raises(DimensionError):
            affine(np.ones((3, 4)), np.ones(3), np.zeros(3))
        with pytest.raises(DimensionError):
            affine(np.ones((3, 4)), np.ones(4), np.zeros(4))

    def test_affine_value(self):
        """W x + b."""
        W = np.array([[1.0, 2.0], [0.0, -1.0]])
        np.testing.assert_allclose(affine(W, [1.0, 1.0], [0.5, 0.5]), [3.5, -0.5])

    def test_affine_linearity(self, rng):
        """The map minus its bias is linear in x."""
        for _ in range(20):
            W, b = rng.normal(size=(5, 7)), rng.normal(size=5)
            x, y = rng.normal(size=7), rng.normal(size=7)
            s, t = rng.normal(size=2)
            expected = s * (affine(W, x, b) - b) + t * (affine(W, y, b) - b) + b
            np.testing.assert_allclose(affine(W, s * x + t * y, b), expected, atol=1e-12, rtol=0)


class TestValidation:
    """Array conversion guards."""

    def test_non_finite_vector(self):
        """NaN input raises NumericError."""
        with pytest.raises(NumericError):
            as_vector([1.0, np.nan])

    def test_vector_length(self):
        """Wrong length raises DimensionError naming both shapes."""
        with pytest.raises(DimensionError) as exc:
            as_vector([1.0, 2.0], length=3)
        assert "(3,)" in str(exc.value)

    def test_empty_matrix(self):
        """Empty matrices are rejected."""
        with pytest.raises(DimensionError):
            as_matrix(np.zeros((0, 3)))


class TestGradientChecker:
    """Central-difference checker."""

    def test_quadratic_passes(self, rng):
        """Correct gradient of a quadratic passes."""
        theta = rng.normal(size=6)
        report = finite_difference_check(lambda x: float(np.sum(x ** 2)), theta, 2 * theta, 1e-5, 1e-6)
        assert report.passed
        assert report.checked == 6

    def test_wrong_gradient_fails(self, rng):
        """A corrupted coordinate is found."""
        theta = rng.normal(size=6)
        grad = 2 * theta
        grad[4] += 1.0
        report = finite_difference_check(lambda x: float(np.sum(x ** 2)), theta, grad, 1e-5, 1e-4)
        assert not report.passed
        assert report.worst_index == 4

    def test_skip_coordinates(self, rng):
        """Skipped coordinates are not compared."""
        theta = rng.normal(size=4)
        grad = 2 * theta
        grad[1] = 100.0
        report = finite_difference_check(lambda x: float(np.sum(x ** 2)), theta, grad, 1e-5, 1e-4, skip=[1])
        assert report.passed
        assert report.checked == 3

    def test_non_positive_step(self):
        """Step must be positive."""
        with pytest.raises(ValueError):
            finite_difference_check(lambda x: 0.0, np.zeros(2), np.zeros(2), 0.0, 1e-4)

    def test_relative_error_floor(self):
        """Near-zero pairs are measured against the floor."""
        err = relative_error(np.array([1e-12]), np.array([0.0]), floor=1e-8)
        assert err[0] == pytest.approx(1e-4)

    def test_grouped_reports(self, rng):
        """One report per name prefix."""
        tensors = {"a.x": rng.normal(size=3), "a.y": rng.normal(size=2), "b": rng.normal(size=(2, 2))}
        grads = {k: 2 * v for k, v in tensors.items()}

        def loss(theta):
            return float(np.sum(theta ** 2))

        reports = grouped_reports(loss, tensors, grads, 1e-5, 1e-6, depth=1)
        assert set(reports) == {"a", "b"}
        assert reports["a"].checked == 5
        assert all(r.passed for r in reports.values())


class TestTensors:
    """Flattening and fingerprints."""

    def test_unflatten_inverts_flatten(self, rng):
        """Shapes and values survive a flatten/unflatten cycle."""
        tensors = {"w": rng.normal(size=(2, 3)), "b": rng.normal(size=3)}
        back = unflatten_tensors(flatten_tensors(tensors), tensors)
        for name in tensors:
            np.testing.assert_array_equal(back[name], tensors[name])

    def test_unflatten_length_mismatch(self):
        """Extra entries are rejected."""
        with pytest.raises(DimensionError):
            unflatten_tensors(np.zeros(5), {"w": np.zeros(4)})

    def test_fingerprint_sensitivity(self, rng):
        """Any bit of change alters the fingerprint; copies match."""
        tensors = {"w": rng.normal(size=(3, 3))}
        base = tensor_fingerprint(tensors)
        assert tensor_fingerprint({"w": tensors["w"].copy()}) == base
        changed = tensors["w"].copy()
        changed[1, 1] = np.nextafter(changed[1, 1], np.inf)
        assert tensor_fingerprint({"w": changed}) != base
        assert tensor_fingerprint({"v": tensors["w"]}) != base
        assert len(base) == 32
