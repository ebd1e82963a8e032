"""Finite-difference checks of the hand-derived backward passes."""
import inspect

import numpy as np
import pytest

from gnn_encoder.ml.gradcheck import (
    COMPOSITE_FLOOR,
    check_dual_gradients,
    check_joint_gradients,
    run_gradient_suite,
    tiny_instance,
)
from gnn_encoder.ml.numkit import RELATIVE_FLOOR, finite_difference_check, grouped_reports
from gnn_encoder.models.training import FusionMode


class TestGradientSuite:
    """Analytic gradients against central differences."""

    def test_full_suite(self):
        """Every dual-encoder and GNN tensor agrees within 1e-4."""
        reports = run_gradient_suite(seed=7, tol=1e-4)
        assert any(name.startswith("dual/") for name in reports)
        assert any(name.startswith("joint/gnn") for name in reports)
        failed = {name: r.max_rel_error for name, r in reports.items() if not r.passed}
        assert failed == {}

    @pytest.mark.parametrize(
        "mode",
        [
            FusionMode.constant_alpha(0.3),
            FusionMode.gate(use_edge_features=False),
            FusionMode.gate(one_layer=True),
        ],
        ids=["constant_alpha", "no_edge_features", "one_layer"],
    )
    def test_ablation_modes(self, mode):
        """Ablated forward passes keep exact gradients."""
        reports = check_joint_gradients(tiny_instance(seed=11, mode=mode))
        assert all(r.passed for r in reports.values())

    def test_other_seed(self):
        """Dual-encoder gradients hold on a different instance."""
        reports = check_dual_gradients(tiny_instance(seed=21))
        assert all(r.passed for r in reports.values())
        assert sum(r.checked for r in reports.values()) > 0

    def test_detects_wrong_gradient(self):
        """A scaled gradient is reported as failing."""
        tensors = {"w": np.array([0.3, -1.2, 2.0, 0.7])}

        def loss_fn(theta):
            return float(np.sum(np.sin(theta)))

        good = {"w": np.cos(tensors["w"])}
        bad = {"w": 2.0 * good["w"]}
        assert grouped_reports(loss_fn, tensors, good, 1e-5, 1e-4, 1e-3)["w"].passed
        assert not grouped_reports(loss_fn, tensors, bad, 1e-5, 1e-4, 1e-3)["w"].passed

    def test_composite_floor_only_on_full_losses(self):
        """The wider floor belongs to the full-loss checks; the kernel checker defaults to 1e-8."""
        assert RELATIVE_FLOOR == 1e-8
        assert inspect.signature(finite_difference_check).parameters["floor"].default == RELATIVE_FLOOR
        assert inspect.signature(grouped_reports).parameters["floor"].default == RELATIVE_FLOOR
        for check in (check_dual_gradients, check_joint_gradients):
            assert inspect.signature(check).parameters["floor"].default == COMPOSITE_FLOOR

    def test_tight_floor_catches_small_gradient_errors(self):
        """A 5e-11 error on a 1e-8 gradient fails at the 1e-8 floor and hides under the wider one."""
        theta = np.array([0.5, 1e-4])
        grad = np.array([0.5, 1e-8 + 5e-11])

        def loss_fn(x):
            return float(0.5 * x[0] ** 2 + 1e-8 * x[1])

        assert not finite_difference_check(loss_fn, theta, grad, 1e-5, 1e-4).passed
        assert finite_difference_check(loss_fn, theta, grad, 1e-5, 1e-4, floor=COMPOSITE_FLOOR).passed

