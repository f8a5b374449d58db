#!/usr/bin/env python3
"""
Test Suite for SGD and the Poly Learning-Rate Schedule
"""

import unittest

import numpy as np

from src.core.tensor import parameter
from src.training.optimizer import SGD, TrainConfig, poly_lr, sgd_step
from src.utils.error_handling import ConfigError, NumericalError


class TestSgdStep(unittest.TestCase):
    """Test the parameter update rule"""

    def setUp(self):
        self.weight = parameter(np.array([1.0, 2.0]), name="weight")
        self.weight.grad = np.array([0.5, -1.0])
        self.params = {"weight": self.weight}
        self.velocity = {"weight": np.zeros(2)}

    def test_plain_gradient_step(self):
        """Momentum 0 and no decay give p - lr * g"""
        cfg = TrainConfig(momentum=0.0, weight_decay=0.0)
        sgd_step(self.params, self.velocity, 0.1, cfg)
        np.testing.assert_allclose(self.weight.data, [0.95, 2.1], rtol=1e-12)

    def test_momentum_accumulates(self):
        """Two steps with momentum 0.9 move by lr * g * (1 + 1.9)"""
        cfg = TrainConfig(momentum=0.9, weight_decay=0.0)
        sgd_step(self.params, self.velocity, 0.1, cfg)
        sgd_step(self.params, self.velocity, 0.1, cfg)
        np.testing.assert_allclose(self.weight.data, np.array([1.0, 2.0]) - 0.1 * np.array([0.5, -1.0]) * 2.9,
                                   rtol=1e-12)

    def test_weight_decay_skips_excluded_names(self):
        """Parameters in no_decay are not pulled towards zero"""
        alpha = parameter(np.full((1, 1, 1, 1), -1.0), name="alpha")
        alpha.grad = np.zeros((1, 1, 1, 1))
        self.weight.grad = np.zeros(2)
        params = {"weight": self.weight, "alpha": alpha}
        velocity = {name: np.zeros_like(t.data) for name, t in params.items()}

        sgd_step(params, velocity, 0.1, TrainConfig(momentum=0.0, weight_decay=0.5), no_decay={"alpha"})
        np.testing.assert_allclose(self.weight.data, [0.95, 1.9], rtol=1e-12)
        self.assertEqual(float(alpha.data.reshape(())), -1.0)

    def test_non_finite_gradient_leaves_parameters(self):
        """A NaN anywhere aborts the step before any parameter moves"""
        other = parameter(np.array([3.0]), name="other")
        other.grad = np.array([np.nan])
        params = {"weight": self.weight, "other": other}
        velocity = {name: np.zeros_like(t.data) for name, t in params.items()}
        with self.assertRaises(NumericalError):
            sgd_step(params, velocity, 0.1, TrainConfig())
        np.testing.assert_array_equal(self.weight.data, [1.0, 2.0])

    def test_optimizer_zero_grad(self):
        """zero_grad clears every gradient"""
        optimizer = SGD(self.params, TrainConfig())
        optimizer.zero_grad()
        self.assertIsNone(self.weight.grad)


class TestPolyLr(unittest.TestCase):
    """Test the poly schedule"""

    def test_endpoints(self):
        """Starts at the base rate and reaches zero"""
        cfg = TrainConfig()
        self.assertAlmostEqual(poly_lr(0, 100, cfg), 0.007, places=12)
        self.assertEqual(poly_lr(100, 100, cfg), 0.0)

    def test_linear_midpoint(self):
        """Power 1 halves the rate at the midpoint"""
        cfg = TrainConfig(base_lr=0.01, poly_power=1.0)
        self.assertAlmostEqual(poly_lr(50, 100, cfg), 0.005, places=12)

    def test_invalid_arguments(self):
        """Zero totals and out-of-range steps are configuration errors"""
        cfg = TrainConfig()
        with self.assertRaises(ConfigError):
            poly_lr(0, 0, cfg)
        with self.assertRaises(ConfigError):
            poly_lr(101, 100, cfg)


if __name__ == '__main__':
    unittest.main()
