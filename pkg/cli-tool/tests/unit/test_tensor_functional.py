#!/usr/bin/env python3
"""
Test Suite for the Tensor Tape and Differentiable Operators
Covers forward values of every operator, shape contracts, the autodiff
tape, precision switching and the finite-difference gradient checker.
"""

import os
import sys
import unittest
from unittest.mock import patch

import numpy as np

# Add the cli-tool directory to the path
sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), '..', '..'))

from src.core import functional as F
from src.core.functional import ConvSpec
from src.core.gradcheck import grad_check, relative_errors
from src.core.losses import BCEOHEM, DiceLoss
from src.core.tensor import Function, Tensor, no_grad, parameter, precision
from src.monitoring.oracle_suite import GRAD_TOLERANCE, gradient_suite
from src.utils.error_handling import NumericalError, ShapeError


class TestTensor(unittest.TestCase):
    """Test tensor construction and the backward pass"""

    def test_rejects_unsupported_rank(self):
        """Only 4-D activations and 1-D parameter vectors are allowed"""
        with self.assertRaises(ShapeError):
            Tensor(np.zeros((3, 3)))

    def test_backward_without_seed_needs_scalar(self):
        """backward() with no upstream gradient only works on one element"""
        x = parameter(np.ones((1, 1, 2, 2)))
        y = F.scale(x, 2.0)
        with self.assertRaises(ShapeError):
            y.backward()

    def test_gradients_accumulate_over_shared_inputs(self):
        """x + x has gradient 2 for x"""
        x = parameter(np.random.default_rng(0).standard_normal((1, 2, 3, 3)))
        y = F.add(x, x)
        y.backward(np.ones(y.shape))
        np.testing.assert_allclose(x.grad, 2.0)

    def test_no_grad_skips_the_tape(self):
        """Outputs computed under no_grad carry no creator"""
        x = parameter(np.ones((1, 1, 2, 2)))
        with no_grad():
            y = F.relu(x)
        self.assertFalse(y.requires_grad)
        self.assertIsNone(y.creator)

    def test_precision_context(self):
        """Tensors pick up the float width of the active precision"""
        with precision(32):
            self.assertEqual(Tensor(np.zeros(3)).dtype, np.float32)
        self.assertEqual(Tensor(np.zeros(3)).dtype, np.float64)

    def test_non_finite_output_raises(self):
        """An operator producing inf fails instead of propagating it"""
        x = Tensor(np.full((1, 1, 2, 2), np.inf))
        with self.assertRaises(NumericalError):
            F.add(x, Tensor(np.ones((1, 1, 2, 2))))


class TestConvolution(unittest.TestCase):
    """Test conv2d and conv_transpose2d"""

    def test_all_ones_padded(self):
        """All-ones 3x3 input and kernel with padding 1: center 9, corners 4"""
        spec = ConvSpec.make(1, 1, 3, padding=1)
        out = F.conv2d(Tensor(np.ones((1, 1, 3, 3))), spec, Tensor(np.ones(spec.weight_shape)))
        expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], dtype=np.float64)
        np.testing.assert_array_equal(out.data[0, 0], expected)

    def test_identity_kernel(self):
        """A centered delta kernel reproduces the input"""
        x = np.zeros((1, 1, 5, 5))
        x[0, 0, 1, 3] = 1.0
        kernel = np.zeros((1, 1, 3, 3))
        kernel[0, 0, 1, 1] = 1.0
        out = F.conv2d(Tensor(x), ConvSpec.make(1, 1, 3, padding=1), Tensor(kernel))
        np.testing.assert_array_equal(out.data, x)

    def test_pointwise_conv_is_matmul(self):
        """A 1x1 convolution equals a channel matrix product"""
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 5, 6, 7))
        w = rng.standard_normal((3, 5, 1, 1))
        out = F.conv2d(Tensor(x), ConvSpec.make(5, 3, 1), Tensor(w))
        np.testing.assert_allclose(out.data, np.einsum('oc,nchw->nohw', w[:, :, 0, 0], x), atol=1e-12)

    def test_bias_is_added_per_channel(self):
        """Bias shifts every output pixel of its channel"""
        spec = ConvSpec.make(1, 2, 1, has_bias=True)
        out = F.conv2d(Tensor(np.zeros((1, 1, 2, 2))), spec, Tensor(np.zeros(spec.weight_shape)),
                       Tensor(np.array([1.5, -2.0])))
        np.testing.assert_array_equal(out.data[0, 0], 1.5)
        np.testing.assert_array_equal(out.data[0, 1], -2.0)

    def test_dilated_shape_and_gradient(self):
        """4->6 channels, 3x3, dilation 2, padding 2 keeps 9x9 and passes the gradient check"""
        rng = np.random.default_rng(7)
        spec = ConvSpec.make(4, 6, 3, dilation=2, padding=2)
        x = Tensor(rng.standard_normal((2, 4, 9, 9)), requires_grad=True, name="x")
        w = Tensor(rng.standard_normal(spec.weight_shape), requires_grad=True, name="weight")
        self.assertEqual(F.conv2d(x, spec, w).shape, (2, 6, 9, 9))

        report = grad_check(lambda a, b: F.conv2d(a, spec, b), [x, w])
        self.assertLessEqual(report.max_rel_error, 1e-4)

    def test_strided_output_size(self):
        """Stride 2 with padding 1 halves an even input"""
        spec = ConvSpec.make(1, 1, 3, stride=2, padding=1)
        self.assertEqual(spec.output_size(64, 32), (32, 16))

    def test_kernel_larger_than_input(self):
        """An empty output is a shape error"""
        spec = ConvSpec.make(1, 1, 3)
        with self.assertRaises(ShapeError):
            F.conv2d(Tensor(np.ones((1, 1, 2, 2))), spec, Tensor(np.ones(spec.weight_shape)))

    def test_channel_mismatch(self):
        """Input channels must match the ConvSpec"""
        spec = ConvSpec.make(2, 1, 1)
        with self.assertRaises(ShapeError):
            F.conv2d(Tensor(np.ones((1, 3, 4, 4))), spec, Tensor(np.ones(spec.weight_shape)))

    def test_invalid_spec(self):
        """Zero strides are rejected when the ConvSpec is built"""
        with self.assertRaises(ShapeError):
            ConvSpec.make(1, 1, 3, stride=0)

    def test_transposed_block_fill(self):
        """2x2 all-ones kernel at stride 2 copies each input pixel into a 2x2 block"""
        spec = ConvSpec.make(1, 1, 2, stride=2)
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        out = F.conv_transpose2d(Tensor(x), spec, Tensor(np.ones(spec.transposed_weight_shape)))
        expected = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=np.float64)
        np.testing.assert_array_equal(out.data[0, 0], expected)

    def test_transposed_doubles_size(self):
        """Stride-2 transposed conv maps 160 to 320"""
        spec = ConvSpec.make(1, 1, 2, stride=2)
        out = F.conv_transpose2d(Tensor(np.ones((1, 1, 160, 160))), spec,
                                 Tensor(np.ones(spec.transposed_weight_shape)))
        self.assertEqual(out.shape, (1, 1, 320, 320))


class TestBatchNorm(unittest.TestCase):
    """Test batch normalization in both modes"""

    def test_eval_identity(self):
        """Zero mean, unit variance statistics leave the input unchanged up to epsilon"""
        x = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
        out = F.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), (np.zeros(3), np.ones(3)),
                           training=False)
        np.testing.assert_allclose(out.data, x / np.sqrt(1.0 + 1e-5), rtol=1e-12)

    def test_train_statistics(self):
        """Per-channel output mean is beta and std is gamma"""
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 3, 5, 5)) * 3.0 + 2.0
        gamma, beta = np.array([2.0, 0.5, 1.0]), np.array([1.0, -1.0, 0.0])
        running = (np.zeros(3), np.ones(3))
        out = F.batch_norm(Tensor(x), Tensor(gamma), Tensor(beta), running, training=True).data

        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), beta, atol=1e-10)
        np.testing.assert_allclose(out.std(axis=(0, 2, 3)), gamma, rtol=1e-4)
        np.testing.assert_allclose(running[0], 0.1 * x.mean(axis=(0, 2, 3)), rtol=1e-12)

    def test_parameter_length(self):
        """gamma must have one entry per channel"""
        with self.assertRaises(ShapeError):
            F.batch_norm(Tensor(np.ones((1, 3, 2, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                         (np.zeros(2), np.ones(2)), training=False)


class TestElementwise(unittest.TestCase):
    """Test activations, products and channel plumbing"""

    def test_sigmoid_values(self):
        """sigmoid(0) = 0.5 and large inputs stay finite"""
        out = F.sigmoid(Tensor(np.array([0.0, 800.0, -800.0]).reshape(1, 1, 1, 3))).data.reshape(-1)
        self.assertEqual(out[0], 0.5)
        self.assertEqual(out[1], 1.0)
        self.assertEqual(out[2], 0.0)

    def test_relu(self):
        """Negatives clamp to zero"""
        out = F.relu(Tensor(np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3)))
        np.testing.assert_array_equal(out.data.reshape(-1), [0.0, 0.0, 2.0])

    def test_concat_channels(self):
        """(1,4,8,8) and (1,12,8,8) concatenate to (1,16,8,8)"""
        out = F.concat_channels([Tensor(np.zeros((1, 4, 8, 8))), Tensor(np.ones((1, 12, 8, 8)))])
        self.assertEqual(out.shape, (1, 16, 8, 8))
        self.assertEqual(out.data[:, 4:].min(), 1.0)

    def test_concat_spatial_mismatch(self):
        """Spatial sizes must agree"""
        with self.assertRaises(ShapeError):
            F.concat_channels([Tensor(np.zeros((1, 4, 8, 8))), Tensor(np.zeros((1, 4, 4, 4)))])

    def test_mul_scalar_param(self):
        """alpha = -1 negates, and d/d(alpha) of sum(alpha*T) is sum(T)"""
        t = np.random.default_rng(2).standard_normal((1, 2, 3, 3))
        alpha = parameter(np.full((1, 1, 1, 1), -1.0))
        out = F.mul_scalar_param(Tensor(t), alpha)
        np.testing.assert_array_equal(out.data, -t)
        out.backward(np.ones(out.shape))
        self.assertAlmostEqual(float(alpha.grad.reshape(())), float(t.sum()), places=12)

    def test_mul_scalar_param_shape(self):
        """The scalar must be (1,1,1,1)"""
        with self.assertRaises(ShapeError):
            F.mul_scalar_param(Tensor(np.ones((1, 1, 2, 2))), Tensor(np.ones(1)))

    def test_channel_broadcast(self):
        """A (N,1,H,W) mask gates every channel"""
        x = np.ones((1, 3, 2, 2))
        mask = np.array([[1.0, 0.0], [0.5, 1.0]]).reshape(1, 1, 2, 2)
        out = F.mul_channel_broadcast(Tensor(x), Tensor(mask))
        for channel in range(3):
            np.testing.assert_array_equal(out.data[0, channel], mask[0, 0])

    def test_upsample_nearest(self):
        """Each pixel becomes a factor x factor block"""
        x = np.arange(4, dtype=np.float64).reshape(1, 1, 2, 2)
        out = F.upsample_nearest(Tensor(x), 2)
        self.assertEqual(out.shape, (1, 1, 4, 4))
        self.assertEqual(out.data[0, 0, 3, 3], 3.0)
        self.assertEqual(out.data[0, 0, 0, 1], 0.0)

    def test_split_channels(self):
        """Splitting into groups needs an exact division"""
        parts = F.split_channels(Tensor(np.zeros((1, 8, 2, 2))), 4)
        self.assertEqual([p.shape[1] for p in parts], [2, 2, 2, 2])
        with self.assertRaises(ShapeError):
            F.split_channels(Tensor(np.zeros((1, 6, 2, 2))), 4)


class TestGradCheck(unittest.TestCase):
    """Test the finite-difference checker itself"""

    def test_relative_error_floor(self):
        """Near-zero analytic and numeric entries do not blow up the ratio"""
        errors = relative_errors(np.array([1.0, 0.0]), np.array([1.0, 1e-12]))
        self.assertLess(errors.max(), 1e-6)

    def test_sigmoid_passes(self):
        """A correct backward rule passes"""
        x = Tensor(np.random.default_rng(4).standard_normal((2, 3, 4, 4)), requires_grad=True)
        self.assertTrue(grad_check(F.sigmoid, [x]).passed)

    def test_broken_backward_is_caught(self):
        """Negating the backward rule of any single operator or loss fails the gradient suite"""
        functions = [obj for obj in vars(F).values()
                     if isinstance(obj, type) and issubclass(obj, Function) and obj is not Function]
        functions += [BCEOHEM, DiceLoss]
        self.assertGreaterEqual(len(functions), 15)

        for function in functions:
            original = function.backward

            def flipped(self, grad, original=original):
                return tuple(None if g is None else -g for g in original(self, grad))

            with self.subTest(function=function.__name__):
                with patch.object(function, "backward", flipped):
                    worst = gradient_suite(trials=1, seed=0)
                self.assertGreater(max(worst.values()), GRAD_TOLERANCE)

    def test_non_deterministic_function(self):
        """A function that changes between calls is rejected"""
        noise = np.random.default_rng(6)
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        with self.assertRaises(NumericalError):
            grad_check(lambda a: F.add(a, Tensor(noise.standard_normal(a.shape))), [x])

    def test_non_finite_input(self):
        """NaN inputs cannot be checked"""
        x = Tensor(np.full((1, 1, 2, 2), np.nan), requires_grad=True)
        with self.assertRaises(NumericalError):
            grad_check(F.sigmoid, [x])


if __name__ == '__main__':
    unittest.main()
