import numpy as np
from django.test import SimpleTestCase

from pixelvla.exceptions import DimensionError
from pixelvla.nn import (
    MLP,
    Embedding,
    LayerNorm,
    Linear,
    MultiHeadAttention,
    Parameter,
    glorot_uniform,
    linear_forward,
    spawn_generators,
)


class LinearForwardTests(SimpleTestCase):

    def test_identity_weight(self):
        y = linear_forward(np.eye(2), np.zeros(2), np.array([[3.0, 4.0]]))
        np.testing.assert_array_equal(y, [[3.0, 4.0]])

    def test_forced_arithmetic(self):
        y = linear_forward(np.array([[1.0, 1.0]]), np.array([0.5]), np.array([[2.0, 3.0]]))
        np.testing.assert_array_equal(y, [[5.5]])

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(42)
        weight, bias, x = rng.normal(size=(4, 3)), rng.normal(size=4), rng.normal(size=(5, 3))
        expected = np.zeros((5, 4))
        for row in range(5):
            for out in range(4):
                total = bias[out]
                for inner in range(3):
                    total += x[row, inner] * weight[out, inner]
                expected[row, out] = total
        self.assertLess(np.abs(linear_forward(weight, bias, x) - expected).max(), 1e-6)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            linear_forward(np.ones((2, 3)), np.zeros(2), np.ones((1, 4)))
        with self.assertRaises(DimensionError):
            linear_forward(np.ones((2, 3)), np.zeros(3), np.ones((1, 3)))


class ModuleTests(SimpleTestCase):

    def test_glorot_bounds_and_dtype(self):
        rng = np.random.default_rng(0)
        weight = glorot_uniform(rng, 30, 20)
        self.assertEqual(weight.dtype, np.float32)
        self.assertLessEqual(np.abs(weight).max(), np.sqrt(6.0 / 50))

    def test_spawned_generators_are_reproducible(self):
        first = [rng.normal(size=3) for rng in spawn_generators(5, 3)]
        second = [rng.normal(size=3) for rng in spawn_generators(5, 3)]
        for left, right in zip(first, second):
            np.testing.assert_array_equal(left, right)
        self.assertFalse(np.array_equal(first[0], first[1]))

    def test_named_parameters_walk_nested_modules(self):
        mlp = MLP(3, 4, 2, np.random.default_rng(0))
        self.assertEqual(
            [name for name, _ in mlp.named_parameters()],
            ['fc1.weight', 'fc1.bias', 'fc2.weight', 'fc2.bias'],
        )

    def test_freeze_stops_gradient_accumulation(self):
        rng = np.random.default_rng(1)
        linear = Linear(3, 2, rng).freeze()
        x = rng.normal(size=(4, 3)).astype(np.float32)
        y, cache = linear.forward(x)
        dx = linear.backward(np.ones_like(y), cache)
        self.assertEqual(dx.shape, x.shape)
        self.assertFalse(np.any(linear.weight.grad))
        self.assertFalse(np.any(linear.bias.grad))

    def test_zero_grad(self):
        parameter = Parameter(np.ones((2, 2)))
        parameter.grad += 3.0
        parameter.zero_grad()
        self.assertEqual(parameter.grad.shape, parameter.value.shape)
        self.assertFalse(np.any(parameter.grad))

    def test_forward_is_deterministic(self):
        x = np.random.default_rng(2).normal(size=(5, 8)).astype(np.float32)
        first, _ = MultiHeadAttention(8, 2, np.random.default_rng(3)).forward(x)
        second, _ = MultiHeadAttention(8, 2, np.random.default_rng(3)).forward(x)
        self.assertEqual(first.tobytes(), second.tobytes())

    def test_attention_needs_divisible_heads(self):
        with self.assertRaises(DimensionError):
            MultiHeadAttention(6, 4, np.random.default_rng(0))

    def test_layer_norm_output_statistics(self):
        x = np.random.default_rng(4).normal(3.0, 2.0, size=(6, 16))
        y, _ = LayerNorm(16).astype(np.float64).forward(x)
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-7)
        np.testing.assert_allclose(y.std(axis=-1), 1.0, atol=1e-3)

    def test_embedding_accumulates_repeated_rows(self):
        embedding = Embedding(5, 3, np.random.default_rng(0))
        rows, cache = embedding.forward([1, 1, 4])
        np.testing.assert_array_equal(rows[0], embedding.table.value[1])
        embedding.backward(np.ones((3, 3), dtype=np.float32), cache)
        np.testing.assert_array_equal(embedding.table.grad[1], [2.0, 2.0, 2.0])
        np.testing.assert_array_equal(embedding.table.grad[0], [0.0, 0.0, 0.0])
