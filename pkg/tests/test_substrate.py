from ptr_disentangle import *
from ptr_disentangle.substrate import dropout_mask, global_norm

import unittest

import numpy as np

from scipy.special import expit, log_softmax


def small_params(vocab_size: int = 12, embed_dim: int = 3, hidden: int = 4, seed: int = 0) -> ParameterStore:
    return ParameterStore.initialize(vocab_size, embed_dim, hidden, np.random.default_rng(seed))


class TestSequenceEncoder(unittest.TestCase):

    def test_shapes(self):
        """Test that every token gets a forward and a backward state."""

        params = ParameterStore.initialize(20, 8, 256, np.random.default_rng(0))
        out = sequence_encode([2, 3, 4, 5, 6], params)

        self.assertEqual(out.shape, (5, 512))
        self.assertEqual(feature_dim(256), 6 + 8192)

    def test_zero_parameters(self):
        """Test that all-zero parameters give exactly zero outputs."""

        params = small_params()
        for name in params.names:
            params[name] = np.zeros_like(params[name])

        out = sequence_encode([2, 3, 4], params)
        self.assertTrue(np.all(out == 0.))

    def test_single_token(self):
        """Test that a single token gives one LSTM step from the zero state in both directions."""

        params = small_params()
        out = sequence_encode([5], params)
        x = params["embedding"][5]

        for half, direction in enumerate(("lstm_forward", "lstm_backward")):

            z = params[f"{direction}.W"] @ x + params[f"{direction}.b"]
            i, f, g, o = np.split(z, 4)
            expected = expit(o) * np.tanh(expit(i) * np.tanh(g))

            self.assertTrue(np.allclose(out[0, half * 4:(half + 1) * 4], expected, atol=1e-12))

    def test_padding_invariance(self):
        """Test that batching with longer sequences does not change a sequence's encoding."""

        params = small_params()
        alone = sequence_encode([3, 7], params)
        batched, _ = encode_sequences([[4, 4, 5, 6, 2], [3, 7], []], params)

        self.assertTrue(np.allclose(batched[1], alone, atol=1e-12))
        self.assertTrue(np.array_equal(batched[2], params["empty_message"][None, :]))

    def test_unknown_rows(self):
        """Test that ids beyond the embedding table read the UNKNOWN row."""

        params = small_params(vocab_size=6)
        self.assertTrue(np.allclose(sequence_encode([40], params), sequence_encode([0], params)))

    def test_dropout_mask(self):
        """Test the inverted dropout mask."""

        self.assertIsNone(dropout_mask((3, 3), 0., np.random.default_rng(0)))
        self.assertIsNone(dropout_mask((3, 3), 0.5, None))

        mask = dropout_mask((200, 200), 0.2, np.random.default_rng(0))
        self.assertTrue(np.allclose(mask[mask > 0.], 1.25))
        self.assertAlmostEqual(float(mask.mean()), 1., places=1)


class TestGradientCheck(unittest.TestCase):

    def test_softmax_cross_entropy(self):
        """Test the gradient check on softmax cross entropy over [1, 2, 3]."""

        def loss_fn(inputs):
            logits = inputs["logits"]
            probs = np.exp(log_softmax(logits))
            grad = probs.copy()
            grad[0] -= 1.
            return -log_softmax(logits)[0], {"logits": grad}

        error = check_gradients(loss_fn, {"logits": np.array([1., 2., 3.])}, epsilon=1e-5)
        self.assertLess(error, 1e-6)

    def test_trivial_cases(self):
        """Test a constant loss and the derivative of tanh at 0."""

        def constant(inputs):
            return 3., {"x": np.zeros_like(inputs["x"])}

        self.assertEqual(check_gradients(constant, {"x": np.ones(4)}), 0.)

        def tanh_sum(inputs):
            x = inputs["x"]
            return float(np.tanh(x).sum()), {"x": 1. - np.tanh(x) ** 2}

        self.assertLess(check_gradients(tanh_sum, {"x": np.zeros(3)}), 1e-8)

    def test_small_entry_error(self):
        """Test that one wrong small entry is reported next to a large correct one."""

        def half_square(inputs):
            x = inputs["x"]
            grad = x.copy()
            grad[1] *= 2.
            return float(0.5 * (x ** 2).sum()), {"x": grad}

        error = check_gradients(half_square, {"x": np.array([10., 1e-3])})
        self.assertAlmostEqual(error, 1. / 3., places=4)

    def test_check_errors(self):
        """Test the epsilon range, the precision requirement and non-finite losses."""

        def loss_fn(inputs):
            return float(inputs["x"].sum()), {"x": np.ones_like(inputs["x"])}

        with self.assertRaises(ValueError):
            check_gradients(loss_fn, {"x": np.ones(2)}, epsilon=1e-2)

        with self.assertRaises(ValueError):
            check_gradients(loss_fn, {"x": np.ones(2, dtype=np.float32)})

        def log_fn(inputs):
            return float(np.log(inputs["x"]).sum()), {"x": 1. / inputs["x"]}

        with self.assertRaises(NumericFailure):
            check_gradients(log_fn, {"x": np.array([-1., 2.])})

    def test_bilstm_gradients(self):
        """Test the Bi-LSTM backward pass on a ragged batch."""

        rng = np.random.default_rng(1)
        params = small_params(embed_dim=3, hidden=3)
        lengths = [3, 1, 2]
        x = rng.normal(size=(3, 3, 3))
        weights = rng.normal(size=(3, 3, 6)) * (np.arange(3)[None, :, None] < np.array(lengths)[:, None, None])

        inputs = {"x": x}
        for name in ("lstm_forward.W", "lstm_forward.U", "lstm_forward.b",
                     "lstm_backward.W", "lstm_backward.U", "lstm_backward.b"):
            inputs[name] = params[name]

        def loss_fn(arrays):
            out, cache = bilstm_forward(arrays["x"], lengths, params)
            dx, grads = bilstm_backward(weights, cache, params)
            grads["x"] = dx
            return float((out * weights).sum()), grads

        self.assertLess(check_gradients(loss_fn, inputs), 1e-4)

    def test_encoder_gradients(self):
        """Test the gradient of the embedding, the EMPTY vector and the LSTMs through the encoder."""

        rng = np.random.default_rng(2)
        params = small_params(vocab_size=8, embed_dim=2, hidden=2)
        sequences = [[2, 3, 3], [], [7], [5, 2]]
        shapes = [(3, 4), (1, 4), (1, 4), (2, 4)]
        weights = [rng.normal(size=shape) for shape in shapes]

        def loss_fn(arrays):
            outputs, cache = encode_sequences(sequences, params)
            grads = encode_sequences_backward(weights, cache, params)
            return float(sum((out * w).sum() for out, w in zip(outputs, weights))), grads

        inputs = {name: params[name] for name in params.names if name not in ("w_link", "w_pair")}
        self.assertLess(check_gradients(loss_fn, inputs), 1e-4)


class TestOptimizer(unittest.TestCase):

    def test_zero_gradient(self):
        """Test that a zero gradient with zero moments leaves the parameters unchanged."""

        params = small_params()
        before = params.copy()
        state = OptimizerState.for_parameters(params, learning_rate=0.1, l2=0.)
        adam_step(params, params.zeros_like(), state)

        for name in params.names:
            self.assertTrue(np.array_equal(params[name], before[name]))
        self.assertEqual(state.step, 1)

    def test_first_step(self):
        """Test that the first bias-corrected step moves every entry by about the learning rate."""

        params = small_params()
        before = params.copy()
        grads = {name: np.where(np.arange(array.size).reshape(array.shape) % 2, 3., -0.5) for name, array in params.items()}
        state = OptimizerState.for_parameters(params, learning_rate=1e-3, l2=0.)
        adam_step(params, grads, state)

        for name in params.names:
            delta = params[name] - before[name]
            self.assertTrue(np.allclose(delta, -1e-3 * np.sign(grads[name]), rtol=1e-4))

    def test_constant_gradient(self):
        """Test that the update size under a constant gradient approaches the learning rate."""

        params = ParameterStore({"w": np.zeros(3)})
        state = OptimizerState.for_parameters(params, learning_rate=0.01, l2=0.)
        for _ in range(500):
            previous = params["w"].copy()
            adam_step(params, {"w": np.array([2., -2., 0.5])}, state)

        self.assertTrue(np.allclose(np.abs(params["w"] - previous), 0.01, rtol=1e-3))

    def test_l2_penalty(self):
        """Test that the L2 term alone pulls parameters toward zero."""

        params = ParameterStore({"w": np.array([1., -1.])})
        state = OptimizerState.for_parameters(params, learning_rate=0.1, l2=1.)
        adam_step(params, {"w": np.zeros(2)}, state)

        self.assertTrue(np.allclose(params["w"], [0.9, -0.9]))

    def test_shape_errors(self):
        """Test the contract checks of the optimizer and the parameter store."""

        params = small_params()
        state = OptimizerState.for_parameters(params)
        grads = params.zeros_like()
        grads["w_link"] = np.zeros(3)

        with self.assertRaises(ValueError):
            adam_step(params, grads, state)

        with self.assertRaises(ValueError):
            adam_step(params, {"w_link": np.zeros_like(params["w_link"])}, state)

        with self.assertRaises(ValueError):
            params["w_link"] = np.zeros(2)

    def test_clip_by_global_norm(self):
        """Test global norm clipping."""

        grads = {"a": np.array([3., 0.]), "b": np.array([4.])}
        clipped, norm = clip_by_global_norm(grads, 1.)

        self.assertAlmostEqual(norm, 5.)
        self.assertAlmostEqual(global_norm(clipped), 1.)
        self.assertIs(clip_by_global_norm(grads, 10.)[0], grads)


class TestParameterStore(unittest.TestCase):

    def test_initialize(self):
        """Test the parameter names, shapes and initial ranges."""

        params = ParameterStore.initialize(10, 4, 8, np.random.default_rng(0))

        self.assertEqual(params["embedding"].shape, (10, 4))
        self.assertEqual(params["lstm_forward.W"].shape, (32, 4))
        self.assertEqual(params["lstm_backward.U"].shape, (32, 8))
        self.assertEqual(params["w_link"].shape, (feature_dim(8),))
        self.assertLessEqual(np.abs(params["embedding"]).max(), 0.05)
        self.assertEqual(params.hidden, 8)

        with self.assertRaises(ValueError):
            ParameterStore.initialize(10, 4, 8, dtype="float16")

    def test_json_dict(self):
        """Test that the JSON form restores arrays bit for bit in both precisions."""

        for dtype in ("float64", "float32"):
            params = ParameterStore.initialize(6, 2, 2, np.random.default_rng(3), dtype)
            restored = ParameterStore.from_json_dict(params.to_json_dict())

            self.assertEqual(restored.names, params.names)
            for name in params.names:
                self.assertEqual(restored[name].dtype, np.dtype(dtype))
                self.assertTrue(np.array_equal(restored[name], params[name]))
