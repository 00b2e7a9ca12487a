"""Forward/backward pass, gradient checks, and model serialization."""

import numpy as np
import pytest

from botfuse.gcn_core import (
    DEFAULT_HIDDEN_DIM,
    DEFAULT_INPUT_DIM,
    RESIDUAL_X_PLUS_RELU,
    RESIDUAL_Z_PLUS_RELU,
    FrozenModelError,
    GcnModel,
    ModelFormatError,
    backward,
    clone_weights,
    deserialize_model,
    forward,
    gcn_layer_forward,
    init_gcn,
    load_model,
    masked_cross_entropy,
    restore_weights,
    save_model,
    serialize_model,
)


def _random_p(rng, n):
    """Symmetric degree-normalized matrix of a random undirected graph."""
    A = np.zeros((n, n))
    for _ in range(max(n, int(0.3 * n * n))):
        i, j = rng.integers(0, n, size=2)
        if i != j:
            A[i, j] = A[j, i] = 1.0
    deg = A.sum(axis=1)
    inv = np.zeros(n)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    return np.diag(inv) @ A @ np.diag(inv)


def _loss_of(model, P, X0, labels, mask):
    logits = forward(model, P, X0, with_head=True)
    loss, _ = masked_cross_entropy(logits, labels, mask)
    return loss


def _gradcheck(model, P, X0, labels, mask, eps=1e-5, floor=1e-6):
    """Elementwise relative error between analytic and central differences."""
    _, grads = backward(model, P, X0, labels, mask)
    worst = 0.0
    for param, grad in zip(model.parameters(), grads.parameters()):
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = param[ix]
            param[ix] = orig + eps
            hi = _loss_of(model, P, X0, labels, mask)
            param[ix] = orig - eps
            lo = _loss_of(model, P, X0, labels, mask)
            param[ix] = orig
            fd = (hi - lo) / (2 * eps)
            rel = abs(grad[ix] - fd) / max(abs(grad[ix]), abs(fd), floor)
            worst = max(worst, rel)
    return worst


class TestInit:
    def test_weight_shapes_chain(self):
        m = init_gcn(depth=4)
        assert len(m.weights) == 4
        assert m.weights[0].shape == (DEFAULT_INPUT_DIM, DEFAULT_HIDDEN_DIM)
        for w in m.weights[1:]:
            assert w.shape == (DEFAULT_HIDDEN_DIM, DEFAULT_HIDDEN_DIM)
        assert m.head_weight.shape == (DEFAULT_HIDDEN_DIM, 2)
        assert m.head_bias.shape == (2,)

    def test_seed_determinism(self):
        a, b = init_gcn(3, seed=9), init_gcn(3, seed=9)
        for wa, wb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(wa, wb)
        c = init_gcn(3, seed=10)
        assert not np.array_equal(a.weights[0], c.weights[0])

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            init_gcn(0)
        with pytest.raises(ValueError):
            init_gcn(2, residual_mode="bogus")
        with pytest.raises(ValueError):
            init_gcn(2, norm_mode="bogus")


class TestLayerForward:
    def test_zero_weights_give_zero(self):
        rng = np.random.default_rng(0)
        P = _random_p(rng, 6)
        X = rng.standard_normal((6, 5))
        out = gcn_layer_forward(P, X, np.zeros((5, 8)))
        assert not out.any()

    def test_two_node_hand_computation(self):
        P = np.array([[0.0, 1.0], [1.0, 0.0]])
        X = np.eye(2)
        out = gcn_layer_forward(P, X, np.eye(2))
        # Z = P, all entries nonnegative, so the merged sum doubles it.
        assert out.tolist() == [[0.0, 2.0], [2.0, 0.0]]

    def test_dense_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            n, d, h = 20, 5, 7
            P = _random_p(rng, n)
            X = rng.standard_normal((n, d))
            W = rng.standard_normal((d, h))
            Z = P @ X @ W
            oracle = Z + np.maximum(Z, 0.0)
            got = gcn_layer_forward(P, X, W)
            assert np.abs(got - oracle).max() < 1e-12

    def test_residual_identity_when_nonnegative(self):
        rng = np.random.default_rng(2)
        P = _random_p(rng, 8)
        X = rng.uniform(0.1, 1.0, size=(8, 5))
        W = rng.uniform(0.1, 1.0, size=(5, 6))
        Z = P @ (X @ W)
        assert np.array_equal(gcn_layer_forward(P, X, W), 2.0 * Z)

    def test_x_plus_relu_mode(self):
        rng = np.random.default_rng(3)
        P = _random_p(rng, 6)
        X = rng.standard_normal((6, 6))
        W = rng.standard_normal((6, 6))
        Z = P @ (X @ W)
        got = gcn_layer_forward(P, X, W, residual_mode=RESIDUAL_X_PLUS_RELU)
        assert np.allclose(got, X + np.maximum(Z, 0.0))
        # Width change means no identity path to add.
        W2 = rng.standard_normal((6, 4))
        got2 = gcn_layer_forward(P, X, W2, residual_mode=RESIDUAL_X_PLUS_RELU)
        assert np.allclose(got2, np.maximum(P @ (X @ W2), 0.0))

    def test_operand_validation(self):
        P = np.eye(3)
        with pytest.raises(ValueError, match="dimension mismatch"):
            gcn_layer_forward(P, np.ones((3, 4)), np.ones((5, 2)))
        with pytest.raises(ValueError, match="does not match"):
            gcn_layer_forward(P, np.ones((4, 5)), np.ones((5, 2)))
        bad = np.ones((3, 5))
        bad[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            gcn_layer_forward(P, bad, np.ones((5, 2)))


class TestForward:
    def test_depth_one_is_single_layer_plus_head(self):
        rng = np.random.default_rng(4)
        m = init_gcn(1, seed=4)
        P = _random_p(rng, 7)
        X = rng.standard_normal((7, 5))
        hidden = gcn_layer_forward(P, X, m.weights[0])
        assert np.array_equal(forward(m, P, X), hidden)
        logits = forward(m, P, X, with_head=True)
        assert np.allclose(logits, hidden @ m.head_weight + m.head_bias)

    def test_layer_replay_oracle_depth_12(self):
        rng = np.random.default_rng(5)
        m = init_gcn(12, seed=5)
        P = _random_p(rng, 30)
        X0 = rng.standard_normal((30, 5))
        X = X0
        for W in m.weights:
            Z = P @ (X @ W)
            X = Z + np.maximum(Z, 0.0)
        oracle = X @ m.head_weight + m.head_bias
        got = forward(m, P, X0, with_head=True)
        assert np.abs(got - oracle).max() < 1e-10

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        m = init_gcn(4, seed=6)
        n = 12
        P = _random_p(rng, n)
        X = rng.standard_normal((n, 5))
        perm = rng.permutation(n)
        out = forward(m, P, X)
        out_p = forward(m, P[np.ix_(perm, perm)], X[perm])
        assert np.allclose(out_p, out[perm], atol=1e-12)

    def test_positive_homogeneity_without_head(self):
        rng = np.random.default_rng(7)
        m = init_gcn(6, seed=7)
        P = _random_p(rng, 9)
        X = rng.standard_normal((9, 5))
        assert np.allclose(forward(m, P, 3.0 * X), 3.0 * forward(m, P, X), rtol=1e-12)

    def test_automorphic_nodes_get_equal_embeddings(self):
        # Two-node mutual edge with all-ones input: both nodes are equivalent.
        m = init_gcn(3, seed=8)
        P = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = forward(m, P, np.ones((2, 5)))
        assert np.allclose(out[0], out[1])

    def test_input_width_enforced(self):
        m = init_gcn(2)
        with pytest.raises(ValueError, match="n x 5"):
            forward(m, np.eye(3), np.ones((3, 4)))


class TestMaskedCrossEntropy:
    def test_uniform_logits_give_log2(self):
        loss, dlogits = masked_cross_entropy(
            np.zeros((1, 2)), np.array([0]), np.array([True])
        )
        assert loss == pytest.approx(np.log(2.0))
        assert dlogits.tolist() == [[-0.5, 0.5]]

    def test_mask_excludes_rows(self):
        logits = np.array([[2.0, -1.0], [5.0, 5.0]])
        loss, dlogits = masked_cross_entropy(
            logits, np.array([0, 1]), np.array([True, False])
        )
        only_first, _ = masked_cross_entropy(
            logits[:1], np.array([0]), np.array([True])
        )
        assert loss == pytest.approx(only_first)
        assert not dlogits[1].any()

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError, match="empty training mask"):
            masked_cross_entropy(np.zeros((2, 2)), np.array([0, 1]), np.array([False, False]))

    def test_saturated_logits_have_negligible_gradient(self):
        logits = np.array([[40.0, -40.0]] * 4)
        loss, dlogits = masked_cross_entropy(
            logits, np.zeros(4, dtype=int), np.ones(4, dtype=bool)
        )
        assert loss < 1e-6
        assert np.abs(dlogits).max() < 1e-6


class TestBackward:
    def test_finite_difference_check_depth_2(self):
        rng = np.random.default_rng(10)
        m = init_gcn(2, seed=10)
        P = _random_p(rng, 10)
        X = rng.standard_normal((10, 5))
        labels = rng.integers(0, 2, size=10)
        mask = np.ones(10, dtype=bool)
        assert _gradcheck(m, P, X, labels, mask) < 1e-4

    def test_gradient_ignores_masked_out_labels(self):
        rng = np.random.default_rng(11)
        m = init_gcn(3, seed=11)
        P = _random_p(rng, 8)
        X = rng.standard_normal((8, 5))
        mask = np.zeros(8, dtype=bool)
        mask[:4] = True
        labels = rng.integers(0, 2, size=8)
        flipped = labels.copy()
        flipped[4:] = 1 - flipped[4:]
        loss_a, g_a = backward(m, P, X, labels, mask)
        loss_b, g_b = backward(m, P, X, flipped, mask)
        assert loss_a == loss_b
        for a, b in zip(g_a.parameters(), g_b.parameters()):
            assert np.array_equal(a, b)

    def test_stationary_at_saturated_separation(self):
        rng = np.random.default_rng(12)
        m = init_gcn(2, seed=12)
        # Kill the feature path so the head bias alone fixes the logits.
        m.head_weight = np.zeros_like(m.head_weight)
        m.head_bias = np.array([40.0, -40.0])
        P = _random_p(rng, 6)
        X = rng.standard_normal((6, 5))
        loss, grads = backward(m, P, X, np.zeros(6, dtype=int), np.ones(6, dtype=bool))
        total = np.sqrt(sum(float((g ** 2).sum()) for g in grads.parameters()))
        assert total < 1e-6

    def test_frozen_model_rejects_backward(self):
        m = init_gcn(2, seed=13)
        m.frozen = True
        with pytest.raises(FrozenModelError):
            backward(m, np.eye(3), np.ones((3, 5)), np.zeros(3, dtype=int),
                     np.ones(3, dtype=bool))

    def test_x_plus_relu_gradcheck(self):
        rng = np.random.default_rng(14)
        m = init_gcn(3, seed=14, residual_mode=RESIDUAL_X_PLUS_RELU)
        P = _random_p(rng, 8)
        X = rng.standard_normal((8, 5))
        labels = rng.integers(0, 2, size=8)
        assert _gradcheck(m, P, X, labels, np.ones(8, dtype=bool)) < 1e-4


class TestSerialization:
    def _assert_models_equal(self, a: GcnModel, b: GcnModel):
        assert (a.depth, a.input_dim, a.hidden_dim) == (b.depth, b.input_dim, b.hidden_dim)
        assert a.frozen == b.frozen
        assert a.residual_mode == b.residual_mode
        assert a.norm_mode == b.norm_mode
        for wa, wb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(wa, wb)

    def test_round_trip_identity(self):
        for seed in range(5):
            m = init_gcn(int(np.random.default_rng(seed).integers(1, 8)), seed=seed)
            m.frozen = bool(seed % 2)
            m2 = deserialize_model(serialize_model(m))
            self._assert_models_equal(m, m2)
            assert serialize_model(m2) == serialize_model(m)

    def test_truncated_payload(self):
        data = serialize_model(init_gcn(2))
        with pytest.raises(ModelFormatError, match="corrupt payload"):
            deserialize_model(data[: len(data) // 2])
        with pytest.raises(ModelFormatError, match="truncated"):
            deserialize_model(b"xy")

    def test_bitflip_detected_by_checksum(self):
        data = bytearray(serialize_model(init_gcn(2)))
        data[40] ^= 0xFF
        with pytest.raises(ModelFormatError, match="checksum"):
            deserialize_model(bytes(data))

    def test_bad_magic(self):
        import struct
        import zlib

        data = serialize_model(init_gcn(2))
        body = b"NOPE" + data[4:-4]
        with pytest.raises(ModelFormatError, match="bad magic"):
            deserialize_model(body + struct.pack("<I", zlib.crc32(body)))

    def test_unsupported_version(self):
        import struct
        import zlib

        data = serialize_model(init_gcn(2))
        body = data[:4] + struct.pack("<H", 9) + data[6:-4]
        with pytest.raises(ModelFormatError, match="version"):
            deserialize_model(body + struct.pack("<I", zlib.crc32(body)))

    def test_non_finite_weights_rejected(self):
        m = init_gcn(2)
        m.weights[0][0, 0] = np.inf
        with pytest.raises(ModelFormatError, match="non-finite"):
            deserialize_model(serialize_model(m))

    def test_distinct_depths_have_distinct_headers(self):
        h12 = serialize_model(init_gcn(12))[:20]
        h24 = serialize_model(init_gcn(24))[:20]
        assert h12 != h24

    def test_save_and_load(self, tmp_path):
        m = init_gcn(3, seed=20)
        m.frozen = True
        path = tmp_path / "model.bin"
        save_model(m, path)
        self._assert_models_equal(m, load_model(path))
        with pytest.raises(FileNotFoundError):
            load_model(tmp_path / "missing.bin")


class TestCloneRestore:
    def test_restore_recovers_forward(self):
        rng = np.random.default_rng(21)
        m = init_gcn(3, seed=21)
        P = _random_p(rng, 6)
        X = rng.standard_normal((6, 5))
        before = forward(m, P, X, with_head=True)
        snapshot = clone_weights(m)
        for w in m.weights:
            w += 1.0
        assert not np.allclose(forward(m, P, X, with_head=True), before)
        restore_weights(m, snapshot)
        assert np.array_equal(forward(m, P, X, with_head=True), before)
