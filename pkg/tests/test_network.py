import json

import numpy as np
import pytest

from lipcert.network import (
    ActivationSpec,
    LayerSelection,
    Network,
    NetworkFormatError,
    UnknownActivation,
    center_values,
    forward,
    jacobian,
    load,
    merge_affine,
    save,
    slice_network,
)

from conftest import random_network


def test_activation_catalog_validation():
    with pytest.raises(UnknownActivation):
        ActivationSpec("swish")
    with pytest.raises(ValueError):
        ActivationSpec("leaky_relu", 1.5)
    with pytest.raises(ValueError):
        ActivationSpec("elu", -1.0)
    ActivationSpec("leaky_relu", 0.01)
    ActivationSpec("elu", 1.0)


class TestForward:
    def test_single_affine_layer(self):
        net = Network((np.array([[3.0]]),), (np.array([1.0]),), ActivationSpec("relu"))
        out, pre = forward(net, np.array([2.0]))
        assert np.allclose(out, [7.0])
        assert np.allclose(pre[0], [7.0])

    def test_relu_clips(self):
        net = Network((np.array([[-1.0]]), np.array([[1.0]])),
                      (np.array([0.0]), np.array([0.0])), ActivationSpec("relu"))
        out, pre = forward(net, np.array([2.0]))
        assert np.allclose(out, [0.0])
        assert np.allclose(pre[0], [-2.0])

    def test_identity_equals_matrix_chain(self):
        net = random_network(4, 6, ActivationSpec("identity"), seed=3)
        z = np.random.default_rng(1).standard_normal(5)
        out, _ = forward(net, z)
        chain = z
        for W, b in zip(net.weights, net.biases):
            chain = W @ chain + b
        assert np.allclose(out, chain, rtol=1e-12)

    def test_dimension_check(self):
        net = random_network(3, 4, ActivationSpec("relu"), seed=0)
        with pytest.raises(ValueError):
            forward(net, np.zeros(7))


class TestCenterValues:
    def test_odd_activation_zero_center(self):
        net = random_network(3, 4, ActivationSpec("tanh"), seed=2, bias_scale=0.0)
        pre, post = center_values(net, np.zeros(5))
        for v, z in zip(pre, post):
            assert np.allclose(v, 0.0) and np.allclose(z, 0.0)

    def test_relu_active_center(self):
        net = Network((np.array([[2.0]]), np.array([[1.0]])),
                      (np.array([0.0]), np.array([0.0])), ActivationSpec("relu"))
        pre, post = center_values(net, np.array([1.0]))
        assert np.allclose(pre[0], [2.0]) and np.allclose(post[0], [2.0])

    def test_relu_dead_center(self):
        net = Network((np.array([[2.0]]), np.array([[1.0]])),
                      (np.array([0.0]), np.array([0.0])), ActivationSpec("relu"))
        pre, post = center_values(net, np.array([-1.0]))
        assert np.allclose(pre[0], [-2.0]) and np.allclose(post[0], [0.0])


class TestJacobian:
    def test_identity_is_weight_product(self):
        net = random_network(3, 5, ActivationSpec("identity"), seed=4)
        J = jacobian(net, np.zeros(5))
        assert np.allclose(J, net.weights[2] @ net.weights[1] @ net.weights[0])

    def test_scalar_relu_active(self):
        net = Network((np.array([[2.0]]), np.array([[3.0]])),
                      (np.array([0.0]), np.array([0.0])), ActivationSpec("relu"))
        assert np.allclose(jacobian(net, np.array([1.0])), [[6.0]])

    def test_scalar_relu_dead(self):
        net = Network((np.array([[2.0]]), np.array([[3.0]])),
                      (np.array([0.0]), np.array([0.0])), ActivationSpec("relu"))
        assert np.allclose(jacobian(net, np.array([-1.0])), [[0.0]])

    def test_kink_uses_positive_branch(self):
        net = Network((np.array([[1.0]]), np.array([[1.0]])),
                      (np.array([0.0]), np.array([0.0])), ActivationSpec("elu", 0.5))
        assert np.allclose(jacobian(net, np.array([0.0])), [[1.0]])

    @pytest.mark.parametrize("kind,param", [("tanh", 0.0), ("sigmoid", 0.0), ("elu", 1.0)])
    def test_against_central_differences(self, kind, param):
        net = random_network(4, 6, ActivationSpec(kind, param), seed=8)
        rng = np.random.default_rng(9)
        h = 1e-5
        for _ in range(20):
            z = rng.standard_normal(5)
            J = jacobian(net, z)
            J_fd = np.zeros_like(J)
            for j in range(5):
                e = np.zeros(5)
                e[j] = h
                f_plus, _ = forward(net, z + e)
                f_minus, _ = forward(net, z - e)
                J_fd[:, j] = (f_plus - f_minus) / (2 * h)
            scale = max(1.0, np.abs(J).max())
            assert np.abs(J - J_fd).max() / scale <= 1e-5


class TestSlice:
    def test_full_selection_is_identity(self):
        net = random_network(3, 4, ActivationSpec("relu"), seed=5)
        sub = slice_network(net, LayerSelection(0, 3))
        for W, W2 in zip(net.weights, sub.weights):
            assert np.array_equal(W, W2)

    def test_output_row_trim(self):
        net = random_network(2, 4, ActivationSpec("relu"), seed=6)
        sub = slice_network(net, LayerSelection(0, 2, None, (0,)))
        assert sub.weights[-1].shape == (1, 4)
        assert np.array_equal(sub.weights[-1][0], net.weights[-1][0])

    def test_layer_window(self):
        net = random_network(3, 4, ActivationSpec("relu"), seed=7)
        sub = slice_network(net, LayerSelection(1, 3))
        assert sub.depth == 2
        assert np.array_equal(sub.weights[0], net.weights[1])
        assert np.array_equal(sub.weights[1], net.weights[2])

    def test_invalid_selection(self):
        net = random_network(3, 4, ActivationSpec("relu"), seed=7)
        with pytest.raises(ValueError):
            LayerSelection(2, 2).resolved(net)
        with pytest.raises(ValueError):
            LayerSelection(0, 3, (0, 0), None).resolved(net)
        with pytest.raises(ValueError):
            LayerSelection(0, 3, None, (99,)).resolved(net)


class TestMergeAffine:
    def test_scalar_chain(self):
        net = Network((np.array([[2.0]]), np.array([[3.0]])),
                      (np.array([1.0]), np.array([0.0])), ActivationSpec("relu"))
        W, b = merge_affine(net, 0, 2, [np.ones(1), np.ones(1)])
        assert np.allclose(W, [[6.0]]) and np.allclose(b, [3.0])

    def test_zero_slopes_leave_last_bias_path(self):
        net = Network((np.array([[2.0]]), np.array([[3.0]])),
                      (np.array([1.0]), np.array([5.0])), ActivationSpec("relu"))
        W, b = merge_affine(net, 0, 2, [np.zeros(1), np.zeros(1)])
        assert np.allclose(W, [[0.0]]) and np.allclose(b, [5.0])

    def test_single_layer_unchanged(self):
        net = random_network(3, 4, ActivationSpec("relu"), seed=10)
        W, b = merge_affine(net, 1, 1, [np.ones(4)])
        assert np.array_equal(W, net.weights[1]) and np.array_equal(b, net.biases[1])

    def test_forward_equivalence(self):
        # merged affine run reproduces the original chain on random inputs
        rng = np.random.default_rng(11)
        net = random_network(4, 6, ActivationSpec("identity"), seed=12)
        slopes = [np.ones(6), np.ones(6), np.ones(6), np.ones(2)]
        W, b = merge_affine(net, 0, 4, slopes)
        for _ in range(100):
            z = rng.standard_normal(5)
            expected, _ = forward(net, z)
            assert np.allclose(W @ z + b, expected, rtol=1e-10, atol=1e-12)


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        net = random_network(3, 4, ActivationSpec("leaky_relu", 0.01), seed=13)
        path = tmp_path / "net.json"
        save(net, path)
        net2 = load(path)
        assert net2.activation == net.activation
        for W, W2 in zip(net.weights, net2.weights):
            assert np.array_equal(W, W2)
        for b, b2 in zip(net.biases, net2.biases):
            assert np.array_equal(b, b2)

    def test_broken_dimension_chain_names_layer(self, tmp_path):
        net = random_network(3, 4, ActivationSpec("relu"), seed=14)
        path = tmp_path / "net.json"
        save(net, path)
        doc = json.loads(path.read_text())
        doc["layers"][1]["cols"] = 3
        doc["layers"][1]["weights"] = doc["layers"][1]["weights"][:12]
        path.write_text(json.dumps(doc))
        with pytest.raises(NetworkFormatError, match="layer 2"):
            load(path)

    def test_unknown_activation(self, tmp_path):
        net = random_network(2, 3, ActivationSpec("relu"), seed=15)
        path = tmp_path / "net.json"
        save(net, path)
        doc = json.loads(path.read_text())
        doc["activation"]["kind"] = "swish"
        path.write_text(json.dumps(doc))
        with pytest.raises(UnknownActivation):
            load(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / "net.json"
        path.write_text("{not json")
        with pytest.raises(NetworkFormatError):
            load(path)


def test_zero_weight_rejected():
    with pytest.raises(NetworkFormatError, match="zero weight"):
        Network((np.zeros((2, 2)),), (np.zeros(2),), ActivationSpec("relu"))
