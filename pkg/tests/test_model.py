import numpy as np
import pytest

from conftest import blobs_fixture
from oracles import dense_chain
from powerfit.errors import DimensionError, StructureError, ValidationError
from powerfit.fixtures import Dataset, accuracy, generate_dataset, init_params, train_fixture
from powerfit.model import BatchNorm, Conv2d, Dense, Model, activate, fold_batchnorm, forward_float


def test_single_dense_identity_and_relu():
    m = Model([Dense([[1.0]], [0.0])], (1,))
    np.testing.assert_array_equal(forward_float(m, [3.0]), [3.0])
    m = Model([Dense([[1.0]], [0.0], "relu")], (1,))
    np.testing.assert_array_equal(forward_float(m, [-2.0]), [0.0])


def test_two_layer_matches_hand_chain():
    rng = np.random.default_rng(5)
    w1, b1 = rng.standard_normal((6, 4)), rng.standard_normal(6)
    w2, b2 = rng.standard_normal((3, 6)), rng.standard_normal(3)
    for act in ("relu", "silu", "gelu"):
        m = Model([Dense(w1, b1, act), Dense(w2, b2)], (4,))
        for x in rng.standard_normal((10, 4)):
            want = dense_chain([(w1.tolist(), b1.tolist(), act), (w2.tolist(), b2.tolist(), "identity")], x.tolist())
            np.testing.assert_allclose(forward_float(m, x), want, rtol=1e-12, atol=1e-12)


def test_input_shape_mismatch():
    m = Model([Dense(np.ones((2, 3)), np.zeros(2))], (3,))
    with pytest.raises(DimensionError):
        forward_float(m, np.ones((5, 4)))


def test_activation_forms():
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_allclose(activate("silu", x), x / (1 + np.exp(-x)), rtol=1e-15)
    assert activate("gelu", np.array([1.0]))[0] == pytest.approx(0.8413447460685429, rel=1e-14)
    with pytest.raises(ValidationError):
        activate("tanh", x)


def test_fold_identity_bn_is_noop():
    dense = Dense([[1.5, -2.0]], [0.25])
    bn = BatchNorm([1.0], [0.0], [0.0], [1.0], eps=0.0)
    folded = fold_batchnorm(Model([dense, bn], (2,)))
    assert len(folded.layers) == 1
    np.testing.assert_array_equal(folded.layers[0].weight, dense.weight)
    np.testing.assert_array_equal(folded.layers[0].bias, dense.bias)


def test_fold_hand_example():
    bn = BatchNorm([2.0], [1.0], [0.5], [1.0], eps=0.0)
    folded = fold_batchnorm(Model([Dense([[1.0]], [0.0]), bn], (1,)))
    np.testing.assert_array_equal(folded.layers[0].weight, [[2.0]])
    np.testing.assert_array_equal(folded.layers[0].bias, [0.0])


def _random_bn(rng, c, act="relu"):
    return BatchNorm(rng.uniform(0.5, 2, c), rng.standard_normal(c), rng.standard_normal(c), rng.uniform(0.1, 3, c), act)


def test_fold_random_dense_and_conv():
    rng = np.random.default_rng(11)
    dense_model = Model(
        [Dense(rng.standard_normal((8, 5)), rng.standard_normal(8)), _random_bn(rng, 8),
         Dense(rng.standard_normal((3, 8)), rng.standard_normal(3))],
        (5,),
    )
    conv_model = Model(
        [Conv2d(rng.standard_normal((4, 2, 3, 3)), rng.standard_normal(4), 1, "same"), _random_bn(rng, 4, "silu"),
         Dense(rng.standard_normal((3, 4 * 6 * 6)), rng.standard_normal(3))],
        (2, 6, 6),
    )
    for m in (dense_model, conv_model):
        x = rng.standard_normal((100,) + m.input_shape)
        folded = fold_batchnorm(m)
        assert not any(isinstance(l, BatchNorm) for l in folded.layers)
        np.testing.assert_allclose(forward_float(folded, x), forward_float(m, x), rtol=0, atol=1e-9)


def test_fold_requires_predecessor():
    bn = BatchNorm([1.0], [0.0], [0.0], [1.0])
    with pytest.raises(StructureError):
        fold_batchnorm(Model([Dense([[1.0]], [0.0], "relu"), bn], (1,)))


def test_negative_variance_rejected():
    with pytest.raises(ValidationError):
        BatchNorm([1.0], [0.0], [0.0], [-1.0])


def test_dataset_determinism():
    a, b = generate_dataset("blobs", 200, 3), generate_dataset("blobs", 200, 3)
    assert a.features.tobytes() == b.features.tobytes() and a.labels.tobytes() == b.labels.tobytes()
    r1, r2 = generate_dataset("rings", 200, 3), generate_dataset("rings", 200, 3)
    assert r1.features.tobytes() == r2.features.tobytes()


def test_well_separated_blobs_linearly_separable():
    ds = generate_dataset("blobs", 600, 7, separation=10.0)
    assert accuracy(train_fixture([2, 3], ds, 500, 0.1, 7), ds) >= 0.99


def test_rings_not_linearly_separable():
    ds = generate_dataset("rings", 600, 7)
    assert accuracy(train_fixture([2, 2], ds, 500, 0.1, 7), ds) <= 0.70


def test_trained_fixture_accuracy():
    model, ds = blobs_fixture(7)
    assert accuracy(model, ds) >= 0.95
    assert isinstance(model.layers[1], BatchNorm)


def test_bn_holds_training_statistics():
    model, ds = blobs_fixture(7)
    z = ds.features @ model.layers[0].weight.T + model.layers[0].bias
    np.testing.assert_allclose(model.layers[1].mean, z.mean(axis=0), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(model.layers[1].var, z.var(axis=0), rtol=1e-12, atol=1e-12)


def test_zero_epochs_is_initialisation():
    ds = generate_dataset("blobs", 100, 1)
    model = train_fixture([2, 8, 3], ds, 0, 0.1, 1)
    (w1, b1), (w2, b2) = init_params([2, 8, 3], 1)
    np.testing.assert_array_equal(model.layers[0].weight, w1)
    np.testing.assert_array_equal(model.layers[2].weight, w2)
    np.testing.assert_array_equal(model.layers[1].gamma, np.ones(8))


def test_training_bitwise_deterministic():
    ds = generate_dataset("blobs", 200, 2)
    a = train_fixture([2, 8, 3], ds, 50, 0.1, 2)
    b = train_fixture([2, 8, 3], ds, 50, 0.1, 2)
    for la, lb in zip(a.layers, b.layers):
        for name in ("weight", "bias", "gamma", "beta", "mean", "var"):
            if hasattr(la, name):
                assert getattr(la, name).tobytes() == getattr(lb, name).tobytes()


def test_accuracy_semantics():
    ds = Dataset(np.eye(3), [0, 1, 2], 3)
    perfect = Model([Dense(np.eye(3), np.zeros(3))], (3,))
    assert accuracy(perfect, ds) == 1.0
    flipped = Dataset(np.eye(2), [1, 0], 2)
    assert accuracy(Model([Dense(np.eye(2), np.zeros(2))], (2,)), flipped) == 0.0
    # ties go to the lowest index
    assert accuracy(Model([Dense(np.zeros((2, 2)), np.zeros(2))], (2,)), Dataset(np.eye(2), [0, 0], 2)) == 1.0


def test_accuracy_matches_per_row_count_and_monotone_invariance():
    model, ds = blobs_fixture(0)
    logits = forward_float(model, ds.features)
    hits = sum(int(max(range(3), key=lambda k: (row[k], -k)) == y) for row, y in zip(logits.tolist(), ds.labels))
    assert accuracy(model, ds) == hits / len(ds)

    class Warped:
        def forward(self, x):
            return np.exp(forward_float(model, x) / 3.0) + 7.0

    assert accuracy(Warped(), ds) == accuracy(model, ds)
