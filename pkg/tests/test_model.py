"""
Unit tests for the GraphSAGE regressor: layers, gradients, equivariance and checkpoints
"""
import pytest
import json
import os
import sys
import tempfile
import shutil
import itertools

import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.errors import ConfigError, InputError, ShapeError
from core.graph import union_graph
from core.model import (
    ModelConfig,
    batchnorm,
    check_feature_names,
    dropout,
    forward,
    hidden_representations,
    init_params,
    input_layer,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
    sage_block,
)
from core.tensor import Matrix, Tape, finite_diff_check, mean_square, subtract, take_rows


@pytest.fixture
def temp_dir():
    """Create temporary checkpoint directory"""
    path = tempfile.mkdtemp()
    yield path
    shutil.rmtree(path, ignore_errors=True)


def random_graph(rng, n, edge_count):
    pairs = list(itertools.combinations(range(n), 2))
    chosen = rng.choice(len(pairs), min(edge_count, len(pairs)), replace=False)
    return union_graph(frozenset(pairs[k] for k in chosen), frozenset(), n)


def path_graph(n):
    return union_graph(frozenset((i, i + 1) for i in range(n - 1)), frozenset(), n)


# === Config and parameters ===
def test_model_config_validation():
    """Test invalid sizes and options are rejected"""
    with pytest.raises(ConfigError):
        ModelConfig(input_dim=0)
    with pytest.raises(ConfigError):
        ModelConfig(input_dim=4, dropout_rate=1.0)
    with pytest.raises(ConfigError):
        ModelConfig(input_dim=4, final_activation='tanh')
    with pytest.raises(ConfigError):
        ModelConfig(input_dim=4, aggregator='max')


def test_init_params_shapes_and_determinism():
    """Test weight shapes and seeded initialization"""
    model = init_params(ModelConfig(input_dim=5, hidden_channels=4), seed=3)
    assert [w.shape for w in model.weights] == [(4, 5), (4, 8), (4, 8), (1, 8)]
    assert [b.shape for b in model.biases] == [(1, 4), (1, 4), (1, 4), (1, 1)]
    again = init_params(ModelConfig(input_dim=5, hidden_channels=4), seed=3)
    for a, b in zip(model.weights, again.weights):
        assert np.array_equal(a.data, b.data)
    other = init_params(ModelConfig(input_dim=5, hidden_channels=4), seed=4)
    assert not np.array_equal(model.weights[0].data, other.weights[0].data)


def test_parameter_count():
    """Test the trainable parameter total"""
    p, h = 20, 8
    model = init_params(ModelConfig(input_dim=p, hidden_channels=h))
    expected = (h * p + h) + 2 * (h * 2 * h + h) + (2 * h + 1) + 3 * 2 * h
    assert parameter_count(model) == expected


# === Layers ===
def test_batchnorm_training_needs_two_rows():
    """Test batch statistics are undefined for one row"""
    model = init_params(ModelConfig(input_dim=2, hidden_channels=3))
    with pytest.raises(InputError):
        batchnorm(Matrix(np.ones((1, 3))), model.batch_norms[0], training=True)


def test_batchnorm_updates_running_stats():
    """Test the momentum update with unbiased variance"""
    model = init_params(ModelConfig(input_dim=2, hidden_channels=2))
    state = model.batch_norms[0]
    h = Matrix([[0.0, 2.0], [2.0, 6.0]])
    batchnorm(h, state, training=True)
    assert np.allclose(state.running_mean, 0.1 * np.array([1.0, 4.0]))
    assert np.allclose(state.running_var, 0.9 + 0.1 * np.array([2.0, 8.0]))


def test_batchnorm_eval_fresh_state_is_near_identity():
    """Test a fresh state leaves inputs almost unchanged"""
    model = init_params(ModelConfig(input_dim=2, hidden_channels=2))
    h = Matrix([[1.0, -1.0]])
    out = batchnorm(h, model.batch_norms[0], training=False)
    assert np.allclose(out.data, h.data / np.sqrt(1.0 + 1e-5))


def test_dropout_inverted_scaling():
    """Test survivors are scaled and eval mode is the identity"""
    h = Matrix(np.ones((200, 10)))
    out = dropout(h, 0.5, training=True, rng=np.random.default_rng(0)).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert 0.4 < (out > 0).mean() < 0.6
    assert dropout(h, 0.5, training=False) is h
    assert dropout(h, 0.0, training=True) is h


def test_dropout_survivor_fraction_on_large_input():
    """Test p = 0.5 over a million elements keeps half and preserves the mean"""
    h = Matrix(np.ones((1000, 1000)))
    out = dropout(h, 0.5, training=True, rng=np.random.default_rng(7)).data
    assert abs((out > 0).mean() - 0.5) <= 0.01
    assert abs(out.mean() - 1.0) <= 0.01


def test_dropout_expectation_matches_eval_activation():
    """Test the average of 10^4 training-mode dropouts recovers the frozen layer-1 activation"""
    rng = np.random.default_rng(3)
    model = init_params(ModelConfig(input_dim=5, hidden_channels=8, dropout_rate=0.3), seed=2)
    h = batchnorm(input_layer(Matrix(rng.normal(size=(6, 5))), model), model.batch_norms[0], training=False)

    draws = np.random.default_rng(11)
    total = np.zeros(h.shape)
    for _ in range(10_000):
        total += dropout(h, model.config.dropout_rate, training=True, rng=draws).data
    mean = total / 10_000

    assert np.linalg.norm(mean - h.data) <= 0.02 * np.linalg.norm(h.data)


def test_sage_block_rejects_bad_layer():
    """Test only layers 2 and 3 are aggregation blocks"""
    model = init_params(ModelConfig(input_dim=2, hidden_channels=2))
    with pytest.raises(ConfigError):
        sage_block(Matrix(np.ones((2, 2))), path_graph(2), 4, model)


def test_forward_shapes_and_checks():
    """Test output shape and input validation"""
    model = init_params(ModelConfig(input_dim=3, hidden_channels=4))
    graph = path_graph(5)
    out = forward(Matrix(np.ones((5, 3))), graph, model)
    assert out.shape == (5, 1)
    with pytest.raises(ShapeError):
        forward(Matrix(np.ones((5, 2))), graph, model)
    with pytest.raises(ShapeError):
        forward(Matrix(np.ones((4, 3))), graph, model)


def test_relu_final_activation_non_negative():
    """Test the optional output relu"""
    rng = np.random.default_rng(0)
    model = init_params(ModelConfig(input_dim=3, hidden_channels=4, final_activation='relu'), seed=1)
    out = forward(Matrix(rng.normal(size=(10, 3))), random_graph(rng, 10, 15), model)
    assert (out.data >= 0).all()


def test_hidden_representations():
    """Test three eval-mode layer outputs of hidden width"""
    model = init_params(ModelConfig(input_dim=3, hidden_channels=6))
    reps = hidden_representations(Matrix(np.ones((4, 3))), path_graph(4), model)
    assert [r.shape for r in reps] == [(4, 6)] * 3


# === Gradients ===
def test_full_model_gradient_check():
    """Test every parameter gradient of the masked loss against central differences"""
    rng = np.random.default_rng(12)
    n, p = 12, 20
    graph = random_graph(rng, n, 20)
    x = Matrix(rng.normal(size=(n, p)))
    train_rows = [0, 2, 3, 5, 7, 8, 11]
    target = Matrix(rng.normal(size=(len(train_rows), 1)))
    model = init_params(ModelConfig(input_dim=p, hidden_channels=8, dropout_rate=0.0), seed=5)
    params = model.parameters()

    def loss_fn():
        tape = Tape().watch(*params)
        pred = forward(x, graph, model, training=True, tape=tape)
        loss = mean_square(subtract(take_rows(pred, train_rows, tape), target, tape), tape)
        return tape, loss

    assert finite_diff_check(loss_fn, params) < 1e-4


def test_finite_diff_check_quadratic():
    """Test an exact quadratic"""
    w = Matrix([[3.0]])

    def loss_fn():
        tape = Tape().watch(w)
        return tape, mean_square(w, tape)

    assert finite_diff_check(loss_fn, [w]) < 1e-8


# === Structure ===
def test_permutation_equivariance():
    """Test relabeling nodes permutes the eval-mode predictions"""
    rng = np.random.default_rng(20)
    for trial in range(20):
        n = int(rng.integers(3, 25))
        graph = random_graph(rng, n, int(rng.integers(0, 3 * n)))
        x = rng.normal(size=(n, 4))
        model = init_params(ModelConfig(input_dim=4, hidden_channels=5), seed=trial)

        perm = rng.permutation(n)
        inverse = np.argsort(perm)
        moved = frozenset(
            tuple(sorted((int(inverse[i]), int(inverse[j])))) for i, j in graph.edges
        )
        permuted = union_graph(moved, frozenset(), n)

        base = forward(Matrix(x), graph, model).data
        relabeled = forward(Matrix(x[perm]), permuted, model).data
        assert np.max(np.abs(relabeled - base[perm])) < 1e-10


def test_receptive_field_is_three_hops():
    """Test node 0 ignores features four or more hops away"""
    graph = path_graph(6)
    model = init_params(ModelConfig(input_dim=2, hidden_channels=4), seed=2)
    x = np.random.default_rng(1).normal(size=(6, 2))
    base = forward(Matrix(x), graph, model).data[0, 0]

    far = x.copy()
    far[4:] += 10.0
    assert forward(Matrix(far), graph, model).data[0, 0] == base

    near = x.copy()
    near[3] += 10.0
    assert forward(Matrix(near), graph, model).data[0, 0] != base


# === Checkpoints ===
def test_checkpoint_round_trip(temp_dir):
    """Test save/load restores parameters and predictions exactly"""
    rng = np.random.default_rng(9)
    model = init_params(ModelConfig(input_dim=3, hidden_channels=4), seed=9)
    model.feature_mean = rng.normal(size=3)
    model.feature_scale = rng.uniform(0.5, 2.0, size=3)
    model.target_mean, model.target_scale = 150.3, 12.7
    model.feature_names = ('Ca', 'NDVI', 'population=A')
    batchnorm(Matrix(rng.normal(size=(6, 4))), model.batch_norms[1], training=True)

    path = os.path.join(temp_dir, 'model.json')
    save_checkpoint(model, path)
    restored = load_checkpoint(path)

    for a, b in zip(model.parameters(), restored.parameters()):
        assert np.array_equal(a.data, b.data)
    assert np.array_equal(restored.batch_norms[1].running_var, model.batch_norms[1].running_var)
    assert restored.feature_names == model.feature_names
    assert restored.target_mean == 150.3

    graph = path_graph(6)
    x = Matrix(rng.normal(size=(6, 3)))
    assert np.array_equal(forward(x, graph, model).data, forward(x, graph, restored).data)


def test_load_checkpoint_rejects_bad_files(temp_dir):
    """Test wrong versions, broken JSON and missing fields"""
    path = os.path.join(temp_dir, 'model.json')
    save_checkpoint(init_params(ModelConfig(input_dim=2, hidden_channels=2)), path)
    with open(path, 'r', encoding='utf-8') as f:
        payload = json.load(f)

    payload['format_version'] = 2
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f)
    with pytest.raises(InputError):
        load_checkpoint(path)

    payload['format_version'] = 1
    del payload['layers']
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f)
    with pytest.raises(InputError):
        load_checkpoint(path)

    with open(path, 'w', encoding='utf-8') as f:
        f.write('{not json')
    with pytest.raises(InputError):
        load_checkpoint(path)

    with pytest.raises(InputError):
        load_checkpoint(os.path.join(temp_dir, 'missing.json'))


def test_check_feature_names():
    """Test column mismatch detection"""
    model = init_params(ModelConfig(input_dim=2, hidden_channels=2))
    model.feature_names = ('a', 'b')
    check_feature_names(model, ['a', 'b'])
    with pytest.raises(ShapeError):
        check_feature_names(model, ['b', 'a'])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
