"""
Agri-GNN Model
Four-layer GraphSAGE regressor: parameters, layer functions, forward pass and checkpoints
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, InputError, ShapeError
from core.tensor import (
    Matrix,
    Tape,
    add_bias,
    batch_norm_eval,
    batch_norm_train,
    concat_cols,
    matmul,
    multiply_mask,
    neighbor_mean,
    relu,
    transpose,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
FINAL_ACTIVATIONS = ("identity", "relu")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_channels: int = 32
    dropout_rate: float = 0.3
    final_activation: str = "identity"
    num_layers: int = 4
    aggregator: str = "mean"
    batch_norm_momentum: float = 0.1
    batch_norm_eps: float = 1e-5

    def __post_init__(self):
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.hidden_channels < 1:
            raise ConfigError(f"hidden_channels must be >= 1, got {self.hidden_channels}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate {self.dropout_rate} outside [0, 1)")
        if self.final_activation not in FINAL_ACTIVATIONS:
            raise ConfigError(f"final_activation must be one of {FINAL_ACTIVATIONS}")
        if self.num_layers != 4:
            raise ConfigError("Only the four-layer architecture is supported")
        if self.aggregator != "mean":
            raise ConfigError("Only mean neighbor aggregation is supported")


@dataclass
class BatchNormState:
    gamma: Matrix
    beta: Matrix
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, width: int, momentum: float, eps: float) -> "BatchNormState":
        return cls(
            gamma=Matrix(np.ones((1, width))),
            beta=Matrix(np.zeros((1, width))),
            running_mean=np.zeros(width),
            running_var=np.ones(width),
            momentum=momentum,
            eps=eps,
        )


@dataclass
class AgriGnnModel:
    """Weights are stored out x in and applied as x @ W.T"""
    config: ModelConfig
    seed: int
    weights: List[Matrix]
    biases: List[Matrix]
    batch_norms: List[BatchNormState]
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    target_mean: float = 0.0
    target_scale: float = 1.0
    feature_names: Tuple[str, ...] = field(default_factory=tuple)

    def parameters(self) -> List[Matrix]:
        params: List[Matrix] = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        for bn in self.batch_norms:
            params.extend([bn.gamma, bn.beta])
        return params

    def scale_features(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ShapeError(f"Expected {self.config.input_dim} features, got shape {x.shape}")
        return (x - self.feature_mean) / self.feature_scale

    def scale_target(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_scale

    def unscale_target(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.target_scale + self.target_mean


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> Matrix:
    bound = np.sqrt(6.0 / (rows + cols))
    return Matrix(rng.uniform(-bound, bound, size=(rows, cols)))


def init_params(config: ModelConfig, seed: int = 0) -> AgriGnnModel:
    """Glorot-uniform weights, zero biases, identity batch norms"""
    rng = np.random.default_rng(seed)
    h, p = config.hidden_channels, config.input_dim
    shapes = [(h, p), (h, 2 * h), (h, 2 * h), (1, 2 * h)]
    weights = [_glorot(rng, rows, cols) for rows, cols in shapes]
    biases = [Matrix(np.zeros((1, rows))) for rows, _ in shapes]
    batch_norms = [
        BatchNormState.fresh(h, config.batch_norm_momentum, config.batch_norm_eps) for _ in range(3)
    ]
    for i, w in enumerate(weights, start=1):
        w.name = f"W{i}"
    return AgriGnnModel(
        config=config,
        seed=seed,
        weights=weights,
        biases=biases,
        batch_norms=batch_norms,
        feature_mean=np.zeros(p),
        feature_scale=np.ones(p),
    )


# ======================================================
# === Layers ===
# ======================================================
def _linear(x: Matrix, weight: Matrix, bias: Matrix, tape: Optional[Tape]) -> Matrix:
    return add_bias(matmul(x, transpose(weight, tape), tape), bias, tape)


def input_layer(x: Matrix, model: AgriGnnModel, tape: Optional[Tape] = None) -> Matrix:
    if x.cols != model.config.input_dim:
        raise ShapeError(f"Input has {x.cols} features, model expects {model.config.input_dim}")
    return relu(_linear(x, model.weights[0], model.biases[0], tape), tape)


def batchnorm(h: Matrix, state: BatchNormState, training: bool,
              tape: Optional[Tape] = None) -> Matrix:
    """Batch statistics while training (updating running stats), running stats otherwise"""
    if not training:
        return batch_norm_eval(h, state.gamma, state.beta, state.running_mean, state.running_var,
                               state.eps, tape)
    n = h.rows
    if n < 2:
        raise InputError("Batch norm in training mode needs at least 2 rows")
    out, mean, var = batch_norm_train(h, state.gamma, state.beta, state.eps, tape)
    m = state.momentum
    state.running_mean = (1.0 - m) * state.running_mean + m * mean
    state.running_var = (1.0 - m) * state.running_var + m * var * n / (n - 1)
    return out


def dropout(h: Matrix, rate: float, training: bool, rng: Optional[np.random.Generator] = None,
            tape: Optional[Tape] = None) -> Matrix:
    """Inverted dropout: survivors are scaled by 1 / (1 - rate)"""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"Dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return h
    if rng is None:
        rng = np.random.default_rng()
    keep = (rng.random(h.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return multiply_mask(h, keep, tape)


def _aggregate(h: Matrix, graph, weight: Matrix, bias: Matrix, tape: Optional[Tape]) -> Matrix:
    combined = concat_cols(h, neighbor_mean(h, graph, tape), tape)
    return _linear(combined, weight, bias, tape)


def sage_block(h: Matrix, graph, layer: int, model: AgriGnnModel, training: bool = False,
               rng: Optional[np.random.Generator] = None, tape: Optional[Tape] = None) -> Matrix:
    """Mean-aggregation layer 2 or 3, followed by batch norm and dropout"""
    if layer not in (2, 3):
        raise ConfigError(f"sage_block layer must be 2 or 3, got {layer}")
    idx = layer - 1
    out = relu(_aggregate(h, graph, model.weights[idx], model.biases[idx], tape), tape)
    out = batchnorm(out, model.batch_norms[idx], training, tape)
    return dropout(out, model.config.dropout_rate, training, rng, tape)


def output_layer(h: Matrix, graph, model: AgriGnnModel, tape: Optional[Tape] = None) -> Matrix:
    out = _aggregate(h, graph, model.weights[3], model.biases[3], tape)
    if model.config.final_activation == "relu":
        out = relu(out, tape)
    return out


def _hidden_states(x: Matrix, graph, model: AgriGnnModel, training: bool,
                   rng: Optional[np.random.Generator], tape: Optional[Tape]) -> List[Matrix]:
    if x.rows != graph.node_count:
        raise ShapeError(f"{x.rows} feature rows for a {graph.node_count}-node graph")
    if training and rng is None:
        rng = np.random.default_rng(model.seed)
    h1 = input_layer(x, model, tape)
    h1 = batchnorm(h1, model.batch_norms[0], training, tape)
    h1 = dropout(h1, model.config.dropout_rate, training, rng, tape)
    h2 = sage_block(h1, graph, 2, model, training, rng, tape)
    h3 = sage_block(h2, graph, 3, model, training, rng, tape)
    return [h1, h2, h3]


def forward(x: Matrix, graph, model: AgriGnnModel, training: bool = False,
            rng: Optional[np.random.Generator] = None, tape: Optional[Tape] = None) -> Matrix:
    """n x 1 predictions in the model's standardized target scale"""
    hidden = _hidden_states(x, graph, model, training, rng, tape)
    return output_layer(hidden[-1], graph, model, tape)


def hidden_representations(x: Matrix, graph, model: AgriGnnModel) -> List[np.ndarray]:
    """Eval-mode outputs of layers 1-3"""
    return [h.data.copy() for h in _hidden_states(x, graph, model, False, None, None)]


# ======================================================
# === Checkpoints ===
# ======================================================
def _pack(matrix: Matrix) -> dict:
    return {'shape': list(matrix.shape), 'data': matrix.data.reshape(-1).tolist()}


def _unpack(payload: dict) -> Matrix:
    return Matrix(np.array(payload['data'], dtype=np.float64).reshape(payload['shape']))


def save_checkpoint(model: AgriGnnModel, path: str):
    """JSON checkpoint; floats are written with repr and restore bit-exactly"""
    payload = {
        'format_version': CHECKPOINT_FORMAT_VERSION,
        'seed': model.seed,
        'config': asdict(model.config),
        'layers': [
            {'weight': _pack(w), 'bias': _pack(b)} for w, b in zip(model.weights, model.biases)
        ],
        'batch_norm': [
            {
                'gamma': _pack(bn.gamma),
                'beta': _pack(bn.beta),
                'running_mean': bn.running_mean.tolist(),
                'running_var': bn.running_var.tolist(),
                'momentum': bn.momentum,
                'eps': bn.eps,
            }
            for bn in model.batch_norms
        ],
        'normalization': {
            'feature_mean': model.feature_mean.tolist(),
            'feature_scale': model.feature_scale.tolist(),
            'target_mean': model.target_mean,
            'target_scale': model.target_scale,
        },
        'feature_names': list(model.feature_names),
    }
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=1)
        f.write('\n')
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(path: str) -> AgriGnnModel:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"Cannot read checkpoint {path}: {e}") from e

    version = payload.get('format_version')
    if version != CHECKPOINT_FORMAT_VERSION:
        raise InputError(f"Unsupported checkpoint format_version {version!r}")

    try:
        config = ModelConfig(**payload['config'])
        norm = payload['normalization']
        model = AgriGnnModel(
            config=config,
            seed=int(payload['seed']),
            weights=[_unpack(layer['weight']) for layer in payload['layers']],
            biases=[_unpack(layer['bias']) for layer in payload['layers']],
            batch_norms=[
                BatchNormState(
                    gamma=_unpack(bn['gamma']),
                    beta=_unpack(bn['beta']),
                    running_mean=np.array(bn['running_mean'], dtype=np.float64),
                    running_var=np.array(bn['running_var'], dtype=np.float64),
                    momentum=float(bn['momentum']),
                    eps=float(bn['eps']),
                )
                for bn in payload['batch_norm']
            ],
            feature_mean=np.array(norm['feature_mean'], dtype=np.float64),
            feature_scale=np.array(norm['feature_scale'], dtype=np.float64),
            target_mean=float(norm['target_mean']),
            target_scale=float(norm['target_scale']),
            feature_names=tuple(payload.get('feature_names', ())),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"Malformed checkpoint {path}: {e}") from e

    logger.info(f"Loaded checkpoint from {path}")
    return model


def parameter_count(model: AgriGnnModel) -> int:
    return int(sum(p.data.size for p in model.parameters()))


def check_feature_names(model: AgriGnnModel, names: Sequence[str]):
    """Reject datasets whose encoded columns differ from the training columns"""
    if model.feature_names and tuple(names) != model.feature_names:
        raise ShapeError("Dataset feature columns differ from the columns the model was trained on")
