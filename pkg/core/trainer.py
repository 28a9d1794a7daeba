"""
Trainer
Masked MSE loss, Adam, the transductive training loop, metrics and the hyperparameter grid
"""
import itertools
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import mean_absolute_error, mean_squared_error, r2_score
from sklearn.preprocessing import StandardScaler

from core.dataset import Dataset, SplitAssignment, split_train_test
from core.errors import ConfigError, InputError, MetricError, NonFiniteLossError, ShapeError
from core.model import (
    FINAL_ACTIVATIONS,
    AgriGnnModel,
    ModelConfig,
    check_feature_names,
    forward,
    init_params,
)
from core.tensor import Matrix, Tape, backward, mean_square, subtract, take_rows

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    epochs: int = 500
    hidden_channels: int = 32
    dropout_rate: float = 0.3
    seed: int = 0
    split_fraction: float = 0.8
    final_activation: str = "identity"
    log_every: int = 50

    def __post_init__(self):
        # lr = 0 is accepted so a run can be checked for a constant loss curve
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.hidden_channels < 1:
            raise ConfigError(f"hidden_channels must be >= 1, got {self.hidden_channels}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate {self.dropout_rate} outside [0, 1)")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError(f"split_fraction {self.split_fraction} outside (0, 1)")
        if self.final_activation not in FINAL_ACTIVATIONS:
            raise ConfigError(f"final_activation must be one of {FINAL_ACTIVATIONS}")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_parameters(cls, params: Sequence[Matrix]) -> "AdamState":
        return cls(m=[np.zeros_like(p.data) for p in params], v=[np.zeros_like(p.data) for p in params])


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mae: float
    r2: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class EpochLoss:
    epoch: int
    train_mse: float
    test_mse: float


@dataclass
class TrainResult:
    model: AgriGnnModel
    split: SplitAssignment
    history: List[EpochLoss]
    test_metrics: Metrics
    full_metrics: Metrics
    predictions: np.ndarray

    @property
    def loss_history(self) -> List[float]:
        return [e.train_mse for e in self.history]

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(e) for e in self.history], columns=['epoch', 'train_mse', 'test_mse'])


# ======================================================
# === Loss and optimizer ===
# ======================================================
def mse_loss(pred: Matrix, target, mask: Sequence[int], tape: Optional[Tape] = None) -> Matrix:
    """Mean squared error over the masked rows only"""
    idx = np.asarray(mask, dtype=np.int64)
    if idx.size == 0:
        raise InputError("Loss mask is empty")
    target = np.asarray(target, dtype=np.float64).reshape(-1, 1)
    if target.shape[0] != pred.rows:
        raise ShapeError(f"Target has {target.shape[0]} rows, prediction has {pred.rows}")
    selected = take_rows(pred, idx, tape)
    return mean_square(subtract(selected, Matrix(target[idx]), tape), tape)


def adam_step(params: Sequence[Matrix], grads: Sequence[np.ndarray], state: AdamState,
              learning_rate: float) -> Tuple[Sequence[Matrix], AdamState]:
    """One bias-corrected Adam update, applied in place"""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("Parameter, gradient and optimizer state counts differ")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for k, (param, grad) in enumerate(zip(params, grads)):
        if grad.shape != param.shape:
            raise ShapeError(f"Gradient {grad.shape} does not match parameter {param.shape}")
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * grad
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * grad * grad
        m_hat = state.m[k] / correction1
        v_hat = state.v[k] / correction2
        param.data -= learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ======================================================
# === Metrics ===
# ======================================================
def evaluate(pred, target, mask: Sequence[int]) -> Metrics:
    """RMSE, MAE and R^2 on the masked rows, in yield units"""
    idx = np.asarray(mask, dtype=np.int64)
    if idx.size == 0:
        raise InputError("Evaluation mask is empty")
    pred = np.asarray(pred.data if isinstance(pred, Matrix) else pred, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    p, y = pred[idx], target[idx]
    if not np.isfinite(y).all():
        raise InputError("Evaluation targets contain missing values")
    if np.all(y == y[0]):
        raise MetricError("R^2 is undefined: target has zero variance on the evaluated rows")
    return Metrics(
        rmse=float(np.sqrt(mean_squared_error(y, p))),
        mae=float(mean_absolute_error(y, p)),
        r2=float(r2_score(y, p)),
    )


# ======================================================
# === Training ===
# ======================================================
def prepare_model(ds: Dataset, config: TrainConfig, split: SplitAssignment) -> AgriGnnModel:
    """Fresh parameters plus feature/target standardization fitted on the training rows"""
    x = ds.feature_matrix
    y = ds.target
    train_idx = np.asarray(split.train_indices, dtype=np.int64)

    model = init_params(
        ModelConfig(
            input_dim=x.shape[1],
            hidden_channels=config.hidden_channels,
            dropout_rate=config.dropout_rate,
            final_activation=config.final_activation,
        ),
        seed=config.seed,
    )
    scaler = StandardScaler().fit(x[train_idx])
    model.feature_mean = scaler.mean_.astype(np.float64)
    model.feature_scale = scaler.scale_.astype(np.float64)
    model.target_mean = float(np.mean(y[train_idx]))
    spread = float(np.std(y[train_idx]))
    model.target_scale = spread if spread > 0 else 1.0
    model.feature_names = tuple(ds.feature_names)
    return model


def predict(model: AgriGnnModel, ds: Dataset, graph) -> np.ndarray:
    """Eval-mode yield predictions for every plot, in yield units"""
    check_feature_names(model, ds.feature_names)
    x = Matrix(model.scale_features(ds.feature_matrix))
    return model.unscale_target(forward(x, graph, model, training=False).data[:, 0])


def train(ds: Dataset, graph, config: TrainConfig = TrainConfig(),
          split: Optional[SplitAssignment] = None) -> TrainResult:
    """Full-batch transductive training; the loss only sees labeled training plots"""
    if graph.node_count != len(ds):
        raise ShapeError(f"Graph has {graph.node_count} nodes, dataset has {len(ds)} plots")
    split = split or split_train_test(ds, config.split_fraction, config.seed)
    train_idx = np.asarray(split.train_indices, dtype=np.int64)
    test_idx = np.asarray(split.test_indices, dtype=np.int64)

    model = prepare_model(ds, config, split)
    x = Matrix(model.scale_features(ds.feature_matrix))
    y = model.scale_target(ds.target)
    params = model.parameters()
    state = AdamState.for_parameters(params)
    dropout_rng = np.random.default_rng((config.seed, 1))
    scale2 = model.target_scale ** 2

    logger.info(f"Training {len(params)} parameter tensors for {config.epochs} epochs "
                f"(lr={config.learning_rate}, hidden={config.hidden_channels}, "
                f"dropout={config.dropout_rate}) on {train_idx.size} train / {test_idx.size} test plots")

    history: List[EpochLoss] = []
    for epoch in range(1, config.epochs + 1):
        tape = Tape().watch(*params)
        pred = forward(x, graph, model, training=True, rng=dropout_rng, tape=tape)
        loss = mse_loss(pred, y, train_idx, tape)
        value = loss.item()
        if not np.isfinite(value):
            raise NonFiniteLossError(epoch, value)

        grads = backward(tape, loss)
        adam_step(params, grads, state, config.learning_rate)

        if test_idx.size:
            eval_pred = forward(x, graph, model, training=False).data[:, 0]
            test_mse = float(np.mean((eval_pred[test_idx] - y[test_idx]) ** 2)) * scale2
        else:
            test_mse = float('nan')
        history.append(EpochLoss(epoch, value * scale2, test_mse))

        if epoch == 1 or epoch % config.log_every == 0 or epoch == config.epochs:
            logger.info(f"Epoch {epoch:4d}: train MSE {value * scale2:.4f}, test MSE {test_mse:.4f}")

    predictions = predict(model, ds, graph)
    target = ds.target
    test_metrics = evaluate(predictions, target, test_idx)
    full_metrics = evaluate(predictions, target, ds.labeled_indices)
    logger.info(f"Test RMSE {test_metrics.rmse:.3f}, MAE {test_metrics.mae:.3f}, R2 {test_metrics.r2:.4f}")

    return TrainResult(
        model=model,
        split=split,
        history=history,
        test_metrics=test_metrics,
        full_metrics=full_metrics,
        predictions=predictions,
    )


# ======================================================
# === Hyperparameter grid ===
# ======================================================
@dataclass(frozen=True)
class HyperGrid:
    learning_rates: Tuple[float, ...] = (0.001, 0.005, 0.01, 0.02)
    hidden_channels: Tuple[int, ...] = (32, 64, 128)
    dropout_rates: Tuple[float, ...] = (0.3, 0.5, 0.7)

    def __post_init__(self):
        for name in ('learning_rates', 'hidden_channels', 'dropout_rates'):
            if not getattr(self, name):
                raise ConfigError(f"Hyperparameter grid axis '{name}' is empty")

    def cells(self) -> List[Tuple[float, int, float]]:
        return list(itertools.product(self.learning_rates, self.hidden_channels, self.dropout_rates))


@dataclass
class GridSearchResult:
    best_config: TrainConfig
    table: pd.DataFrame = field(repr=False)

    @property
    def best_cell(self) -> int:
        return int(self.table['rmse'].idxmin())


def hyper_grid_search(ds: Dataset, graph, grid: HyperGrid = HyperGrid(),
                      base: TrainConfig = TrainConfig()) -> GridSearchResult:
    """Train one model per grid cell on a shared split; best cell by test RMSE, first on ties"""
    split = split_train_test(ds, base.split_fraction, base.seed)
    rows = []
    configs = []
    cells = grid.cells()
    for cell, (lr, hidden, rate) in enumerate(cells):
        config = replace(base, learning_rate=lr, hidden_channels=hidden, dropout_rate=rate)
        logger.info(f"Grid cell {cell + 1}/{len(cells)}: lr={lr}, hidden={hidden}, dropout={rate}")
        result = train(ds, graph, config, split)
        configs.append(config)
        rows.append({
            'cell': cell,
            'learning_rate': lr,
            'hidden_channels': hidden,
            'dropout_rate': rate,
            **result.test_metrics.to_dict(),
        })

    table = pd.DataFrame(rows, columns=['cell', 'learning_rate', 'hidden_channels', 'dropout_rate',
                                        'rmse', 'mae', 'r2'])
    best = int(table['rmse'].idxmin())
    logger.info(f"Best grid cell {best}: RMSE {table.loc[best, 'rmse']:.3f}")
    return GridSearchResult(best_config=configs[best], table=table)
