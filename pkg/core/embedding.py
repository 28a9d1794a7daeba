"""
Embeddings
Hidden-layer node embeddings, exact t-SNE projection and prediction exports
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from core.dataset import Dataset, SplitAssignment
from core.errors import ConfigError, InputError, PerplexityError
from core.model import AgriGnnModel, check_feature_names, hidden_representations
from core.tensor import Matrix
from core.trainer import predict

logger = logging.getLogger(__name__)

_MIN_PROBABILITY = 1e-12


@dataclass
class TsneResult:
    coords: np.ndarray
    kl: float
    kl_history: List[float] = field(default_factory=list, repr=False)


def compute_embeddings(model: AgriGnnModel, ds: Dataset, graph, layer: int = 3) -> np.ndarray:
    """n x hidden eval-mode activations of layer 1, 2 or 3"""
    if layer not in (1, 2, 3):
        raise ConfigError(f"Embedding layer must be 1, 2 or 3, got {layer}")
    check_feature_names(model, ds.feature_names)
    x = Matrix(model.scale_features(ds.feature_matrix))
    return hidden_representations(x, graph, model)[layer - 1]


def export_embeddings(model: AgriGnnModel, ds: Dataset, graph, path: str, layer: int = 3) -> pd.DataFrame:
    emb = compute_embeddings(model, ds, graph, layer)
    frame = pd.DataFrame(emb, columns=[f"h{j}" for j in range(emb.shape[1])])
    frame.insert(0, 'plot_id', ds.plot_ids)
    frame.to_csv(path, index=False, lineterminator='\n')
    logger.info(f"Wrote layer-{layer} embeddings ({emb.shape[0]} x {emb.shape[1]}) to {path}")
    return frame


# ======================================================
# === t-SNE ===
# ======================================================
def _row_entropy(distances: np.ndarray, beta: float):
    shifted = distances - distances.min()
    weights = np.exp(-shifted * beta)
    total = weights.sum()
    entropy = np.log(total) + beta * np.sum(shifted * weights) / total
    return entropy, weights / total


def _conditional_probabilities(sq_dist: np.ndarray, perplexity: float,
                               tol: float = 1e-5, max_tries: int = 100) -> np.ndarray:
    """Binary search on each row's precision until its entropy matches log(perplexity)"""
    n = sq_dist.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        others = np.concatenate([np.arange(i), np.arange(i + 1, n)])
        row = sq_dist[i, others]
        if np.ptp(row) == 0:
            P[i, others] = 1.0 / (n - 1)
            continue

        beta, lo, hi = 1.0, -np.inf, np.inf
        entropy, probs = _row_entropy(row, beta)
        for _ in range(max_tries):
            diff = entropy - target
            if abs(diff) <= tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == -np.inf else (beta + lo) / 2.0
            entropy, probs = _row_entropy(row, beta)
        if abs(entropy - target) > tol or not np.isfinite(probs).all():
            raise PerplexityError(f"Perplexity {perplexity} not reachable for point {i}")
        P[i, others] = probs
    return P


def tsne_embed(embeddings, perplexity: float = 30.0, iterations: int = 1000, seed: int = 0, *,
               learning_rate: float = 200.0, exaggeration: float = 12.0,
               exaggeration_iters: int = 250, initial_momentum: float = 0.5,
               final_momentum: float = 0.8, min_gain: float = 0.01) -> TsneResult:
    """Exact t-SNE to two dimensions with early exaggeration, momentum and adaptive gains"""
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2:
        raise InputError(f"Embeddings must be 2-D, got shape {X.shape}")
    n = X.shape[0]
    if n < 5:
        raise InputError(f"t-SNE needs at least 5 points, got {n}")
    if not perplexity > 0.0:
        raise PerplexityError(f"Perplexity must be positive, got {perplexity}")
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}")
    limit = (n - 1) / 3.0
    if perplexity > limit:
        logger.warning(f"Perplexity {perplexity} too large for {n} points; using {limit:.4g}")
        perplexity = limit

    P = _conditional_probabilities(cdist(X, X, 'sqeuclidean'), perplexity)
    P = P + P.T
    P = np.maximum(P / P.sum(), _MIN_PROBABILITY)

    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)

    def _affinities(Y):
        num = 1.0 / (1.0 + cdist(Y, Y, 'sqeuclidean'))
        np.fill_diagonal(num, 0.0)
        return num, np.maximum(num / num.sum(), _MIN_PROBABILITY)

    history: List[float] = []
    for it in range(iterations):
        early = it < exaggeration_iters
        if it == exaggeration_iters:
            # Optimizer state restarts once the exaggeration is lifted
            velocity = np.zeros_like(Y)
            gains = np.ones_like(Y)
        num, Q = _affinities(Y)
        history.append(float(np.sum(P * np.log(P / Q))))

        W = ((exaggeration if early else 1.0) * P - Q) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)

        same_sign = (grad > 0) == (velocity > 0)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, min_gain)
        momentum = initial_momentum if early else final_momentum
        velocity = momentum * velocity - learning_rate * gains * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)

        if (it + 1) % 250 == 0:
            logger.debug(f"t-SNE iteration {it + 1}: KL {history[-1]:.4f}")

    _, Q = _affinities(Y)
    kl = float(np.sum(P * np.log(P / Q)))
    logger.info(f"t-SNE on {n} points finished with KL {kl:.4f}")
    return TsneResult(coords=Y, kl=kl, kl_history=history)


def write_tsne_csv(ds: Dataset, result: TsneResult, path: str, predictions: Optional[np.ndarray] = None):
    frame = pd.DataFrame({
        'plot_id': ds.plot_ids,
        'x': result.coords[:, 0],
        'y': result.coords[:, 1],
        'yield': ds.target,
    })
    if predictions is not None:
        frame['predicted'] = predictions
    frame.to_csv(path, index=False, lineterminator='\n')
    logger.info(f"Wrote t-SNE coordinates to {path}")


def export_actual_vs_predicted(model: AgriGnnModel, ds: Dataset, graph, split: SplitAssignment,
                               path: str) -> pd.DataFrame:
    """Labeled plots with their observed and predicted yield and split role"""
    pred = predict(model, ds, graph)
    target = ds.target
    roles = {i: 'train' for i in split.train_indices}
    roles.update({i: 'test' for i in split.test_indices})
    rows = [
        {'plot_id': ds.records[i].plot_id, 'actual': target[i], 'predicted': pred[i], 'role': roles[i]}
        for i in sorted(roles)
    ]
    frame = pd.DataFrame(rows, columns=['plot_id', 'actual', 'predicted', 'role'])
    frame.to_csv(path, index=False, lineterminator='\n')
    logger.info(f"Wrote {len(frame)} actual/predicted rows to {path}")
    return frame
