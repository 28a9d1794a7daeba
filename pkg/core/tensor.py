"""
Tensor Tape
Dense float64 matrices with a reverse-mode gradient tape for the operations the model needs
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import GradientCheckError, InputError, ShapeError

logger = logging.getLogger(__name__)


class Matrix:
    """A 2-D float64 array; parameters are Matrices registered on a Tape"""
    __slots__ = ('data', 'name')

    def __init__(self, data, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"Matrix needs positive rows and columns, got shape {arr.shape}")
        self.data = arr
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Matrix":
        obj = cls.__new__(cls)
        obj.data = arr
        obj.name = None
        return obj

    @classmethod
    def zeros(cls, rows: int, cols: int, name: Optional[str] = None) -> "Matrix":
        return cls(np.zeros((rows, cols)), name=name)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 matrix, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Matrix{label}({self.rows}x{self.cols})"


@dataclass
class _Record:
    inputs: Tuple[Matrix, ...]
    output: Matrix
    backward: Callable[[np.ndarray], Tuple[np.ndarray, ...]]


class Tape:
    """Ordered record of operations since creation plus the registered parameters"""

    def __init__(self):
        self.records: List[_Record] = []
        self.parameters: List[Matrix] = []
        self._watched: set = set()

    def watch(self, *params: Matrix) -> "Tape":
        for p in params:
            if id(p) not in self._watched:
                self._watched.add(id(p))
                self.parameters.append(p)
        return self

    def record(self, inputs: Sequence[Matrix], output: Matrix,
               backward: Callable[[np.ndarray], Tuple[np.ndarray, ...]]):
        self.records.append(_Record(tuple(inputs), output, backward))

    def __len__(self) -> int:
        return len(self.records)


def _emit(tape: Optional[Tape], inputs: Sequence[Matrix], out: np.ndarray,
          backward: Callable[[np.ndarray], Tuple[np.ndarray, ...]]) -> Matrix:
    result = Matrix._wrap(out)
    if tape is not None:
        tape.record(inputs, result, backward)
    return result


# ======================================================
# === Operations ===
# ======================================================
def matmul(a: Matrix, b: Matrix, tape: Optional[Tape] = None) -> Matrix:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    return _emit(tape, (a, b), a.data @ b.data,
                 lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Matrix, tape: Optional[Tape] = None) -> Matrix:
    return _emit(tape, (a,), a.data.T.copy(), lambda g: (g.T,))


def add(a: Matrix, b: Matrix, tape: Optional[Tape] = None) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return _emit(tape, (a, b), a.data + b.data, lambda g: (g, g))


def subtract(a: Matrix, b: Matrix, tape: Optional[Tape] = None) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError(f"subtract: {a.shape} vs {b.shape}")
    return _emit(tape, (a, b), a.data - b.data, lambda g: (g, -g))


def add_bias(a: Matrix, bias: Matrix, tape: Optional[Tape] = None) -> Matrix:
    """Broadcast a 1 x c row onto every row of a"""
    if bias.rows != 1 or bias.cols != a.cols:
        raise ShapeError(f"add_bias: {a.shape} with bias {bias.shape}")
    return _emit(tape, (a, bias), a.data + bias.data,
                 lambda g: (g, g.sum(axis=0, keepdims=True)))


def concat_cols(a: Matrix, b: Matrix, tape: Optional[Tape] = None) -> Matrix:
    if a.rows != b.rows:
        raise ShapeError(f"concat_cols: {a.shape} and {b.shape} differ in rows")
    split = a.cols
    return _emit(tape, (a, b), np.concatenate([a.data, b.data], axis=1),
                 lambda g: (g[:, :split], g[:, split:]))


def slice_cols(a: Matrix, start: int, stop: int, tape: Optional[Tape] = None) -> Matrix:
    if not 0 <= start < stop <= a.cols:
        raise ShapeError(f"slice_cols: [{start}, {stop}) on {a.cols} columns")

    def _grad(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _emit(tape, (a,), a.data[:, start:stop].copy(), _grad)


def relu(a: Matrix, tape: Optional[Tape] = None) -> Matrix:
    active = a.data > 0
    return _emit(tape, (a,), np.where(active, a.data, 0.0), lambda g: (g * active,))


def multiply_mask(a: Matrix, mask: np.ndarray, tape: Optional[Tape] = None) -> Matrix:
    """Elementwise product with a constant array of the same shape"""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.shape:
        raise ShapeError(f"multiply_mask: {a.shape} with mask {mask.shape}")
    return _emit(tape, (a,), a.data * mask, lambda g: (g * mask,))


def neighbor_mean(h: Matrix, graph, tape: Optional[Tape] = None) -> Matrix:
    """Row i becomes the mean of its neighbors' rows; isolated nodes get zeros"""
    if h.rows != graph.node_count:
        raise ShapeError(f"neighbor_mean: {h.rows} rows for a {graph.node_count}-node graph")
    adjacency = graph.adjacency_matrix
    degree = graph.degrees
    safe = np.where(degree > 0, degree, 1.0)[:, None]
    out = np.asarray(adjacency @ h.data) / safe
    return _emit(tape, (h,), out,
                 lambda g: (np.asarray(adjacency.T @ (g / safe)),))


def take_rows(a: Matrix, indices: Sequence[int], tape: Optional[Tape] = None) -> Matrix:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise InputError("take_rows: empty index set")
    if idx.min() < 0 or idx.max() >= a.rows:
        raise ShapeError(f"take_rows: index out of range for {a.rows} rows")

    def _grad(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _emit(tape, (a,), a.data[idx], _grad)


def mean_square(a: Matrix, tape: Optional[Tape] = None) -> Matrix:
    size = a.data.size
    return _emit(tape, (a,), np.array([[np.mean(a.data ** 2)]]),
                 lambda g: (g[0, 0] * 2.0 * a.data / size,))


def total_sum(a: Matrix, tape: Optional[Tape] = None) -> Matrix:
    return _emit(tape, (a,), np.array([[a.data.sum()]]),
                 lambda g: (np.full_like(a.data, g[0, 0]),))


def batch_norm_train(x: Matrix, gamma: Matrix, beta: Matrix, eps: float = 1e-5,
                     tape: Optional[Tape] = None) -> Tuple[Matrix, np.ndarray, np.ndarray]:
    """Normalize with batch statistics; returns the output, batch mean and biased variance"""
    if gamma.shape != (1, x.cols) or beta.shape != (1, x.cols):
        raise ShapeError(f"batch_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    n = x.rows
    mean = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean) * inv_std
    out = x_hat * gamma.data + beta.data

    def _grad(g):
        d_gamma = (g * x_hat).sum(axis=0, keepdims=True)
        d_beta = g.sum(axis=0, keepdims=True)
        d_hat = g * gamma.data
        d_x = inv_std / n * (n * d_hat - d_hat.sum(axis=0) - x_hat * (d_hat * x_hat).sum(axis=0))
        return d_x, d_gamma, d_beta

    return _emit(tape, (x, gamma, beta), out, _grad), mean, var


def batch_norm_eval(x: Matrix, gamma: Matrix, beta: Matrix, mean: np.ndarray, var: np.ndarray,
                    eps: float = 1e-5, tape: Optional[Tape] = None) -> Matrix:
    """Normalize with fixed running statistics; a per-column affine map"""
    if gamma.shape != (1, x.cols) or beta.shape != (1, x.cols):
        raise ShapeError(f"batch_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    inv_std = 1.0 / np.sqrt(np.asarray(var) + eps)
    x_hat = (x.data - mean) * inv_std
    out = x_hat * gamma.data + beta.data
    return _emit(tape, (x, gamma, beta), out,
                 lambda g: (g * gamma.data * inv_std,
                            (g * x_hat).sum(axis=0, keepdims=True),
                            g.sum(axis=0, keepdims=True)))


# ======================================================
# === Gradients ===
# ======================================================
def backward(tape: Tape, loss: Matrix) -> List[np.ndarray]:
    """Gradients of a 1x1 loss for every registered parameter, in registration order"""
    if loss.shape != (1, 1):
        raise ShapeError(f"Loss must be 1x1, got {loss.shape}")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for record in reversed(tape.records):
        upstream = grads.get(id(record.output))
        if upstream is None:
            continue
        for matrix, grad in zip(record.inputs, record.backward(upstream)):
            key = id(matrix)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad

    return [
        np.array(grads[id(p)], dtype=np.float64) if id(p) in grads else np.zeros_like(p.data)
        for p in tape.parameters
    ]


def _loss_value(loss_fn: Callable[[], Tuple[Tape, Matrix]]) -> float:
    value = loss_fn()[1].item()
    if not np.isfinite(value):
        raise GradientCheckError(f"Loss evaluated to {value} during gradient check")
    return value


def finite_diff_check(loss_fn: Callable[[], Tuple[Tape, Matrix]], params: Sequence[Matrix],
                      eps: float = 1e-5) -> float:
    """Largest relative error between tape gradients and central differences"""
    tape, loss = loss_fn()
    if not np.isfinite(loss.item()):
        raise GradientCheckError(f"Loss evaluated to {loss.item()} during gradient check")
    analytic = {id(p): g for p, g in zip(tape.parameters, backward(tape, loss))}

    worst = 0.0
    for param in params:
        grad = analytic.get(id(param), np.zeros_like(param.data))
        for idx in np.ndindex(param.data.shape):
            original = param.data[idx]
            param.data[idx] = original + eps
            plus = _loss_value(loss_fn)
            param.data[idx] = original - eps
            minus = _loss_value(loss_fn)
            param.data[idx] = original

            numeric = (plus - minus) / (2.0 * eps)
            a = float(grad[idx])
            error = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, error)

    logger.debug(f"Finite-difference check over {len(params)} parameters: max relative error {worst:.3e}")
    return worst
