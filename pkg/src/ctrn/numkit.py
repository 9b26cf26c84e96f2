"""Dense float64 kernels with hand-written backward passes.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Sequence
tensors are laid out time-major within a sample: ``(L, m)`` for a single
sequence or ``(B, L, m)`` for a batch.  Every forward op that has a backward
returns ``(output, record)``; the record holds exactly what the backward needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, StateError

DTYPE = np.float64


def as_tensor(x) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim > 3:
        raise ShapeError(f"tensors have at most 3 axes, got shape {arr.shape}")
    return arr


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
    return x


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


# --- elementwise -----------------------------------------------------------

def sigmoid(x):
    # exp(-log(1 + e^-x)) stays accurate in both tails without overflow
    x = np.asarray(x, dtype=DTYPE)
    return np.exp(-np.logaddexp(0.0, -x))


def tanh(x):
    return np.tanh(np.asarray(x, dtype=DTYPE))


def sigmoid_backward(out: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Gradient through sigmoid given its *output*."""
    return grad * out * (1.0 - out)


def tanh_backward(out: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return grad * (1.0 - out * out)


def _same_shape(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def add(a, b):
    a, b = _same_shape(a, b)
    return a + b


def sub(a, b):
    a, b = _same_shape(a, b)
    return a - b


def hadamard(a, b):
    a, b = _same_shape(a, b)
    return a * b


def scale(a, c: float):
    return as_tensor(a) * float(c)


def concat(*parts, axis: int = -1):
    parts = [as_tensor(p) for p in parts]
    try:
        return np.concatenate(parts, axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


# --- dense -----------------------------------------------------------------

@dataclass
class DenseRecord:
    x: np.ndarray
    weight: np.ndarray
    has_bias: bool


def dense(x, weight, bias=None):
    """``x @ weight + bias`` over the last axis of ``x``."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense input width {x.shape[-1]} != {weight.shape[0]}")
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out, DenseRecord(x, weight, bias is not None)


def dense_backward(record: DenseRecord | None, grad: np.ndarray):
    """Returns ``(grad_x, grad_weight, grad_bias)``; grad_bias is None without bias."""
    if record is None:
        raise StateError("dense backward called without a forward record")
    x2 = record.x.reshape(-1, record.x.shape[-1])
    g2 = grad.reshape(-1, grad.shape[-1])
    gw = x2.T @ g2
    gb = g2.sum(axis=0) if record.has_bias else None
    gx = grad @ record.weight.T
    return gx, gw, gb


# --- causal temporal convolution -----------------------------------------

@dataclass
class ConvBank:
    """Filter bank of width ``k`` mapping ``m`` input to ``d`` output channels.

    ``weights[j]`` is a ``(d, m)`` matrix applied to the input ``k-1-j`` steps
    in the past.
    """

    weights: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        if self.weights.ndim != 3 or self.weights.shape[0] < 1:
            raise ShapeError(f"conv weights must be (k, d, m), got {self.weights.shape}")
        if self.bias is not None:
            self.bias = as_tensor(self.bias)
            if self.bias.shape != (self.weights.shape[1],):
                raise ShapeError("conv bias must have length d")

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    @property
    def m(self) -> int:
        return self.weights.shape[2]

    @classmethod
    def zeros(cls, k: int, d: int, m: int, bias: bool = True) -> "ConvBank":
        return cls(np.zeros((k, d, m)), np.zeros(d) if bias else None)


@dataclass
class ConvRecord:
    cols: np.ndarray  # (..., L, k*m) window matrix
    bank: ConvBank
    in_shape: tuple = field(default=())


def _windows(x: np.ndarray, k: int) -> np.ndarray:
    L = x.shape[-2]
    pad = [(0, 0)] * x.ndim
    pad[-2] = (k - 1, 0)
    xp = np.pad(x, pad)
    return np.concatenate([xp[..., j:j + L, :] for j in range(k)], axis=-1)


def conv1d(x, bank: ConvBank, padding: str = "causal"):
    """Causal 1D convolution along the time axis (``-2``) of ``x``.

    ``out[t] = sum_j weights[j] @ x[t-k+1+j] + bias`` with indices before the
    sequence start read as zero, so the output has the input's length.
    """
    if padding != "causal":
        raise ValueError(f"unsupported padding {padding!r}")
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeError(f"conv1d expects (..., L, m) with L >= 1, got {x.shape}")
    if x.shape[-1] != bank.m:
        raise ShapeError(f"input width {x.shape[-1]} does not match bank m={bank.m}")
    k, d, m = bank.weights.shape
    cols = _windows(x, k)
    wmat = bank.weights.transpose(0, 2, 1).reshape(k * m, d)
    out = cols @ wmat
    if bank.bias is not None:
        out += bank.bias
    return out, ConvRecord(cols, bank, x.shape)


def conv1d_backward(record: ConvRecord | None, grad: np.ndarray):
    """Returns ``(grad_x, ConvBank of weight/bias gradients)``."""
    if record is None:
        raise StateError("conv1d backward called without a forward record")
    bank = record.bank
    k, d, m = bank.weights.shape
    L = record.in_shape[-2]
    g2 = grad.reshape(-1, d)
    gw = (record.cols.reshape(-1, k * m).T @ g2).reshape(k, m, d).transpose(0, 2, 1)
    gb = g2.sum(axis=0) if bank.bias is not None else None

    wmat = bank.weights.transpose(0, 2, 1).reshape(k * m, d)
    gcols = (grad @ wmat.T).reshape(grad.shape[:-1] + (k, m))
    padded = np.zeros(record.in_shape[:-2] + (L + k - 1, m))
    for j in range(k):
        padded[..., j:j + L, :] += gcols[..., j, :]
    return padded[..., k - 1:, :], ConvBank(np.ascontiguousarray(gw), gb)


# --- tape ------------------------------------------------------------------

class Tape:
    """Named store of forward records consumed by the matching backwards."""

    def __init__(self):
        self._records: dict[str, object] = {}

    def __setitem__(self, name: str, record) -> None:
        self._records[name] = record

    def __getitem__(self, name: str):
        try:
            return self._records[name]
        except KeyError:
            raise StateError(f"no forward record named {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._records

    def get(self, name, default=None):
        return self._records.get(name, default)
