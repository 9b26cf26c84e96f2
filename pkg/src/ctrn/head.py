"""Pooling, dense layers, two-class softmax scoring and the training loss."""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .errors import EmptySequenceError, LabelError, ShapeError, StateError

POSITIVE = 1
CLIP_EPS = 1e-12
N_OVERLAP_FEATURES = 4


@dataclass
class LossReport:
    data_loss: float
    reg_loss: float

    @property
    def total(self) -> float:
        return self.data_loss + self.reg_loss


# --- pooling -------------------------------------------------------------

@dataclass
class PoolMeanRecord:
    weights: np.ndarray  # mask / count, broadcastable to the trace


def mean_pool(trace, mask=None):
    """Average of ``trace`` over the unmasked steps of axis ``-2``."""
    trace = nk.as_tensor(trace)
    if mask is None:
        mask = np.ones(trace.shape[:-1], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != trace.shape[:-1]:
        raise ShapeError(f"mask shape {mask.shape} does not match trace {trace.shape}")
    count = mask.sum(axis=-1)
    if np.any(count == 0):
        raise EmptySequenceError("cannot pool a sequence with every step masked")
    m = mask[..., None].astype(nk.DTYPE)
    # cumsum adds strictly in time order (no pairwise blocking), so trailing
    # masked rows contribute exact zeros and leave the sum bit-identical
    total = np.cumsum(trace * m, axis=-2)[..., -1, :]
    return total / count[..., None], PoolMeanRecord(m / count[..., None, None])


def mean_pool_backward(record: PoolMeanRecord | None, grad):
    if record is None:
        raise StateError("mean_pool backward called without a forward record")
    return record.weights * grad[..., None, :]


# --- dropout -------------------------------------------------------------

def dropout(x, rate: float, rng: np.random.Generator | None = None, active: bool = True):
    """Inverted dropout; returns ``(output, scale_mask)``.

    The mask is None when dropout is a no-op (inactive or ``rate == 0``).
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = nk.as_tensor(x)
    if not active or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("active dropout needs a generator")
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask, grad):
    return grad if mask is None else grad * mask


# --- MLP + softmax -------------------------------------------------------

@dataclass
class MlpRecord:
    dense: list
    acts: list
    drops: list
    head: nk.DenseRecord
    probs: np.ndarray


def softmax(logits):
    logits = nk.as_tensor(logits)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def mlp_forward(x, layers, head, dropout_rate: float = 0.0, rng=None, active: bool = False):
    """Dense tanh layers followed by the 2-way softmax.

    ``layers`` is a sequence of ``(W, b)``; ``head`` is ``(W_s, b_s)`` with
    ``W_s`` of shape ``(h, 2)``.  Dropout is applied to the input of every
    dense layer.  Returns ``(positive_class_probability, record)``.
    """
    if not 1 <= len(layers) <= 3:
        raise ValueError(f"between 1 and 3 dense layers required, got {len(layers)}")
    dense_recs, acts, drops = [], [], []
    out = nk.as_tensor(x)
    for W, b in layers:
        out, mask = dropout(out, dropout_rate, rng, active)
        out, rec = nk.dense(out, W, b)
        out = nk.tanh(out)
        drops.append(mask)
        dense_recs.append(rec)
        acts.append(out)
    logits, head_rec = nk.dense(out, head[0], head[1])
    probs = softmax(logits)
    return probs[..., POSITIVE], MlpRecord(dense_recs, acts, drops, head_rec, probs)


def mlp_backward(record: MlpRecord | None, g_logits):
    """Returns ``(grad_x, [(gW, gb) per layer], (gW_s, gb_s))``."""
    if record is None:
        raise StateError("mlp backward called without a forward record")
    g, gWs, gbs = nk.dense_backward(record.head, g_logits)
    layer_grads = []
    for rec, act, mask in zip(reversed(record.dense), reversed(record.acts), reversed(record.drops)):
        g = nk.tanh_backward(act, g)
        g, gW, gb = nk.dense_backward(rec, g)
        g = dropout_backward(mask, g)
        layer_grads.append((gW, gb))
    layer_grads.reverse()
    return g, layer_grads, (gWs, gbs)


# --- loss ----------------------------------------------------------------

def _check_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if not np.all((y == 0) | (y == 1)):
        raise LabelError(f"labels must be 0 or 1, got {sorted(set(np.ravel(y).tolist()))}")
    return y.astype(nk.DTYPE)


def l2_norm_sq(params: Iterable[np.ndarray]) -> float:
    return float(sum(np.sum(p * p) for p in params))


def loss(scores, labels, params: Iterable[np.ndarray] = (), lam: float = 0.0) -> LossReport:
    """Summed binary cross entropy on clipped scores plus ``lam * ||theta||^2``."""
    y = _check_labels(labels)
    s = np.clip(nk.as_tensor(scores), CLIP_EPS, 1.0 - CLIP_EPS)
    data = -float(np.sum(y * np.log(s) + (1.0 - y) * np.log(1.0 - s)))
    reg = lam * l2_norm_sq(params) if lam else 0.0
    return LossReport(data, reg)


def loss_grad_logits(scores, labels) -> np.ndarray:
    """Gradient of the data loss with respect to the two logits.

    With two classes the positive probability is sigmoid(l_pos - l_neg), so the
    gradient is ``s - y`` on the positive logit and its negation on the other.
    Clipped scores pass no gradient.
    """
    y = _check_labels(labels)
    s = nk.as_tensor(scores)
    g = s - y
    g = np.where((s < CLIP_EPS) | (s > 1.0 - CLIP_EPS), 0.0, g)
    out = np.empty(s.shape + (2,))
    out[..., POSITIVE] = g
    out[..., 1 - POSITIVE] = -g
    return out


# --- lexical overlap features --------------------------------------------

def build_idf(documents: Iterable[Iterable[str]]) -> tuple[dict[str, float], int]:
    """Inverse document frequency ``ln(N / df)`` over token sets of ``documents``."""
    df: dict[str, int] = {}
    n = 0
    for doc in documents:
        n += 1
        for tok in set(doc):
            df[tok] = df.get(tok, 0) + 1
    return {tok: math.log(n / c) for tok, c in df.items()}, n


def load_stopwords(path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


def _overlap_pair(q: set, a: set, idf: Mapping[str, float], default_idf: float):
    if not q and not a:
        return 0.0, 0.0
    common = q & a
    plain = len(common) / (len(q) + len(a))
    w = lambda toks: sum(idf.get(t, default_idf) for t in toks)  # noqa: E731
    denom = w(q) + w(a)
    weighted = w(common) / denom if denom > 0 else 0.0
    return plain, weighted


def overlap_features(q_tokens, a_tokens, idf: Mapping[str, float] | None = None,
                     stopwords=frozenset(), n_docs: int = 1) -> np.ndarray:
    """``[overlap, idf_overlap, overlap_nostop, idf_overlap_nostop]``.

    overlap = |Q & A| / (|Q| + |A|) over token sets; the idf variant weights
    every token by its idf.  Tokens missing from ``idf`` get ``ln(n_docs)``.
    """
    idf = idf or {}
    default_idf = math.log(max(n_docs, 1))
    q, a = set(q_tokens), set(a_tokens)
    f1, f2 = _overlap_pair(q, a, idf, default_idf)
    f3, f4 = _overlap_pair(q - set(stopwords), a - set(stopwords), idf, default_idf)
    return np.array([f1, f2, f3, f4], dtype=nk.DTYPE)
