import numpy as np
import pytest

from ctrn.data import SequenceBatch
from ctrn.encoder import EmbeddingTable
from ctrn.model import ModelConfig, Ranker

FD_STEP = 1e-5
FD_TOL = 1e-4


def numeric_grad(f, arr, eps=FD_STEP):
    """Central differences of scalar ``f()`` with respect to ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    for i in range(arr.size):
        old = arr.flat[i]
        arr.flat[i] = old + eps
        fp = f()
        arr.flat[i] = old - eps
        fm = f()
        arr.flat[i] = old
        g.flat[i] = (fp - fm) / (2 * eps)
    return g


def rel_error(analytic, numeric, floor=1e-6):
    """Worst elementwise relative error; ``floor`` keeps round-off on near-zero entries from dominating."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def random_batch(rng, vocab_size, batch=3, max_len=6, labels=None):
    q_len = rng.integers(1, max_len + 1, batch)
    a_len = rng.integers(1, max_len + 1, batch)
    q = np.zeros((batch, q_len.max()), dtype=np.int64)
    a = np.zeros((batch, a_len.max()), dtype=np.int64)
    for i in range(batch):
        q[i, :q_len[i]] = rng.integers(1, vocab_size, q_len[i])
        a[i, :a_len[i]] = rng.integers(1, vocab_size, a_len[i])
    y = rng.integers(0, 2, batch) if labels is None else np.asarray(labels)
    return SequenceBatch(q, a, q_len, a_len, y, np.arange(batch))


def random_table(rng, vocab_size=12, n=5):
    t = rng.normal(size=(vocab_size, n))
    t[0] = 0.0
    return EmbeddingTable(t)


@pytest.fixture
def tiny_model():
    def make(seed=0, **overrides):
        rng = np.random.default_rng(seed)
        cfg = dict(m=4, d=3, h=5, k=2, mlp_layers=1)
        cfg.update(overrides)
        return Ranker(ModelConfig(**cfg), random_table(rng), seed=seed)
    return make
