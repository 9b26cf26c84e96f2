"""Embedding projection, convolutional gates, fo-pooling and temporal crossing.

The quasi-recurrent layer produces candidate states Z and gates F, O for each
sequence with causal convolutions.  A plain QRNN pools each sequence with its
own gates.  The crossed cell additionally pools each sequence's Z under its
partner's gates (indexed through :func:`align_step`) and multiplies the two
hidden-state streams together step by step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .errors import AlignmentError, ShapeError, StateError, VocabularyError

PAD_ID = 0
OOV_ID = 1


@dataclass
class EmbeddingTable:
    """Frozen word vectors; row ``PAD_ID`` is all zeros."""

    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = nk.as_tensor(self.vectors)
        if self.vectors.ndim != 2:
            raise ShapeError("embedding table must be 2-D")
        if np.any(self.vectors[PAD_ID] != 0.0):
            raise ValueError("PAD row of the embedding table must be zero")
        self.vectors.setflags(write=False)

    @property
    def vocab_size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, token_ids) -> np.ndarray:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            bad = ids[(ids < 0) | (ids >= self.vocab_size)][0]
            raise VocabularyError(f"token id {bad} outside vocabulary of size {self.vocab_size}")
        return self.vectors[ids]


@dataclass
class GateBundle:
    Z: np.ndarray
    F: np.ndarray
    O: np.ndarray


@dataclass
class CellTrace:
    c: np.ndarray
    h: np.ndarray


@dataclass
class CtrnOutput:
    self_trace: CellTrace
    cross_trace: CellTrace
    fused: np.ndarray


# --- embedding + projection ----------------------------------------------

@dataclass
class EmbedRecord:
    rows: np.ndarray


def embed_project(token_ids, table: EmbeddingTable, proj: np.ndarray):
    """Look up frozen vectors and map them through the trainable ``n x m`` projection."""
    rows = table.lookup(token_ids)
    if proj.shape[0] != table.dim:
        raise ShapeError(f"projection expects width {proj.shape[0]}, table has {table.dim}")
    return rows @ proj, EmbedRecord(rows)


def embed_project_backward(record: EmbedRecord | None, grad: np.ndarray) -> np.ndarray:
    """Gradient for the projection only; the table never receives one."""
    if record is None:
        raise StateError("embed_project backward called without a forward record")
    n = record.rows.shape[-1]
    return record.rows.reshape(-1, n).T @ grad.reshape(-1, grad.shape[-1])


# --- gates ---------------------------------------------------------------

@dataclass
class GateRecord:
    conv: nk.ConvRecord
    gates: GateBundle
    d: int


def compute_gates(x, banks: dict[str, nk.ConvBank]):
    """Z = tanh(W_z * x), F = sigmoid(W_f * x), O = sigmoid(W_o * x).

    The three banks are run as one convolution with stacked output channels.
    """
    bz, bf, bo = banks["z"], banks["f"], banks["o"]
    if not (bz.weights.shape == bf.weights.shape == bo.weights.shape):
        raise ShapeError("gate banks must share k, d and m")
    has_bias = bz.bias is not None
    stacked = nk.ConvBank(
        np.concatenate([bz.weights, bf.weights, bo.weights], axis=1),
        np.concatenate([bz.bias, bf.bias, bo.bias]) if has_bias else None,
    )
    pre, rec = nk.conv1d(x, stacked)
    d = bz.d
    gates = GateBundle(
        nk.tanh(pre[..., :d]),
        nk.sigmoid(pre[..., d:2 * d]),
        nk.sigmoid(pre[..., 2 * d:]),
    )
    return gates, GateRecord(rec, gates, d)


def compute_gates_backward(record: GateRecord | None, gZ, gF, gO):
    """Returns ``(grad_x, {"z": ConvBank, "f": ConvBank, "o": ConvBank})``."""
    if record is None:
        raise StateError("compute_gates backward called without a forward record")
    g = record.gates
    gpre = np.concatenate([
        nk.tanh_backward(g.Z, gZ),
        nk.sigmoid_backward(g.F, gF),
        nk.sigmoid_backward(g.O, gO),
    ], axis=-1)
    gx, gbank = nk.conv1d_backward(record.conv, gpre)
    d = record.d
    out = {}
    for i, name in enumerate("zfo"):
        gb = gbank.bias[i * d:(i + 1) * d] if gbank.bias is not None else None
        out[name] = nk.ConvBank(gbank.weights[:, i * d:(i + 1) * d, :], gb)
    return gx, out


# --- fo-pooling ----------------------------------------------------------

@dataclass
class PoolRecord:
    F: np.ndarray
    O: np.ndarray
    Z: np.ndarray
    c: np.ndarray


def fo_pool(F, O, Z):
    """c_t = f_t * c_{t-1} + (1 - f_t) * z_t and h_t = o_t * c_t, with c_0 = 0.

    Works on ``(L, d)`` or ``(B, L, d)``; time is axis ``-2``.
    """
    if not (F.shape == O.shape == Z.shape):
        raise ShapeError(f"fo_pool shapes differ: {F.shape}, {O.shape}, {Z.shape}")
    L = F.shape[-2]
    fz = (1.0 - F) * Z
    c = np.empty_like(Z)
    prev = np.zeros(Z.shape[:-2] + Z.shape[-1:])
    for t in range(L):
        prev = F[..., t, :] * prev + fz[..., t, :]
        c[..., t, :] = prev
    return CellTrace(c, O * c), PoolRecord(F, O, Z, c)


def fo_pool_backward(record: PoolRecord | None, gh: np.ndarray):
    """Returns ``(grad_F, grad_O, grad_Z)`` given the gradient of ``h``."""
    if record is None:
        raise StateError("fo_pool backward called without a forward record")
    F, O, Z, c = record.F, record.O, record.Z, record.c
    L = F.shape[-2]
    gO = gh * c
    gc_local = gh * O
    gF = np.empty_like(F)
    gZ = np.empty_like(Z)
    carry = np.zeros(Z.shape[:-2] + Z.shape[-1:])
    zero = np.zeros_like(carry)
    for t in range(L - 1, -1, -1):
        gc = gc_local[..., t, :] + carry
        prev = c[..., t - 1, :] if t > 0 else zero
        gF[..., t, :] = gc * (prev - Z[..., t, :])
        gZ[..., t, :] = gc * (1.0 - F[..., t, :])
        carry = gc * F[..., t, :]
    return gF, gO, gZ


# --- alignment -----------------------------------------------------------

def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def align_step(t: int, L_self: int, L_partner: int) -> int:
    """Partner step (1-based) whose gates are applied at step ``t`` of this sequence.

    A shorter sequence jumps by the integer stretch factor ceil(L_partner/L_self),
    clamped to the partner's last step.  A longer sequence maps proportionally
    down, ceil(t * L_partner / L_self).
    """
    if L_self < 1 or L_partner < 1:
        raise AlignmentError(f"lengths must be >= 1, got {L_self}, {L_partner}")
    if not 1 <= t <= L_self:
        raise AlignmentError(f"step {t} outside 1..{L_self}")
    if L_self <= L_partner:
        return min(t * _ceil_div(L_partner, L_self), L_partner)
    return min(_ceil_div(t * L_partner, L_self), L_partner)


def align_indices(L_self: int, L_partner: int, width: int | None = None) -> np.ndarray:
    """0-based partner index for every step ``0..width-1``.

    Steps past ``L_self`` (padding) reuse the last real step's alignment.
    """
    width = L_self if width is None else width
    idx = np.empty(width, dtype=np.int64)
    for t in range(width):
        idx[t] = align_step(min(t + 1, L_self), L_self, L_partner) - 1
    return idx


def _batch_align(self_len, partner_len, width):
    self_len = np.atleast_1d(self_len)
    partner_len = np.atleast_1d(partner_len)
    return np.stack([align_indices(int(s), int(p), width) for s, p in zip(self_len, partner_len)])


def _gather(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # x: (B, Lp, d), idx: (B, Ls) -> (B, Ls, d)
    return np.take_along_axis(x, idx[..., None], axis=-2)


def _scatter_add(shape, idx: np.ndarray, g: np.ndarray) -> np.ndarray:
    out = np.zeros(shape)
    rows = np.arange(shape[0])[:, None]
    np.add.at(out, (rows, idx), g)
    return out


# --- crossed cells -------------------------------------------------------

@dataclass
class CrossRecord:
    q_self: PoolRecord
    q_cross: PoolRecord
    a_self: PoolRecord
    a_cross: PoolRecord
    q_out: CtrnOutput
    a_out: CtrnOutput
    idx_q: np.ndarray
    idx_a: np.ndarray
    batched: bool
    q_shape: tuple
    a_shape: tuple


def ctrn_pair(gq: GateBundle, ga: GateBundle, q_len=None, a_len=None):
    """Run both crossed cells on precomputed gates.

    ``gq``/``ga`` hold ``(L, d)`` or ``(B, L, d)`` arrays; ``q_len``/``a_len``
    give the true lengths per row (default: full width).  The question's cross
    trace pools ``Z_q`` under the answer's aligned F and O; the answer's cross
    trace is the mirror image.
    """
    batched = gq.Z.ndim == 3
    if not batched:
        gq = GateBundle(gq.Z[None], gq.F[None], gq.O[None])
        ga = GateBundle(ga.Z[None], ga.F[None], ga.O[None])
    B, Lq, _ = gq.Z.shape
    La = ga.Z.shape[1]
    if ga.Z.shape[0] != B or ga.Z.shape[2] != gq.Z.shape[2]:
        raise ShapeError(f"question/answer gate shapes incompatible: {gq.Z.shape}, {ga.Z.shape}")
    q_len = np.full(B, Lq) if q_len is None else np.broadcast_to(q_len, (B,))
    a_len = np.full(B, La) if a_len is None else np.broadcast_to(a_len, (B,))

    idx_q = _batch_align(q_len, a_len, Lq)
    idx_a = _batch_align(a_len, q_len, La)

    q_self, r_qs = fo_pool(gq.F, gq.O, gq.Z)
    a_self, r_as = fo_pool(ga.F, ga.O, ga.Z)
    q_cross, r_qc = fo_pool(_gather(ga.F, idx_q), _gather(ga.O, idx_q), gq.Z)
    a_cross, r_ac = fo_pool(_gather(gq.F, idx_a), _gather(gq.O, idx_a), ga.Z)

    q_out = CtrnOutput(q_self, q_cross, q_self.h * q_cross.h)
    a_out = CtrnOutput(a_self, a_cross, a_self.h * a_cross.h)
    rec = CrossRecord(r_qs, r_qc, r_as, r_ac, q_out, a_out, idx_q, idx_a,
                      batched, gq.Z.shape, ga.Z.shape)
    if not batched:
        q_out, a_out = _unbatch(q_out), _unbatch(a_out)
    return q_out, a_out, rec


def _unbatch(out: CtrnOutput) -> CtrnOutput:
    return CtrnOutput(
        CellTrace(out.self_trace.c[0], out.self_trace.h[0]),
        CellTrace(out.cross_trace.c[0], out.cross_trace.h[0]),
        out.fused[0],
    )


def ctrn_pair_backward(record: CrossRecord | None, g_fused_q, g_fused_a):
    """Returns ``(GateBundle grads for q, GateBundle grads for a)``."""
    if record is None:
        raise StateError("ctrn_pair backward called without a forward record")
    if not record.batched:
        g_fused_q, g_fused_a = g_fused_q[None], g_fused_a[None]
    q, a = record.q_out, record.a_out

    gF_q, gO_q, gZ_q = fo_pool_backward(record.q_self, g_fused_q * q.cross_trace.h)
    gFx_a, gOx_a, gZx_q = fo_pool_backward(record.q_cross, g_fused_q * q.self_trace.h)
    gF_a, gO_a, gZ_a = fo_pool_backward(record.a_self, g_fused_a * a.cross_trace.h)
    gFx_q, gOx_q, gZx_a = fo_pool_backward(record.a_cross, g_fused_a * a.self_trace.h)

    sq, sa = record.q_shape, record.a_shape
    gq = GateBundle(
        gZ_q + gZx_q,
        gF_q + _scatter_add(sq, record.idx_a, gFx_q),
        gO_q + _scatter_add(sq, record.idx_a, gOx_q),
    )
    ga = GateBundle(
        gZ_a + gZx_a,
        gF_a + _scatter_add(sa, record.idx_q, gFx_a),
        gO_a + _scatter_add(sa, record.idx_q, gOx_a),
    )
    if not record.batched:
        gq = GateBundle(gq.Z[0], gq.F[0], gq.O[0])
        ga = GateBundle(ga.Z[0], ga.F[0], ga.O[0])
    return gq, ga
