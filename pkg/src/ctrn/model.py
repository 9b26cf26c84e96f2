"""Full ranking network: embedding projection, gate convolutions, crossed or
plain fo-pooling, masked mean pooling, MLP and two-way softmax."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from . import encoder as enc
from . import head
from . import numkit as nk
from .data import QAInstance, SequenceBatch, Vocabulary, make_batches


@dataclass
class ModelConfig:
    m: int = 64
    d: int = 128
    h: int = 64
    k: int = 2
    mlp_layers: int = 1
    cross: bool = True  # False gives the plain QRNN ranker
    shared: bool = True
    conv_bias: bool = True
    overlap_features: bool = False
    dropout: float = 0.5

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Forward:
    scores: np.ndarray
    tape: nk.Tape
    batch: SequenceBatch = field(repr=False)


class Ranker:
    """Scores question/answer pairs; ``config.cross`` selects CTRN or QRNN."""

    def __init__(self, config: ModelConfig, table: enc.EmbeddingTable, seed: int = 0,
                 vocab: Vocabulary | None = None):
        self.config = config
        self.table = table
        self.vocab = vocab
        self.idf: dict[str, float] = {}
        self.n_docs = 1
        self.stopwords: frozenset[str] = frozenset()
        self.params = self._init_params(np.random.default_rng(seed))

    # -- registry ---------------------------------------------------------

    def _sides(self):
        return ("conv",) if self.config.shared else ("conv_q", "conv_a")

    def _init_params(self, rng) -> dict[str, np.ndarray]:
        c = self.config
        n = self.table.dim
        p = {"proj": nk.glorot_uniform(rng, (n, c.m), n, c.m)}
        for side in self._sides():
            for g in "zfo":
                # fan sizes of the (k*m) -> d map the bank implements
                p[f"{side}.{g}.W"] = nk.glorot_uniform(rng, (c.k, c.d, c.m), c.k * c.m, c.d)
                if c.conv_bias:
                    p[f"{side}.{g}.b"] = np.zeros(c.d)
        width = 2 * c.d + (head.N_OVERLAP_FEATURES if c.overlap_features else 0)
        for i in range(c.mlp_layers):
            p[f"mlp.{i}.W"] = nk.glorot_uniform(rng, (width, c.h), width, c.h)
            p[f"mlp.{i}.b"] = np.zeros(c.h)
            width = c.h
        p["out.W"] = nk.glorot_uniform(rng, (c.h, 2), c.h, 2)
        p["out.b"] = np.zeros(2)
        return p

    def param_group(self, name: str) -> str:
        if name == "proj":
            return "projection"
        if name.startswith("conv"):
            return "encoder_bias" if name.endswith(".b") else "encoder"
        if name.startswith("mlp."):
            return "mlp"
        return "output"

    def num_params(self, groups: Sequence[str] | None = None) -> int:
        return sum(v.size for k, v in self.params.items()
                   if groups is None or self.param_group(k) in groups)

    def _bank(self, side: str) -> dict[str, nk.ConvBank]:
        p = self.params
        return {g: nk.ConvBank(p[f"{side}.{g}.W"], p.get(f"{side}.{g}.b")) for g in "zfo"}

    def _layers(self):
        return [(self.params[f"mlp.{i}.W"], self.params[f"mlp.{i}.b"])
                for i in range(self.config.mlp_layers)]

    # -- forward / backward ----------------------------------------------

    def encode(self, batch: SequenceBatch, tape: nk.Tape | None = None):
        """Pooled question and answer vectors, each ``(B, d)``."""
        tape = nk.Tape() if tape is None else tape
        sq, sa = ("conv", "conv") if self.config.shared else ("conv_q", "conv_a")
        xq, tape["embed_q"] = enc.embed_project(batch.q_ids, self.table, self.params["proj"])
        xa, tape["embed_a"] = enc.embed_project(batch.a_ids, self.table, self.params["proj"])
        gq, tape["gates_q"] = enc.compute_gates(xq, self._bank(sq))
        ga, tape["gates_a"] = enc.compute_gates(xa, self._bank(sa))
        if self.config.cross:
            out_q, out_a, tape["cross"] = enc.ctrn_pair(gq, ga, batch.q_len, batch.a_len)
            hq, ha = out_q.fused, out_a.fused
        else:
            tq, tape["pool_q"] = enc.fo_pool(gq.F, gq.O, gq.Z)
            ta, tape["pool_a"] = enc.fo_pool(ga.F, ga.O, ga.Z)
            hq, ha = tq.h, ta.h
        vq, tape["mean_q"] = head.mean_pool(hq, batch.q_mask)
        va, tape["mean_a"] = head.mean_pool(ha, batch.a_mask)
        return vq, va, tape

    def forward(self, batch: SequenceBatch, train: bool = False,
                rng: np.random.Generator | None = None) -> Forward:
        vq, va, tape = self.encode(batch)
        parts = [vq, va]
        if self.config.overlap_features:
            if batch.extra is None:
                raise ValueError("model expects overlap features but the batch has none")
            parts.append(batch.extra)
        x = nk.concat(*parts)
        scores, tape["mlp"] = head.mlp_forward(
            x, self._layers(), (self.params["out.W"], self.params["out.b"]),
            self.config.dropout, rng, active=train)
        return Forward(scores, tape, batch)

    def backward(self, fwd: Forward, g_logits: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given the gradient of the two logits per row."""
        tape = fwd.tape
        c = self.config
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        gx, layer_grads, (gWs, gbs) = head.mlp_backward(tape["mlp"], g_logits)
        grads["out.W"], grads["out.b"] = gWs, gbs
        for i, (gW, gb) in enumerate(layer_grads):
            grads[f"mlp.{i}.W"], grads[f"mlp.{i}.b"] = gW, gb
        g_vq, g_va = gx[:, :c.d], gx[:, c.d:2 * c.d]

        g_hq = head.mean_pool_backward(tape["mean_q"], g_vq)
        g_ha = head.mean_pool_backward(tape["mean_a"], g_va)
        if c.cross:
            g_gq, g_ga = enc.ctrn_pair_backward(tape["cross"], g_hq, g_ha)
        else:
            gF, gO, gZ = enc.fo_pool_backward(tape["pool_q"], g_hq)
            g_gq = enc.GateBundle(gZ, gF, gO)
            gF, gO, gZ = enc.fo_pool_backward(tape["pool_a"], g_ha)
            g_ga = enc.GateBundle(gZ, gF, gO)

        sq, sa = ("conv", "conv") if c.shared else ("conv_q", "conv_a")
        g_xq, banks_q = enc.compute_gates_backward(tape["gates_q"], g_gq.Z, g_gq.F, g_gq.O)
        g_xa, banks_a = enc.compute_gates_backward(tape["gates_a"], g_ga.Z, g_ga.F, g_ga.O)
        for side, banks in ((sq, banks_q), (sa, banks_a)):
            for g, bank in banks.items():
                grads[f"{side}.{g}.W"] += bank.weights
                if bank.bias is not None:
                    grads[f"{side}.{g}.b"] += bank.bias
        grads["proj"] = (enc.embed_project_backward(tape["embed_q"], g_xq)
                         + enc.embed_project_backward(tape["embed_a"], g_xa))
        return grads

    def loss_and_grads(self, batch: SequenceBatch, lam: float = 0.0, train: bool = False,
                       rng: np.random.Generator | None = None):
        """Summed cross entropy over the batch plus ``lam * ||theta||^2``."""
        fwd = self.forward(batch, train=train, rng=rng)
        report = head.loss(fwd.scores, batch.labels, self.params.values(), lam)
        grads = self.backward(fwd, head.loss_grad_logits(fwd.scores, batch.labels))
        if lam:
            for k, v in self.params.items():
                grads[k] += 2.0 * lam * v
        return report, grads, fwd.scores

    # -- convenience ------------------------------------------------------

    def features_for(self, instances: Sequence[QAInstance]) -> np.ndarray | None:
        if not self.config.overlap_features:
            return None
        return np.stack([head.overlap_features(x.question, x.answer, self.idf, self.stopwords,
                                               self.n_docs) for x in instances])

    def score(self, instances: Sequence[QAInstance], batch_size: int = 256) -> np.ndarray:
        """Inference scores in input order."""
        if self.vocab is None:
            raise ValueError("model has no vocabulary attached")
        out = np.empty(len(instances))
        extra = self.features_for(instances)
        for batch in make_batches(instances, self.vocab, batch_size, seed=None, extra=extra):
            out[batch.index] = self.forward(batch).scores
        return out
