"""Parameter accounting and encoder runtime measurements.

``param_count`` evaluates the closed-form memory-complexity rows (embedding,
projection, convolution biases and the softmax head excluded).
``registry_count`` counts the same quantity from a live parameter registry so
the two can be cross-checked.  ``time_models`` times one forward+backward pass
of each encoder over a fixed random batch.
"""

from __future__ import annotations

import csv
import statistics
import time
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from . import encoder as enc
from . import numkit as nk
from .errors import ConfigError, StateError

KINDS = ("lstm", "ap-bilstm", "qrnn", "ctrn")

FORMULAS = {
    "lstm": "4(md + d^2) + 2dh + h",
    "ap-bilstm": "4(md + d^2) + 4d^2",
    "qrnn": "3kdm + 2dh + h",
    "ctrn": "3kdm + 2dh + h",
}

# registry groups that the closed-form rows cover
TABLE_GROUPS = ("encoder", "mlp")


def _kind(kind: str) -> str:
    key = kind.lower().replace("_", "-")
    if key not in FORMULAS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {KINDS}", "kind")
    return key


def param_count(kind: str, m: int, d: int, h: int, k: int = 2) -> int:
    kind = _kind(kind)
    if min(m, d, h, k) < 1:
        raise ConfigError("dimensions must be positive", "dims")
    if kind == "lstm":
        return 4 * (m * d + d * d) + 2 * d * h + h
    if kind == "ap-bilstm":
        return 4 * (m * d + d * d) + 4 * d * d
    return 3 * k * d * m + 2 * d * h + h


@dataclass
class ParamBudget:
    kind: str
    formula: str
    count: int


def budget_table(m: int, d: int, h: int, k: int = 2, kinds: Iterable[str] = KINDS) -> list[ParamBudget]:
    return [ParamBudget(_kind(x), FORMULAS[_kind(x)], param_count(x, m, d, h, k)) for x in kinds]


def format_budget_table(rows: Sequence[ParamBudget]) -> str:
    width = max(len(r.formula) for r in rows)
    lines = [f"{'Model':<10} {'Mem complexity':<{width}} {'# Params':>12}"]
    for r in rows:
        lines.append(f"{r.kind.upper():<10} {r.formula:<{width}} {r.count:>12,d}  (~{r.count / 1e6:.2f}M)")
    return "\n".join(lines)


def registry_count(model, groups: Sequence[str] | None = TABLE_GROUPS) -> int:
    """Element count of the live registry restricted to ``groups`` (None = everything)."""
    return sum(v.size for name, v in model.params.items()
               if groups is None or model.param_group(name) in groups)


# --- reference LSTM --------------------------------------------------------

@dataclass
class LstmRecord:
    x: np.ndarray
    gates: np.ndarray  # (B, L, 4d) activated i, f, g, o
    c: np.ndarray
    h: np.ndarray


class ReferenceLstm:
    """Standard 4-gate LSTM used only for runtime and parameter-count baselines.

    Gate blocks are ordered input, forget, candidate, output.
    """

    def __init__(self, m: int, d: int, bias: bool = False, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.d = d
        self.params = {
            "lstm.W": nk.glorot_uniform(rng, (m, 4 * d), m, 4 * d),
            "lstm.U": nk.glorot_uniform(rng, (d, 4 * d), d, 4 * d),
        }
        if bias:
            self.params["lstm.b"] = np.zeros(4 * d)

    def param_group(self, name: str) -> str:
        return "encoder_bias" if name.endswith(".b") else "encoder"

    def forward(self, x: np.ndarray):
        W, U = self.params["lstm.W"], self.params["lstm.U"]
        b = self.params.get("lstm.b")
        B, L, _ = x.shape
        d = self.d
        xw = x @ W
        if b is not None:
            xw += b
        gates = np.empty((B, L, 4 * d))
        c = np.empty((B, L, d))
        h = np.empty((B, L, d))
        hp = np.zeros((B, d))
        cp = np.zeros((B, d))
        for t in range(L):
            a = xw[:, t] + hp @ U
            gi = nk.sigmoid(a[:, :d])
            gf = nk.sigmoid(a[:, d:2 * d])
            gg = nk.tanh(a[:, 2 * d:3 * d])
            go = nk.sigmoid(a[:, 3 * d:])
            cp = gf * cp + gi * gg
            hp = go * np.tanh(cp)
            gates[:, t] = np.concatenate([gi, gf, gg, go], axis=1)
            c[:, t], h[:, t] = cp, hp
        return h, LstmRecord(x, gates, c, h)

    def backward(self, record: LstmRecord | None, gh: np.ndarray):
        """Returns ``(grad_x, {name: grad})`` by backpropagation through time."""
        if record is None:
            raise StateError("lstm backward called without a forward record")
        W, U = self.params["lstm.W"], self.params["lstm.U"]
        d = self.d
        x, gates, c, h = record.x, record.gates, record.c, record.h
        B, L, _ = x.shape
        ga = np.empty_like(gates)
        dh_next = np.zeros((B, d))
        dc_next = np.zeros((B, d))
        for t in range(L - 1, -1, -1):
            gi, gf, gg, go = (gates[:, t, j * d:(j + 1) * d] for j in range(4))
            tc = np.tanh(c[:, t])
            dh = gh[:, t] + dh_next
            dc = dc_next + dh * go * (1.0 - tc * tc)
            cprev = c[:, t - 1] if t > 0 else np.zeros((B, d))
            ga[:, t] = np.concatenate([
                dc * gg * gi * (1 - gi),
                dc * cprev * gf * (1 - gf),
                dc * gi * (1 - gg * gg),
                dh * tc * go * (1 - go),
            ], axis=1)
            dh_next = ga[:, t] @ U.T
            dc_next = dc * gf
        hprev = np.concatenate([np.zeros((B, 1, d)), h[:, :-1]], axis=1)
        grads = {
            "lstm.W": x.reshape(-1, x.shape[-1]).T @ ga.reshape(-1, 4 * d),
            "lstm.U": hprev.reshape(-1, d).T @ ga.reshape(-1, 4 * d),
        }
        if "lstm.b" in self.params:
            grads["lstm.b"] = ga.reshape(-1, 4 * d).sum(axis=0)
        return ga @ W.T, grads


class LstmBaseline:
    """LSTM encoder plus the ``2d -> h`` dense layer; registry for accounting only."""

    def __init__(self, m: int, d: int, h: int, seed: int = 0):
        self.lstm = ReferenceLstm(m, d, bias=False, seed=seed)
        self.params = dict(self.lstm.params)
        self.params["mlp.0.W"] = np.zeros((2 * d, h))
        self.params["mlp.0.b"] = np.zeros(h)

    def param_group(self, name: str) -> str:
        return "mlp" if name.startswith("mlp.") else self.lstm.param_group(name)


# --- timing ----------------------------------------------------------------

@dataclass
class RuntimeSample:
    kind: str
    L: int
    d: int
    times_ms: list[float]

    @property
    def median_ms(self) -> float:
        return statistics.median(self.times_ms)

    @property
    def reps(self) -> int:
        return len(self.times_ms)


def _random_banks(rng, k, d, m):
    return {g: nk.ConvBank(nk.glorot_uniform(rng, (k, d, m), k * m, d), np.zeros(d)) for g in "zfo"}


def _encoder_step(kind: str, d: int, m: int, k: int, seed: int):
    """Closure running one forward+backward over both sequences of a batch."""
    rng = np.random.default_rng(seed)
    if kind == "lstm":
        lstm = ReferenceLstm(m, d, bias=True, seed=seed)

        def step(xq, xa):
            for x in (xq, xa):
                hs, rec = lstm.forward(x)
                lstm.backward(rec, np.ones_like(hs))
        return step

    banks = _random_banks(rng, k, d, m)

    def step(xq, xa):
        gq, rq = enc.compute_gates(xq, banks)
        ga, ra = enc.compute_gates(xa, banks)
        if kind == "ctrn":
            oq, oa, rec = enc.ctrn_pair(gq, ga)
            g_q, g_a = enc.ctrn_pair_backward(rec, np.ones_like(oq.fused), np.ones_like(oa.fused))
        else:
            tq, pq = enc.fo_pool(gq.F, gq.O, gq.Z)
            ta, pa = enc.fo_pool(ga.F, ga.O, ga.Z)
            gF, gO, gZ = enc.fo_pool_backward(pq, np.ones_like(tq.h))
            g_q = enc.GateBundle(gZ, gF, gO)
            gF, gO, gZ = enc.fo_pool_backward(pa, np.ones_like(ta.h))
            g_a = enc.GateBundle(gZ, gF, gO)
        enc.compute_gates_backward(rq, g_q.Z, g_q.F, g_q.O)
        enc.compute_gates_backward(ra, g_a.Z, g_a.F, g_a.O)
    return step


def time_models(kinds: Iterable[str] = ("ctrn", "qrnn", "lstm"), lengths: Iterable[int] = (64, 128, 256),
                d: int = 512, batch: int = 8, reps: int = 7, m: int = 300, k: int = 2,
                warmup: int = 2, seed: int = 0) -> list[RuntimeSample]:
    """Median wall time of encoder forward+backward per (kind, L), single-threaded BLAS."""
    if reps < 5:
        raise ConfigError("at least 5 repetitions are required", "reps")
    samples = []
    with threadpool_limits(limits=1):
        for kind in kinds:
            kind = _kind(kind)
            if kind == "ap-bilstm":
                raise ConfigError("no runnable AP-BiLSTM encoder; it is accounted symbolically only", "kind")
            step = _encoder_step(kind, d, m, k, seed)
            inputs = {}
            for L in lengths:
                rng = np.random.default_rng(seed + L)
                inputs[L] = (rng.normal(size=(batch, L, m)), rng.normal(size=(batch, L, m)))
            for _ in range(warmup):
                for xq, xa in inputs.values():
                    step(xq, xa)
            times = {L: [] for L in inputs}
            # round-robin over lengths so slow drift hits every L alike
            for _ in range(reps):
                for L, (xq, xa) in inputs.items():
                    start = time.perf_counter()
                    step(xq, xa)
                    times[L].append((time.perf_counter() - start) * 1e3)
            samples.extend(RuntimeSample(kind, L, d, t) for L, t in times.items())
    return samples


def write_csv(path, samples: Iterable[RuntimeSample]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "L", "d", "median_ms"])
        for s in samples:
            w.writerow([s.kind, s.L, s.d, f"{s.median_ms:.3f}"])


def median_of(samples: Iterable[RuntimeSample], kind: str, L: int) -> float:
    for s in samples:
        if s.kind == kind and s.L == L:
            return s.median_ms
    raise KeyError((kind, L))
