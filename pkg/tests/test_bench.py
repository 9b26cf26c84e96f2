import numpy as np
import pytest

from ctrn import bench
from ctrn.encoder import EmbeddingTable
from ctrn.errors import ConfigError, StateError
from ctrn.model import ModelConfig, Ranker

from conftest import FD_TOL, numeric_grad, rel_error


def test_reference_counts():
    assert bench.param_count("qrnn", 300, 512, 128, 2) == 1_052_800
    assert bench.param_count("ctrn", 300, 512, 128, 2) == 1_052_800
    assert bench.param_count("lstm", 300, 512, 128) == 1_794_176
    assert bench.param_count("ap-bilstm", 300, 512, 128) == 2_711_552


def test_rounded_like_the_table():
    rows = {r.kind: r.count for r in bench.budget_table(300, 512, 128, 2)}
    assert round(rows["ctrn"] / 1e6, 2) == 1.05
    assert round(rows["lstm"] / 1e6, 2) == 1.79


def test_unknown_kind():
    with pytest.raises(ConfigError) as err:
        bench.param_count("gru", 1, 1, 1)
    assert err.value.key == "kind"


def grid(n=20, seed=0):
    rng = np.random.default_rng(seed)
    return [tuple(int(v) for v in (rng.integers(1, 400), rng.integers(1, 600), rng.integers(1, 200),
                                   rng.integers(1, 5))) for _ in range(n)]


@pytest.mark.parametrize("m,d,h,k", grid())
def test_ctrn_equals_qrnn_on_grid(m, d, h, k):
    assert bench.param_count("ctrn", m, d, h, k) == bench.param_count("qrnn", m, d, h, k)


def _ranker(m, d, h, k, **kw):
    table = EmbeddingTable(np.zeros((3, 2)))
    return Ranker(ModelConfig(m=m, d=d, h=h, k=k, **kw), table)


@pytest.mark.parametrize("m,d,h,k", [(300, 512, 128, 2), (7, 5, 3, 3), (1, 1, 1, 1)])
def test_registry_matches_formula(m, d, h, k):
    for kind, cross in (("ctrn", True), ("qrnn", False)):
        assert bench.registry_count(_ranker(m, d, h, k, cross=cross)) == bench.param_count(kind, m, d, h, k)
    assert bench.registry_count(bench.LstmBaseline(m, d, h)) == bench.param_count("lstm", m, d, h)


def test_unshared_doubles_encoder():
    shared = _ranker(6, 5, 4, 2)
    unshared = _ranker(6, 5, 4, 2, shared=False)
    assert bench.registry_count(unshared) - bench.registry_count(shared) == 3 * 2 * 5 * 6


def test_format_table():
    text = bench.format_budget_table(bench.budget_table(300, 512, 128, 2))
    assert "1,052,800" in text and "(~1.05M)" in text and "3kdm + 2dh + h" in text


@pytest.mark.parametrize("seed", range(3))
def test_reference_lstm_gradient(seed):
    rng = np.random.default_rng(seed)
    lstm = bench.ReferenceLstm(3, 2, bias=True, seed=seed)
    for v in lstm.params.values():
        v += rng.normal(scale=0.2, size=v.shape)
    x = rng.normal(size=(2, 4, 3))
    R = rng.normal(size=(2, 4, 2))
    h, rec = lstm.forward(x)
    gx, grads = lstm.backward(rec, R)

    def f():
        return float(np.sum(lstm.forward(x)[0] * R))

    assert rel_error(gx, numeric_grad(f, x)) < FD_TOL
    for name, arr in lstm.params.items():
        assert rel_error(grads[name], numeric_grad(f, arr)) < FD_TOL
    with pytest.raises(StateError):
        lstm.backward(None, R)


def test_time_models_small(tmp_path):
    samples = bench.time_models(("ctrn", "qrnn", "lstm"), (4, 8), d=6, m=5, batch=2, reps=5, warmup=1)
    assert [(s.kind, s.L) for s in samples] == [(k, L) for k in ("ctrn", "qrnn", "lstm") for L in (4, 8)]
    assert all(s.reps == 5 and s.median_ms > 0 for s in samples)
    path = tmp_path / "rt.csv"
    bench.write_csv(path, samples)
    lines = path.read_text().splitlines()
    assert lines[0] == "kind,L,d,median_ms" and len(lines) == 7
    assert bench.median_of(samples, "qrnn", 8) == samples[3].median_ms


def test_time_models_rejects():
    with pytest.raises(ConfigError):
        bench.time_models(("ctrn",), (4,), reps=3)
    with pytest.raises(ConfigError):
        bench.time_models(("ap-bilstm",), (4,), d=4, m=4, reps=5)
