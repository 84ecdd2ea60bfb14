import math
import warnings

import numpy as np
import pytest

from conftest import sig
from litt.cells import (GAMMA_MAX, CellParams, CellState, GammaParams, gru_step, litt_step, load_checkpoint,
                        lstm_step, run_sequence, save_checkpoint, time_gate)
from litt.numkit import Rng, ShapeError


def scalar_lstm(p, h, c, x, gamma=0.0):
    """Coordinate-by-coordinate reference step; returns (h, c_carried)."""
    H, D = p.hidden_dim, p.input_dim
    h_out, c_out = np.zeros(H), np.zeros(H)
    for k in range(H):
        pre = {}
        for g in "fioc":
            v = p.b[g][k]
            for j in range(D):
                v += p.W[g][k, j] * x[j]
            for j in range(H):
                v += p.U[g][k, j] * h[j]
            pre[g] = v
        f, i, o = sig(pre["f"]), sig(pre["i"]), sig(pre["o"])
        cp = f * c[k] + i * math.tanh(pre["c"])
        h_out[k] = o * math.tanh(cp)
        c_out[k] = math.exp(-gamma) * cp
    return h_out, c_out


def scalar_gru(p, h, x):
    H, D = p.hidden_dim, p.input_dim
    pre = {g: np.array([p.b[g][k] + sum(p.W[g][k, j] * x[j] for j in range(D)) for k in range(H)]) for g in "zrh"}
    z = np.array([sig(pre["z"][k] + sum(p.U["z"][k, j] * h[j] for j in range(H))) for k in range(H)])
    r = np.array([sig(pre["r"][k] + sum(p.U["r"][k, j] * h[j] for j in range(H))) for k in range(H)])
    ht = np.array([math.tanh(pre["h"][k] + sum(p.U["h"][k, j] * r[j] * h[j] for j in range(H))) for k in range(H)])
    return (1 - z) * h + z * ht


@pytest.fixture
def lstm_params():
    return CellParams.init("lstm", 5, 3, Rng(11))


def test_lstm_zero_params():
    p = CellParams.zeros("lstm", 4, 2)
    s = lstm_step(p, CellState(np.zeros(4), np.zeros(4)), np.zeros(2))
    assert np.all(s.h == 0) and np.all(s.c == 0)
    s = lstm_step(p, CellState(np.zeros(4), np.ones(4)), np.zeros(2))
    assert np.allclose(s.c, 0.5, atol=0)


def test_lstm_matches_scalar_oracle(lstm_params):
    r = Rng(3)
    h, c, x = r.uniform(-1, 1, 5), r.normal(size=5), r.normal(size=3)
    s = lstm_step(lstm_params, CellState(h, c), x)
    hr, cr = scalar_lstm(lstm_params, h, c, x)
    assert np.max(np.abs(s.h - hr)) <= 1e-12 and np.max(np.abs(s.c - cr)) <= 1e-12


def test_lstm_shape_error(lstm_params):
    with pytest.raises(ShapeError):
        lstm_step(lstm_params, CellState(np.zeros(5), np.zeros(5)), np.zeros(4))


def test_gru_cases():
    p = CellParams.zeros("gru", 3, 2)
    assert np.all(gru_step(p, np.zeros(3), np.zeros(2)) == 0)
    p = CellParams.init("gru", 3, 2, Rng(1))
    p.b["z"][...] = -50.0
    h = np.array([0.3, -0.2, 0.9])
    assert np.allclose(gru_step(p, h, np.ones(2)), h, atol=1e-12)
    p = CellParams.init("gru", 4, 3, Rng(2))
    r = Rng(4)
    h, x = r.uniform(-1, 1, 4), r.normal(size=3)
    assert np.max(np.abs(gru_step(p, h, x) - scalar_gru(p, h, x))) <= 1e-12


def test_litt_identity_gate_is_lstm(lstm_params):
    r = Rng(5)
    s = CellState(r.uniform(-1, 1, 5), r.normal(size=5))
    x = r.normal(size=3)
    new, tr = litt_step(lstm_params, GammaParams.identity(), s, x, 123.0)
    ref = lstm_step(lstm_params, s, x)
    assert np.array_equal(new.h, ref.h) and np.array_equal(new.c, ref.c)
    assert tr.scale == 1.0


def test_litt_halving_example():
    p = CellParams.zeros("lstm", 3, 1)
    new, tr = litt_step(p, GammaParams([0.0], [math.log(2)]), CellState(np.zeros(3), np.ones(3)), np.zeros(1), 5.0)
    assert np.allclose(new.c, 0.25, atol=1e-15)
    assert np.allclose(tr.c_post, tr.scale * tr.c_pre, atol=0)


def test_litt_matches_scalar_oracle(lstm_params):
    r = Rng(6)
    s = CellState(r.uniform(-1, 1, 5), r.normal(size=5))
    x = r.normal(size=3)
    g = GammaParams([0.01], [-0.2])
    new, tr = litt_step(lstm_params, g, s, x, 17.0)
    hr, cr = scalar_lstm(lstm_params, s.h, s.c, x, gamma=0.01 * 17.0 - 0.2)
    assert np.max(np.abs(new.h - hr)) <= 1e-12 and np.max(np.abs(new.c - cr)) <= 1e-12


def test_time_gate_clamp_and_errors():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        new, tr = litt_step(CellParams.zeros("lstm", 2, 1), GammaParams([1.0], [0.0]),
                            CellState(np.zeros(2), np.ones(2)), np.zeros(1), 100.0)
        assert any("clamped" in str(x.message) for x in w)
    assert tr.clamped and tr.gamma == GAMMA_MAX
    with pytest.raises(ValueError):
        time_gate(GammaParams.identity(), float("nan"))
    _, scale, _ = time_gate(GammaParams.identity(), np.array([0.0]))
    assert np.all(scale > 0)


def test_scale_monotone_in_minus_gamma():
    gs = np.linspace(-5, 5, 21)
    scales = [time_gate(GammaParams([0.0], [g]), 1.0)[1] for g in gs]
    assert np.all(np.diff(scales) < 0)


def test_run_sequence_cases(lstm_params):
    r = Rng(8)
    xs = r.normal(size=(20, 3))
    ts = np.cumsum(r.uniform(0, 10, 20))
    s1, tr = run_sequence("lstm", lstm_params, None, xs[:1])
    ref = lstm_step(lstm_params, CellState(np.zeros(5), np.zeros(5)), xs[0])
    assert np.array_equal(s1.h, ref.h) and len(tr) == 1
    a, _ = run_sequence("litt", lstm_params, GammaParams.identity(), xs, ts)
    b, _ = run_sequence("lstm", lstm_params, None, xs)
    assert np.max(np.abs(a.h - b.h)) <= 1e-12
    g = GammaParams([0.002], [0.05])
    s, traces = run_sequence("litt", lstm_params, g, xs, ts)
    h, c = np.zeros(5), np.zeros(5)
    for k in range(20):
        h, c = scalar_lstm(lstm_params, h, c, xs[k], gamma=0.002 * ts[k] + 0.05)
    assert np.max(np.abs(s.h - h)) <= 1e-12 and len(traces) == 20
    assert np.max(np.abs(s.h)) < 1
    with pytest.raises(ValueError):
        run_sequence("lstm", lstm_params, None, np.zeros((0, 3)))


def test_repeated_timestamps_allowed(lstm_params):
    xs = Rng(1).normal(size=(4, 3))
    s, _ = run_sequence("litt", lstm_params, GammaParams([0.01], [0.0]), xs, np.array([0.0, 3.0, 3.0, 3.0]))
    assert np.all(np.isfinite(s.h))


def test_masked_steps_keep_state(lstm_params):
    xs = Rng(2).normal(size=(2, 6, 3))
    mask = np.array([[1, 1, 1, 1, 1, 1], [1, 1, 1, 0, 0, 0]], bool)
    s, _ = run_sequence("lstm", lstm_params, None, xs, mask=mask)
    short, _ = run_sequence("lstm", lstm_params, None, xs[1, :3])
    assert np.max(np.abs(s.h[1] - short.h)) <= 1e-14


def test_lstm_cell_jacobian_is_diag_f(lstm_params):
    r = Rng(9)
    h, c, x = r.uniform(-1, 1, 5), r.normal(size=5), r.normal(size=3)
    _, tr = litt_step(lstm_params, GammaParams.identity(), CellState(h, c), x, 0.0)
    eps = 1e-6
    J = np.zeros((5, 5))
    for k in range(5):
        e = np.zeros(5)
        e[k] = eps
        J[:, k] = (lstm_step(lstm_params, CellState(h, c + e), x).c - lstm_step(lstm_params, CellState(h, c - e), x).c) / (2 * eps)
    assert np.max(np.abs(J - np.diag(tr.f))) <= 1e-8


def test_checkpoint_roundtrip(tmp_path, lstm_params):
    arrays = dict(lstm_params.arrays())
    arrays["gamma_w"] = np.array([1e-300, -3.14159265358979])
    path = tmp_path / "ck.npz"
    save_checkpoint(path, arrays, {"cell_kind": "litt"})
    back, meta = load_checkpoint(path)
    assert meta == {"cell_kind": "litt"}
    for k, v in arrays.items():
        assert back[k].shape == v.shape and np.array_equal(back[k], v)
