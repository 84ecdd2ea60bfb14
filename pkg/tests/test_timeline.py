import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from litt.numkit import Rng
from litt.timeline import (GammaProfile, OscillatorSpec, accumulate_timeline, damped_closed_form, dedamp, fit_sinusoid,
                           rk4_oscillator, scaling_dispersion, warp_literal, write_trajectory_csv)


def test_accumulate_examples():
    assert np.array_equal(accumulate_timeline(np.zeros(5)).taus, np.ones(5))
    tl = accumulate_timeline([0.1, 0.1, 0.1])
    assert np.allclose(tl.taus, [0.9048, 0.8187, 0.7408], atol=5e-5)
    assert not tl.clamped


def test_accumulate_matches_naive_prefix():
    g = Rng(7).normal(0, 0.3, 200)
    naive = [math.exp(-sum(g[: i + 1])) for i in range(200)]
    assert np.allclose(accumulate_timeline(g).taus, naive, rtol=1e-12, atol=0)


def test_accumulate_clamps_and_rejects():
    tl = accumulate_timeline(np.full(10, -100.0))
    assert tl.clamped and np.all(np.isfinite(tl.taus)) and np.all(tl.taus > 0)
    with pytest.raises(ValueError):
        accumulate_timeline([0.1, np.nan])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=50))
def test_reciprocal_timelines(g):
    prod = accumulate_timeline(g).taus * accumulate_timeline(-np.asarray(g)).taus
    assert np.allclose(prod, 1.0, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.001, 2), min_size=2, max_size=50))
def test_order_preserved_for_positive_increments(neg_g):
    # tau grows with step index exactly when every increment exp(-gamma) exceeds one
    taus = accumulate_timeline(-np.asarray(neg_g)).taus
    assert np.all(np.diff(taus) > 0)


def test_undamped_cosine():
    tr = rk4_oscillator(OscillatorSpec(1.0, GammaProfile.constant(0.0), 1.0, 0.0, 20.0, 0.01))
    assert np.max(np.abs(tr.x - np.cos(tr.t))) < 1e-6


def test_damped_closed_form():
    spec = OscillatorSpec(1.0, GammaProfile.constant(0.2), 1.0, 0.5, 20.0, 0.01)
    tr = rk4_oscillator(spec)
    assert np.max(np.abs(tr.x - damped_closed_form(1.0, 0.2, 1.0, 0.5, tr.t))) < 1e-6


def test_fourth_order_convergence():
    errs = []
    for dt in (0.03, 0.015):
        tr = rk4_oscillator(OscillatorSpec(1.0, GammaProfile.constant(0.2), 1.0, 0.0, 20.0, dt))
        errs.append(np.max(np.abs(tr.x - damped_closed_form(1.0, 0.2, 1.0, 0.0, tr.t))))
    assert 14.0 < errs[0] / errs[1] < 18.0


def test_spec_validation():
    with pytest.raises(ValueError):
        OscillatorSpec(1.0, GammaProfile.constant(2.0))
    with pytest.raises(ValueError):
        OscillatorSpec(-1.0, GammaProfile.constant(0.0))
    with pytest.raises(ValueError):
        OscillatorSpec(1.0, GammaProfile.constant(0.1), dt=0.5)
    with pytest.raises(ValueError):
        GammaProfile.piecewise([0.1, 0.2], [])


def test_dedamp_identity_at_zero_damping():
    tr = rk4_oscillator(OscillatorSpec(1.0, GammaProfile.constant(0.0), 1.0, 0.3, 10.0, 0.01))
    dd = dedamp(tr, C=2.0)
    assert np.allclose(dd.tau, 2.0 * tr.t, atol=1e-9)
    assert np.allclose(dd.u, tr.x, atol=1e-9)
    with pytest.raises(ValueError):
        dedamp(tr, C=-1.0)


@pytest.mark.parametrize("profile", [GammaProfile.constant(0.2), GammaProfile.piecewise([0.1, 0.3], [10.0])])
def test_dedamp_gives_undamped_sinusoid(profile):
    tr = rk4_oscillator(OscillatorSpec(1.0, profile, 1.0, 0.0, 20.0, 0.01))
    dd = dedamp(tr, profile)
    fit = fit_sinusoid(dd.tau, dd.u)
    assert fit.relative_residual < 0.01
    assert abs(fit.omega - 1.0) < 0.005


def test_dedamp_frequency_over_seeded_specs():
    r = Rng(11)
    for k in range(5):
        beta = float(r.uniform(0.5, 3.0))
        g = float(r.uniform(0.0, 0.8 * math.sqrt(beta)))
        spec = OscillatorSpec(beta, GammaProfile.constant(g), 1.0, float(r.uniform(-1, 1)), 15.0, 0.005)
        dd = dedamp(rk4_oscillator(spec))
        fit = fit_sinusoid(dd.tau, dd.u)
        assert abs(fit.omega - math.sqrt(beta)) / math.sqrt(beta) < 0.005


def test_literal_warp_leaves_residual():
    p = GammaProfile.piecewise([0.1, 0.3], [10.0])
    tr = rk4_oscillator(OscillatorSpec(1.0, p, 1.0, 0.0, 20.0, 0.01))
    lit = warp_literal(tr)
    fit = fit_sinusoid(lit.tau, lit.u)
    assert fit.relative_residual > 0.01 or abs(fit.omega - 1.0) > 0.005


def test_dispersion_cases():
    same = [accumulate_timeline([0.1, 0.2, 0.3])] * 4
    res = scaling_dispersion(same, [2, 2, 2, 2])
    assert np.all(res.taus == res.taus[0])
    a = accumulate_timeline([0.5, 0.5], [1.0, 2.0])
    b = accumulate_timeline([0.0, -1.0], [1.0, 3.0])
    res = scaling_dispersion([a, b], [1, 1])
    assert np.allclose(res.taus, [math.exp(-1.0), math.exp(1.0)], rtol=1e-14)
    prod = scaling_dispersion([a, b], [1, 1], form="product")
    assert np.allclose(prod.taus, [math.exp(-1.0), math.exp(3.0)], rtol=1e-14)
    res = scaling_dispersion([a, b], [None, 0])
    assert res.n_excluded == 1 and list(res.included) == [1]


def test_dispersion_matches_recomputation():
    r = Rng(5)
    tls, idx, expect = [], [], []
    for j in range(30):
        g = r.normal(0, 0.2, 12)
        tls.append(accumulate_timeline(g))
        k = int(r.integers(0, 12))
        idx.append(k)
        expect.append(math.exp(-sum(g[: k + 1])))
    assert np.allclose(scaling_dispersion(tls, idx).taus, expect, rtol=1e-12)


def test_trajectory_csv(tmp_path):
    tr = rk4_oscillator(OscillatorSpec(1.0, GammaProfile.constant(0.2), duration=1.0, dt=0.01))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, tr, dedamp(tr))
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "x", "tau", "x_dedamped"]
    assert len(rows) == tr.t.size + 1
