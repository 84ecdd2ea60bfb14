"""State-update Jacobians of LSTM and GRU cells and how their products decay over long horizons."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .cells import CellParams, CellState, StepTrace, GruTrace, gru_step, litt_step, GammaParams
from .numkit import Rng

HORIZONS = (10, 50, 100, 200)


def lstm_cell_jacobian(trace: StepTrace) -> np.ndarray:
    """``dc_pre / dc_prev`` at fixed ``h_prev``: ``diag(f)`` (gates do not read ``c``)."""
    f = np.asarray(trace.f, dtype=np.float64)
    if f.ndim != 1:
        raise ValueError("expects a single-individual trace")
    return np.diag(f)


def gru_hidden_jacobian(trace: GruTrace, params: CellParams, full=False) -> np.ndarray:
    """``dh / dh_prev`` for one GRU step.

    Default is the blend form ``diag(1-z) + diag(z) diag(1-h~^2) U_h diag(r)``,
    which treats the gate activations as constants.  ``full=True`` adds the
    paths through ``z`` and ``r``, giving the total derivative of the step map.
    """
    z, r, ht, hp = (np.asarray(a, dtype=np.float64) for a in (trace.z, trace.r, trace.h_tilde, trace.h_prev))
    if z.ndim != 1:
        raise ValueError("expects a single-individual trace")
    Uh = params.U["h"]
    dtanh = 1.0 - ht * ht
    J = np.diag(1.0 - z) + (z * dtanh)[:, None] * Uh * r[None, :]
    if full:
        dz = (z * (1 - z))[:, None] * params.U["z"]  # dz/dh_prev
        dr = (r * (1 - r))[:, None] * params.U["r"]
        # h~ = tanh(U_h (r*h) + ...): d(r*h)/dh = diag(r) + diag(h) dr
        J = J + (ht - hp)[:, None] * dz + (z * dtanh)[:, None] * (Uh @ (hp[:, None] * dr))
    return J


def matrix_norm(M, kind="inf", iters=100):
    """Max-row-sum (``inf``) or spectral (``2``, power iteration) norm."""
    M = np.asarray(M, dtype=np.float64)
    if kind == "inf":
        return float(np.max(np.sum(np.abs(M), axis=1)))
    if kind == "2":
        v = np.ones(M.shape[1]) / np.sqrt(M.shape[1])
        s = 0.0
        for _ in range(iters):
            w = M.T @ (M @ v)
            nw = np.linalg.norm(w)
            if nw == 0:
                return 0.0
            v = w / nw
            s = float(np.sqrt(nw))
        return s
    raise ValueError(f"unknown norm {kind!r}")


def finite_difference_jacobian(fn, v, eps=1e-6):
    """Central-difference Jacobian of ``fn`` at ``v``."""
    v = np.asarray(v, dtype=np.float64)
    cols = []
    for k in range(v.size):
        e = np.zeros_like(v)
        e[k] = eps
        cols.append((fn(v + e) - fn(v - e)) / (2 * eps))
    return np.stack(cols, axis=1)


@dataclass
class JacobianProfile:
    cell: str
    norm: str
    step_norms: np.ndarray  # (trials, T)
    cumulative: np.ndarray  # (trials, T): norm of J_k ... J_1
    horizons: tuple = HORIZONS
    rows: list = field(default_factory=list)  # (horizon, median, q25, q75)

    def median_at(self, horizon):
        return float(np.median(self.cumulative[:, horizon - 1]))

    def summary(self, horizons=None):
        out = []
        for h in (horizons or self.horizons):
            if h > self.cumulative.shape[1]:
                continue
            col = self.cumulative[:, h - 1]
            out.append((h, float(np.median(col)), float(np.quantile(col, 0.25)), float(np.quantile(col, 0.75))))
        return out


def _step_jacobians(cell, params, T, rng: Rng, input_scale):
    H, D = params.hidden_dim, params.input_dim
    xs = input_scale * rng.normal(size=(T, D))
    if cell == "lstm":
        s = CellState(np.zeros(H), np.zeros(H))
        g = GammaParams.identity()
        for k in range(T):
            s, tr = litt_step(params, g, s, xs[k], 0.0)
            yield lstm_cell_jacobian(tr)
    elif cell == "gru":
        h = np.zeros(H)
        for k in range(T):
            h, tr = gru_step(params, h, xs[k], return_trace=True)
            yield gru_hidden_jacobian(tr, params)
    else:
        raise ValueError(f"unknown cell {cell!r}")


def decay_profile(cell, T=200, trials=100, seed=0, hidden_dim=8, input_dim=4, forget_bias=1.0,
                  norm="inf", input_scale=1.0, horizons=HORIZONS) -> JacobianProfile:
    """Norms of cumulative state-Jacobian products over random runs.

    Each trial draws fresh default-initialised parameters (LSTM forget bias
    ``forget_bias``) and N(0, input_scale^2) inputs; LSTM uses the cell path
    ``diag(f)``, GRU the hidden path.
    """
    if T < 1:
        raise ValueError("T must be positive")
    root = Rng(seed)
    step = np.empty((trials, T))
    cum = np.empty((trials, T))
    for k in range(trials):
        r = root.child(k)
        kind = "gru" if cell == "gru" else "lstm"
        params = CellParams.init(kind, hidden_dim, input_dim, r.child(0), forget_bias)
        P = np.eye(hidden_dim)
        for t, J in enumerate(_step_jacobians(cell, params, T, r.child(1), input_scale)):
            P = J @ P
            step[k, t] = matrix_norm(J, norm)
            cum[k, t] = matrix_norm(P, norm)
    prof = JacobianProfile(cell, norm, step, cum, tuple(h for h in horizons if h <= T) or (T,))
    prof.rows = prof.summary()
    return prof


def write_profile_csv(path, profiles):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "horizon", "median_norm", "q25", "q75"])
        for p in profiles:
            for h, med, q25, q75 in p.rows:
                w.writerow([p.cell, h, f"{med:.10g}", f"{q25:.10g}", f"{q75:.10g}"])
