"""Hand-derived BPTT for LSTM / GRU / LITT, finite-difference checking, Adam, training.

Everything is batched over individuals: a :class:`SeqBatch` holds padded
``(N, T, D)`` inputs with a step mask, and gradients of the mean per-individual
loss are returned.  Individual-level gamma gradients come back per row, so an
individual's gate parameters only ever see that individual's loss term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cells import CellParams, GammaParams, run_sequence
from .metrics import rmse_days
from .numkit import Rng, ShapeError


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class LossSpec:
    """``timing_mse`` squares the error against every label (censoring ignored);
    ``masked_timing_mse`` uses uncensored individuals only and, with
    ``censor_handling``, adds ``max(0, last_obs - pred)^2`` for censored ones."""

    kind: str = "masked_timing_mse"
    censor_handling: bool = True

    def __post_init__(self):
        if self.kind not in ("timing_mse", "masked_timing_mse"):
            raise ValueError(f"unknown loss kind {self.kind!r}")


@dataclass
class SeqBatch:
    xs: np.ndarray  # (N, T, D)
    ts: np.ndarray  # (N, T) days
    mask: np.ndarray  # (N, T) bool
    target: np.ndarray  # (N,) days, nan when censored
    censored: np.ndarray  # (N,) bool
    last_obs: np.ndarray  # (N,) days

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        N, T, _ = self.xs.shape
        self.ts = np.asarray(self.ts, dtype=np.float64).reshape(N, T)
        self.mask = np.ones((N, T), bool) if self.mask is None else np.asarray(self.mask, bool)
        self.target = np.asarray(self.target, dtype=np.float64).reshape(N)
        self.censored = (np.zeros(N, bool) if self.censored is None
                         else np.asarray(self.censored, bool).reshape(N))
        self.last_obs = (np.full(N, np.inf) if self.last_obs is None
                         else np.asarray(self.last_obs, dtype=np.float64).reshape(N))

    def __len__(self):
        return self.xs.shape[0]

    @property
    def lengths(self):
        return self.mask.sum(axis=1)

    def take(self, idx) -> "SeqBatch":
        return SeqBatch(self.xs[idx], self.ts[idx], self.mask[idx], self.target[idx],
                        self.censored[idx], self.last_obs[idx])

    @classmethod
    def single(cls, xs, ts, target, censored=False, last_obs=None):
        xs = np.asarray(xs, dtype=np.float64)
        ts = np.zeros(xs.shape[0]) if ts is None else ts
        return cls(xs[None], np.asarray(ts, dtype=np.float64)[None], None,
                   np.array([target], dtype=np.float64), np.array([censored]),
                   None if last_obs is None else np.array([last_obs]))


@dataclass
class Model:
    """Recurrent backbone plus affine readout.

    Predicted day = ``target_shift + target_scale * (h_T . w_out + b_out)``.
    ``gamma`` is None for LSTM/GRU, length 1 when shared, length N with one
    row per training individual.
    """

    cell_kind: str
    params: CellParams
    w_out: np.ndarray
    b_out: float = 0.0
    gamma: GammaParams | None = None
    target_shift: float = 0.0
    target_scale: float = 1.0
    ids: list = field(default_factory=list)

    def copy(self) -> "Model":
        return replace(self, params=self.params.copy(), w_out=self.w_out.copy(),
                       gamma=None if self.gamma is None else self.gamma.copy(),
                       ids=list(self.ids))

    def arrays(self) -> dict:
        out = dict(self.params.arrays())
        out["w_out"] = self.w_out
        out["b_out"] = np.array([self.b_out])
        if self.gamma is not None:
            out["gamma_w"] = self.gamma.w
            out["gamma_b"] = self.gamma.b
        return out

    def to_checkpoint(self) -> tuple[dict, dict]:
        arrays = {k: np.array(v) for k, v in self.arrays().items()}
        arrays["target"] = np.array([self.target_shift, self.target_scale])
        if self.ids:
            arrays["ids"] = np.array([str(i) for i in self.ids])
        return arrays, {"cell_kind": self.cell_kind, "param_kind": self.params.kind}

    @classmethod
    def from_checkpoint(cls, arrays: dict, meta: dict) -> "Model":
        kind = meta["param_kind"]
        gates = ("z", "r", "h") if kind == "gru" else ("f", "i", "o", "c")
        params = CellParams(kind, {g: arrays[f"W_{g}"] for g in gates},
                            {g: arrays[f"U_{g}"] for g in gates},
                            {g: arrays[f"b_{g}"] for g in gates})
        gamma = None
        if "gamma_w" in arrays:
            gamma = GammaParams(arrays["gamma_w"], arrays["gamma_b"])
        shift, scale = arrays["target"]
        return cls(meta["cell_kind"], params, arrays["w_out"], float(arrays["b_out"][0]),
                   gamma, float(shift), float(scale),
                   [str(i) for i in arrays.get("ids", [])])


def readout(h_final, w_out, b_out):
    """Affine map of the final hidden state to a predicted event day."""
    h = np.asarray(h_final, dtype=np.float64)
    w = np.asarray(w_out, dtype=np.float64)
    if h.shape[-1] != w.shape[0]:
        raise ShapeError(f"hidden {h.shape} vs readout {w.shape}")
    out = h @ w + b_out
    return float(out) if np.ndim(out) == 0 else out


def forward(model: Model, batch: SeqBatch, gamma: GammaParams | None = None):
    """Run the backbone; returns ``(pred_days, final_state, traces)``."""
    g = model.gamma if gamma is None else gamma
    if g is not None and len(g) not in (1, len(batch)):
        raise ValueError(f"gamma has {len(g)} rows for a batch of {len(batch)}; "
                         "calibrate or pass gamma for new individuals")
    state, traces = run_sequence(model.cell_kind, model.params, g, batch.xs, batch.ts, batch.mask)
    pred = model.target_shift + model.target_scale * readout(state.h, model.w_out, model.b_out)
    return pred, state, traces


def predict(model: Model, batch: SeqBatch, gamma: GammaParams | None = None):
    return forward(model, batch, gamma)[0]


def loss_terms(pred, batch: SeqBatch, loss: LossSpec, scale=1.0):
    """Per-individual loss and d(loss)/d(pred), in units of ``scale`` days."""
    r = np.zeros_like(pred)
    if loss.kind == "timing_mse":
        r = (pred - batch.target) / scale
    else:
        obs = ~batch.censored
        r[obs] = (pred[obs] - batch.target[obs]) / scale
        if loss.censor_handling:
            cen = batch.censored
            # one-sided: only predictions before the last observed day are penalised
            r[cen] = np.minimum(0.0, (pred[cen] - batch.last_obs[cen]) / scale)
    return r * r, 2.0 * r / scale


def bptt(model: Model, batch: SeqBatch, loss: LossSpec = LossSpec(),
         gamma: GammaParams | None = None, truncation: int | None = None,
         loss_scale: float = 1.0, _sign_flip: bool = False):
    """Mean loss over the batch and its gradient w.r.t. every parameter.

    Returns ``(loss, grads)``.  ``grads`` mirrors :meth:`Model.arrays`; the
    gamma entries have one row per batch individual when ``gamma`` is
    individual-level (length N) and a single row when shared.
    """
    g = model.gamma if gamma is None else gamma
    pred, state, traces = forward(model, batch, g)
    per, dpred = loss_terms(pred, batch, loss, loss_scale)
    N = len(batch)
    L = float(np.mean(per))
    if not math.isfinite(L):
        raise DivergenceError(f"non-finite loss {L}")
    dpred = dpred / N
    p = model.params
    grads = {name: np.zeros_like(a) for name, a in p.arrays()}
    grads["w_out"] = model.target_scale * (state.h.T @ dpred)
    grads["b_out"] = np.array([model.target_scale * dpred.sum()])
    dh = (model.target_scale * dpred)[:, None] * model.w_out[None, :]
    mask = batch.mask.astype(np.float64)
    lengths = batch.lengths
    if model.cell_kind == "gru":
        _bptt_gru(p, traces, dh, mask, grads, lengths, truncation)
    else:
        dgamma = _bptt_lstm(p, traces, dh, mask, grads, lengths, truncation,
                            model.cell_kind == "litt")
        if model.cell_kind == "litt":
            tsum_w = (dgamma * batch.ts).sum(axis=1)
            tsum_b = dgamma.sum(axis=1)
            if len(g) == 1:
                grads["gamma_w"] = np.array([tsum_w.sum()])
                grads["gamma_b"] = np.array([tsum_b.sum()])
            else:
                grads["gamma_w"] = tsum_w
                grads["gamma_b"] = tsum_b
    if _sign_flip:
        # mutation hook for checking that gradcheck catches a broken derivative
        grads["W_" + p.gates[0]] = -grads["W_" + p.gates[0]]
    return L, grads


def _truncate(k, lengths, truncation, *arrays):
    if truncation is None:
        return
    stop = k < lengths - truncation
    if np.any(stop):
        for a in arrays:
            a[stop] = 0.0


def _bptt_lstm(p, traces, dh, mask, grads, lengths, truncation, litt):
    N, H = dh.shape
    dc = np.zeros((N, H))
    T = len(traces)
    dgamma = np.zeros((N, T))
    for k in range(T - 1, -1, -1):
        _truncate(k, lengths, truncation, dh, dc)
        tr = traces[k]
        m = mask[:, k][:, None]
        dh_s, dc_s = m * dh, m * dc
        dh_pass, dc_pass = dh - dh_s, dc - dc_s
        scale = tr.scale[:, None]
        dc_pre = scale * dc_s + dh_s * tr.o * (1.0 - tr.tanh_c ** 2)
        if litt:
            ds = np.sum(dc_s * tr.c_pre, axis=1)
            dgamma[:, k] = np.where(tr.clamped, 0.0, -tr.scale * ds)
        d_o = dh_s * tr.tanh_c
        d_f = dc_pre * tr.c_prev
        d_i = dc_pre * tr.g
        d_g = dc_pre * tr.i
        dc_prev = dc_pre * tr.f
        pre = {
            "f": d_f * tr.f * (1.0 - tr.f),
            "i": d_i * tr.i * (1.0 - tr.i),
            "o": d_o * tr.o * (1.0 - tr.o),
            "c": d_g * (1.0 - tr.g ** 2),
        }
        dh_prev = np.zeros((N, H))
        for gate, da in pre.items():
            grads[f"W_{gate}"] += da.T @ tr.x
            grads[f"U_{gate}"] += da.T @ tr.h_prev
            grads[f"b_{gate}"] += da.sum(axis=0)
            dh_prev += da @ p.U[gate]
        dh = dh_prev + dh_pass
        dc = dc_prev + dc_pass
    return dgamma


def _bptt_gru(p, traces, dh, mask, grads, lengths, truncation):
    for k in range(len(traces) - 1, -1, -1):
        _truncate(k, lengths, truncation, dh)
        tr = traces[k]
        m = mask[:, k][:, None]
        dh_s = m * dh
        dh_pass = dh - dh_s
        dz = dh_s * (tr.h_tilde - tr.h_prev)
        dht = dh_s * tr.z
        dh_prev = dh_s * (1.0 - tr.z)
        da_h = dht * (1.0 - tr.h_tilde ** 2)
        rh = tr.r * tr.h_prev
        grads["W_h"] += da_h.T @ tr.x
        grads["U_h"] += da_h.T @ rh
        grads["b_h"] += da_h.sum(axis=0)
        drh = da_h @ p.U["h"]
        dr = drh * tr.h_prev
        dh_prev += drh * tr.r
        for gate, da in (("z", dz * tr.z * (1.0 - tr.z)), ("r", dr * tr.r * (1.0 - tr.r))):
            grads[f"W_{gate}"] += da.T @ tr.x
            grads[f"U_{gate}"] += da.T @ tr.h_prev
            grads[f"b_{gate}"] += da.sum(axis=0)
            dh_prev += da @ p.U[gate]
        dh = dh_prev + dh_pass


def _param_views(model: Model, gamma: GammaParams | None):
    """Mutable references to every parameter array, keyed like the gradients."""
    views = dict(model.params.arrays())
    views["w_out"] = model.w_out
    g = model.gamma if gamma is None else gamma
    if model.cell_kind == "litt" and g is not None:
        views["gamma_w"] = g.w
        views["gamma_b"] = g.b
    return views


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: tuple  # (parameter name, flat index)
    n_coords: int

    def passed(self, tol=1e-5) -> bool:
        return self.max_rel_error <= tol


def loss_only(model: Model, batch: SeqBatch, loss: LossSpec = LossSpec(), gamma=None) -> float:
    pred = predict(model, batch, gamma)
    return float(np.mean(loss_terms(pred, batch, loss)[0]))


def finite_diff_check(model: Model, batch: SeqBatch, loss: LossSpec = LossSpec(),
                      epsilon: float = 1e-4, gamma: GammaParams | None = None,
                      floor: float = 1e-6, _sign_flip=False) -> GradCheckResult:
    """Compare :func:`bptt` against central differences on every coordinate.

    Uses the fourth-order central stencil
    ``(8[f(x+e) - f(x-e)] - [f(x+2e) - f(x-2e)]) / 12e``.  The step for
    ``gamma_w`` is divided by the rms timestamp because ``w`` multiplies ``t``.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``: gradients smaller
    than ``floor`` sit at the roundoff level of the differenced loss.
    """
    if not 1e-8 <= epsilon <= 1e-4:
        raise ValueError("epsilon must lie in [1e-8, 1e-4]")
    model = model.copy()
    if model.cell_kind == "litt":
        model.gamma = (model.gamma if gamma is None else gamma).copy()
    _, grads = bptt(model, batch, loss, _sign_flip=_sign_flip)
    b_out = np.array([model.b_out])
    views = _param_views(model, None)
    views["b_out"] = b_out
    t_scale = _time_scale(batch)

    def f():
        model.b_out = float(b_out[0])
        return loss_only(model, batch, loss)

    worst, worst_at, n = 0.0, None, 0
    for name, arr in views.items():
        flat = arr.reshape(-1)
        ga = grads[name].reshape(-1)
        e = epsilon / t_scale if name == "gamma_w" else epsilon
        for j in range(flat.size):
            old = flat[j]
            vals = []
            for d in (e, -e, 2 * e, -2 * e):
                flat[j] = old + d
                vals.append(f())
            flat[j] = old
            num = (8.0 * (vals[0] - vals[1]) - (vals[2] - vals[3])) / (12.0 * e)
            ana = ga[j]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            n += 1
            if err > worst:
                worst, worst_at = err, (name, j)
    return GradCheckResult(float(worst), worst_at, n)


@dataclass
class OptState:
    """Adam state.  ``m``/``v`` map parameter name -> moment arrays."""

    lr: float = 1e-2
    clip: float | None = 5.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_scale: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)


def clip_global_norm(grads: dict, threshold: float | None):
    """Scale all gradients so their joint L2 norm is at most ``threshold``."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if threshold is None or total <= threshold or total == 0.0:
        return grads, total
    s = threshold / total
    return {k: g * s for k, g in grads.items()}, total


def optimizer_step(opt: OptState, params: dict, grads: dict, rows: dict | None = None) -> dict:
    """One bias-corrected Adam update after global-norm clipping.

    Row-indexed parameters are left out of the global norm and clipped per row.

    ``params`` maps names to arrays (updated copies are returned).  ``rows``
    optionally maps a name to the row indices its gradient refers to; only those
    rows (and their moments and step counts) are touched, which keeps
    per-individual parameters isolated across mini-batches.
    """
    rows = rows or {}
    # row-indexed (per-individual) gradients are clipped row by row so one
    # individual's data never rescales another's update
    shared = {k: g for k, g in grads.items() if k not in rows}
    shared, _ = clip_global_norm(shared, opt.clip)
    per_row = {k: np.asarray(g, dtype=np.float64) for k, g in grads.items() if k in rows}
    if per_row and opt.clip is not None:
        norms = np.sqrt(sum(g * g for g in per_row.values()))
        s = np.where(norms > opt.clip, opt.clip / np.where(norms > 0, norms, 1.0), 1.0)
        per_row = {k: g * s for k, g in per_row.items()}
    grads = {**shared, **per_row}
    out = {}
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = value
            continue
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}")
        lr = opt.lr * opt.lr_scale.get(name, 1.0)
        value = np.array(value, dtype=np.float64, copy=True)
        if name not in opt.m:
            opt.m[name] = np.zeros_like(value)
            opt.v[name] = np.zeros_like(value)
            opt.steps[name] = np.zeros(value.shape[0] if name in rows else 1, dtype=np.int64)
        idx = rows.get(name)
        if idx is None:
            opt.steps[name] += 1
            t = opt.steps[name][0]
            m = opt.m[name] = opt.beta1 * opt.m[name] + (1 - opt.beta1) * g
            v = opt.v[name] = opt.beta2 * opt.v[name] + (1 - opt.beta2) * g * g
            mh = m / (1 - opt.beta1 ** t)
            vh = v / (1 - opt.beta2 ** t)
            value -= lr * mh / (np.sqrt(vh) + opt.eps)
        else:
            opt.steps[name][idx] += 1
            t = opt.steps[name][idx]
            m = opt.beta1 * opt.m[name][idx] + (1 - opt.beta1) * g
            v = opt.beta2 * opt.v[name][idx] + (1 - opt.beta2) * g * g
            opt.m[name][idx] = m
            opt.v[name][idx] = v
            mh = m / (1 - opt.beta1 ** t)
            vh = v / (1 - opt.beta2 ** t)
            value[idx] -= lr * mh / (np.sqrt(vh) + opt.eps)
        out[name] = value
    return out


@dataclass
class TrainConfig:
    cell: str = "litt"
    mode: str = "ind"  # ind | shared | no_ind (gamma frozen at identity)
    epochs: int = 40
    lr: float = 1e-2
    lr_gamma: float | None = None
    hidden_dim: int = 8
    clip: float | None = 5.0
    seed: int = 0
    batch_size: int | None = 32
    truncation: int | None = None
    forget_bias: float = 1.0
    loss: LossSpec = field(default_factory=LossSpec)

    def __post_init__(self):
        if self.cell not in ("litt", "lstm", "gru"):
            raise ValueError(f"unknown cell {self.cell!r}")
        if self.mode not in ("ind", "shared", "no_ind"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def from_mapping(cls, kv: dict) -> "TrainConfig":
        conv = {
            "cell": str, "mode": str, "epochs": int, "lr": float, "lr_gamma": float,
            "hidden_dim": int, "clip": float, "seed": int, "batch_size": int,
            "truncation": int, "forget_bias": float,
        }
        args = {}
        loss = {}
        for k, v in kv.items():
            if k in ("loss", "loss_kind"):
                loss["kind"] = str(v)
            elif k == "censor_handling":
                loss["censor_handling"] = str(v).lower() in ("1", "true", "yes")
            elif k in conv:
                sv = str(v).strip()
                args[k] = None if sv.lower() in ("none", "") else conv[k](sv)
            elif k in ("folds",):
                continue
            else:
                raise KeyError(f"unknown training option {k!r}")
        if loss:
            args["loss"] = LossSpec(**loss)
        return cls(**args)


def batch_from_cohort(cohort) -> SeqBatch:
    return SeqBatch(cohort.x, cohort.t, cohort.mask, cohort.label_day, cohort.censored,
                    cohort.last_obs_day)


def init_model(cfg: TrainConfig, input_dim: int, n_individuals: int, rng: Rng) -> Model:
    kind = "gru" if cfg.cell == "gru" else "lstm"
    params = CellParams.init(kind, cfg.hidden_dim, input_dim, rng.child(1), cfg.forget_bias)
    bound = 1.0 / math.sqrt(cfg.hidden_dim)
    w_out = rng.child(2).uniform(-bound, bound, cfg.hidden_dim)
    gamma = None
    if cfg.cell == "litt":
        gamma = GammaParams.identity(n_individuals if cfg.mode == "ind" else 1)
    return Model(cfg.cell, params, w_out, 0.0, gamma)


def _target_stats(batch: SeqBatch):
    obs = ~batch.censored & np.isfinite(batch.target)
    y = batch.target[obs]
    if y.size == 0:
        y = batch.last_obs[np.isfinite(batch.last_obs)]
    shift = float(np.mean(y)) if y.size else 0.0
    scale = float(np.std(y)) if y.size > 1 else 0.0
    return shift, (scale if scale > 1e-9 else 1.0)


def _time_scale(batch: SeqBatch) -> float:
    t = batch.ts[batch.mask]
    s = float(np.sqrt(np.mean(t * t))) if t.size else 0.0
    return s if s > 0 else 1.0


def _rmse_or_nan(pred, batch: SeqBatch) -> float:
    try:
        return rmse_days(pred, batch.target, batch.censored)
    except ValueError:
        return float("nan")


def _gamma_lr_scales(cfg: TrainConfig, batch: SeqBatch):
    lr_g = cfg.lr if cfg.lr_gamma is None else cfg.lr_gamma
    # w_gamma is per day; step it in units of the typical timestamp
    return {"gamma_w": lr_g / cfg.lr / _time_scale(batch), "gamma_b": lr_g / cfg.lr}


def train(cohort_or_batch, cfg: TrainConfig, callback=None):
    """Fit a model on a cohort; returns ``(model, rmse_trace)``.

    ``rmse_trace[e]`` is the training RMSE (days, uncensored individuals) after
    epoch ``e + 1``.  Mini-batches are drawn from a seeded permutation and
    gradients are reduced in a fixed order, so runs are reproducible.
    """
    batch = cohort_or_batch if isinstance(cohort_or_batch, SeqBatch) else batch_from_cohort(cohort_or_batch)
    N = len(batch)
    if N == 0:
        raise ValueError("empty cohort")
    rng = Rng(cfg.seed)
    model = init_model(cfg, batch.xs.shape[2], N, rng)
    model.target_shift, model.target_scale = _target_stats(batch)
    ids = getattr(cohort_or_batch, "ids", None)
    model.ids = [str(i) for i in ids] if ids is not None else []
    opt = OptState(lr=cfg.lr, clip=cfg.clip)
    if cfg.cell == "litt":
        opt.lr_scale.update(_gamma_lr_scales(cfg, batch))
    bs = N if not cfg.batch_size else min(cfg.batch_size, N)
    shuffle = rng.child(3)
    trace = []
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(N)
        for start in range(0, N, bs):
            idx = np.sort(order[start:start + bs])
            sub = batch.take(idx)
            g = None
            if cfg.cell == "litt":
                g = model.gamma.take(idx)
            _, grads = bptt(model, sub, cfg.loss, gamma=g, truncation=cfg.truncation,
                            loss_scale=model.target_scale)
            _apply(model, opt, grads, cfg, idx)
        pred = predict(model, batch)
        rmse = _rmse_or_nan(pred, batch)
        if not math.isfinite(float(np.mean(loss_terms(pred, batch, cfg.loss, model.target_scale)[0]))):
            raise DivergenceError(f"non-finite loss at epoch {epoch + 1}")
        trace.append(rmse)
        if callback is not None:
            callback(epoch + 1, rmse, model)
    return model, trace


def _apply(model: Model, opt: OptState, grads: dict, cfg: TrainConfig, idx):
    params = dict(model.params.arrays())
    params["w_out"] = model.w_out
    params["b_out"] = np.array([model.b_out])
    rows = {}
    if cfg.cell == "litt":
        if cfg.mode == "no_ind":
            grads = {k: v for k, v in grads.items() if not k.startswith("gamma_")}
        else:
            params["gamma_w"] = model.gamma.w
            params["gamma_b"] = model.gamma.b
            if cfg.mode == "ind":
                rows = {"gamma_w": idx, "gamma_b": idx}
    new = optimizer_step(opt, params, grads, rows)
    for gname in model.params.gates:
        model.params.W[gname] = new[f"W_{gname}"]
        model.params.U[gname] = new[f"U_{gname}"]
        model.params.b[gname] = new[f"b_{gname}"]
    model.w_out = new["w_out"]
    model.b_out = float(new["b_out"][0])
    if "gamma_w" in new:
        model.gamma = GammaParams(new["gamma_w"], new["gamma_b"])


def fit_gamma(model: Model, batch: SeqBatch, steps=200, lr=0.05, loss: LossSpec = LossSpec(),
              init: GammaParams | None = None, clip=None, ridge=0.0, center=0.0):
    """Fit per-individual gate parameters with every group-level weight frozen.

    Each row of ``batch`` gets its own ``(w, b)``; ``ridge > 0`` adds
    ``ridge * (b - center)^2`` to each row's loss.  Returns ``(gamma, final_loss)``
    with the unpenalised mean loss.
    """
    if model.cell_kind != "litt":
        raise ValueError("gamma fitting needs a LITT model")
    N = len(batch)
    if init is None:
        base = model.gamma if model.gamma is not None else GammaParams.identity()
        init = GammaParams(np.full(N, float(np.mean(base.w))), np.full(N, float(np.mean(base.b))))
    gamma = init.copy()
    opt = OptState(lr=lr, clip=clip)
    opt.lr_scale["gamma_w"] = 1.0 / _time_scale(batch)
    for _ in range(steps):
        _, grads = bptt(model, batch, loss, gamma=gamma, loss_scale=model.target_scale)
        # per-row objective: undo the batch mean so each individual sees its own loss
        gb = grads["gamma_b"] * N + 2.0 * ridge * (gamma.b - center)
        new = optimizer_step(opt, {"gamma_w": gamma.w, "gamma_b": gamma.b},
                             {"gamma_w": grads["gamma_w"] * N, "gamma_b": gb})
        gamma = GammaParams(new["gamma_w"], new["gamma_b"])
    pred = predict(model, batch, gamma)
    per, _ = loss_terms(pred, batch, loss, model.target_scale)
    return gamma, float(np.mean(per))


def gradcheck_sweep(n_configs=25, seed=0, max_T=20, max_hidden=8, cells=("lstm", "gru", "litt"),
                    epsilon=1e-4, _sign_flip=False):
    """Seeded random configurations per cell kind; returns ``{cell: [GradCheckResult]}``.

    Configurations cover T=1, padded sequences, censored rows and both gamma
    modes; targets are O(1) so finite-difference roundoff stays small.
    """
    if max_T < 1 or max_hidden < 1:
        raise ValueError("max_T and max_hidden must be positive")
    rng = Rng(seed)
    out = {c: [] for c in cells}
    for k in range(n_configs):
        r = rng.child(k)
        T = 1 if k == 0 or max_T < 2 else int(r.integers(2, max_T + 1))
        H = int(r.integers(1, max_hidden + 1))
        D = int(r.integers(1, 5))
        N = int(r.integers(1, 4))
        mask = np.ones((N, T), bool)
        if T > 2 and N > 1:
            mask[0, int(r.integers(1, T)):] = False
        censored = np.zeros(N, bool)
        if N > 1:
            censored[-1] = True
        target = r.normal(0.0, 1.0, N)
        target[censored] = np.nan
        ts = np.cumsum(r.uniform(0.2, 1.5, (N, T)), axis=1)
        last_obs = r.normal(1.0, 0.5, N)
        batch = SeqBatch(r.normal(size=(N, T, D)), ts, mask, target, censored, last_obs)
        for ci, cell in enumerate(cells):
            mode = "ind" if k % 2 == 0 else "shared"
            cfg = TrainConfig(cell=cell, mode=mode, hidden_dim=H)
            model = init_model(cfg, D, N, r.child(100 + ci))
            if cell == "litt":
                n = len(model.gamma)
                # mild rates: strongly negative gamma saturates the cell and leaves only roundoff
                model.gamma = GammaParams(r.normal(0, 0.01, n), r.normal(0.05, 0.1, n))
            out[cell].append(finite_diff_check(model, batch, LossSpec(), epsilon=epsilon,
                                               _sign_flip=_sign_flip))
    return out
