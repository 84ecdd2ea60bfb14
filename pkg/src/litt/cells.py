"""Forward passes for LSTM, GRU and the LITT cell.

All step functions accept either single vectors (``h`` of shape ``(H,)``) or
batches (``(N, H)``); the batch axis is leading.

LITT step, in order::

    f, I, o = sigmoid(U h + W x + b)          # per gate
    y       = U_c h + W_c x + b_c             # candidate pre-activation
    c_pre   = f * c + I * tanh(y)
    h'      = o * tanh(c_pre)
    gamma   = w_gamma * t + b_gamma           # scalar per individual
    c_post  = exp(-gamma) * c_pre             # carried to the next step

The hidden state is read from the cell before the time transformation; only
the carried cell is rescaled.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .numkit import Rng, ShapeError, sigmoid

GAMMA_MAX = 30.0
LSTM_GATES = ("f", "i", "o", "c")
GRU_GATES = ("z", "r", "h")
CHECKPOINT_VERSION = 1


@dataclass
class CellParams:
    """Group-level recurrent weights.

    ``W[g]`` is (hidden, input), ``U[g]`` is (hidden, hidden), ``b[g]`` is
    (hidden,).  LSTM/LITT use gates f, i, o, c; GRU uses z, r, h.
    """

    kind: str
    W: dict
    U: dict
    b: dict

    def __post_init__(self):
        gates = GRU_GATES if self.kind == "gru" else LSTM_GATES
        if set(self.W) != set(gates) or set(self.U) != set(gates) or set(self.b) != set(gates):
            raise ShapeError(f"{self.kind} params need gates {gates}")
        H, D = self.W[gates[0]].shape
        for g in gates:
            if self.W[g].shape != (H, D) or self.U[g].shape != (H, H) or self.b[g].shape != (H,):
                raise ShapeError(f"inconsistent shapes for gate {g}")

    @property
    def gates(self):
        return GRU_GATES if self.kind == "gru" else LSTM_GATES

    @property
    def hidden_dim(self) -> int:
        return self.W[self.gates[0]].shape[0]

    @property
    def input_dim(self) -> int:
        return self.W[self.gates[0]].shape[1]

    def arrays(self):
        """Yield ``(name, array)`` for every parameter, in a fixed order."""
        for g in self.gates:
            yield f"W_{g}", self.W[g]
            yield f"U_{g}", self.U[g]
            yield f"b_{g}", self.b[g]

    def copy(self) -> "CellParams":
        return CellParams(
            self.kind,
            {k: v.copy() for k, v in self.W.items()},
            {k: v.copy() for k, v in self.U.items()},
            {k: v.copy() for k, v in self.b.items()},
        )

    @classmethod
    def zeros(cls, kind, hidden_dim, input_dim):
        gates = GRU_GATES if kind == "gru" else LSTM_GATES
        return cls(
            kind,
            {g: np.zeros((hidden_dim, input_dim)) for g in gates},
            {g: np.zeros((hidden_dim, hidden_dim)) for g in gates},
            {g: np.zeros(hidden_dim) for g in gates},
        )

    @classmethod
    def init(cls, kind, hidden_dim, input_dim, rng: Rng, forget_bias=1.0):
        """Uniform(+-1/sqrt(hidden)) weights; LSTM forget bias set to ``forget_bias``."""
        p = cls.zeros(kind, hidden_dim, input_dim)
        bound = 1.0 / np.sqrt(hidden_dim)
        for g in p.gates:
            p.W[g][...] = rng.uniform(-bound, bound, (hidden_dim, input_dim))
            p.U[g][...] = rng.uniform(-bound, bound, (hidden_dim, hidden_dim))
            p.b[g][...] = rng.uniform(-bound, bound, hidden_dim)
        if kind != "gru":
            p.b["f"][...] = forget_bias
        return p


@dataclass
class GammaParams:
    """Time-gate parameters: ``gamma = w * t + b``.

    ``w`` (per day) and ``b`` are arrays of length 1 (shared) or N (one pair
    per individual).
    """

    w: np.ndarray = field(default_factory=lambda: np.zeros(1))
    b: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        self.w = np.atleast_1d(np.asarray(self.w, dtype=np.float64)).copy()
        self.b = np.atleast_1d(np.asarray(self.b, dtype=np.float64)).copy()
        if self.w.shape != self.b.shape or self.w.ndim != 1:
            raise ShapeError("w and b must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise ValueError("non-finite gamma parameters")

    def __len__(self):
        return self.w.shape[0]

    @classmethod
    def identity(cls, n=1):
        return cls(np.zeros(n), np.zeros(n))

    def take(self, idx) -> "GammaParams":
        if len(self) == 1:
            return GammaParams(self.w, self.b)
        return GammaParams(self.w[idx], self.b[idx])

    def copy(self) -> "GammaParams":
        return GammaParams(self.w, self.b)


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray | None = None

    @classmethod
    def zeros(cls, hidden_dim, batch=None, with_cell=True):
        shape = (hidden_dim,) if batch is None else (batch, hidden_dim)
        return cls(np.zeros(shape), np.zeros(shape) if with_cell else None)


@dataclass
class StepTrace:
    """Intermediate values of one LSTM/LITT step, kept for BPTT and timelines."""

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    f: np.ndarray
    i: np.ndarray
    o: np.ndarray
    y: np.ndarray
    g: np.ndarray  # tanh(y)
    c_pre: np.ndarray
    tanh_c: np.ndarray
    h: np.ndarray
    t: np.ndarray
    gamma: np.ndarray
    scale: np.ndarray
    clamped: np.ndarray
    c_post: np.ndarray


@dataclass
class GruTrace:
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    h_tilde: np.ndarray
    h: np.ndarray


def _affine(p: CellParams, gate, h, x):
    return h @ p.U[gate].T + x @ p.W[gate].T + p.b[gate]


def _check(p: CellParams, h, x):
    if x.shape[-1] != p.input_dim or h.shape[-1] != p.hidden_dim:
        raise ShapeError(
            f"input {x.shape} / state {h.shape} do not match "
            f"input_dim={p.input_dim}, hidden_dim={p.hidden_dim}"
        )


def _lstm_core(p: CellParams, h, c, x):
    _check(p, h, x)
    f = sigmoid(_affine(p, "f", h, x))
    i = sigmoid(_affine(p, "i", h, x))
    o = sigmoid(_affine(p, "o", h, x))
    y = _affine(p, "c", h, x)
    g = np.tanh(y)
    c_pre = f * c + i * g
    tanh_c = np.tanh(c_pre)
    return f, i, o, y, g, c_pre, tanh_c, o * tanh_c


def lstm_step(p: CellParams, s: CellState, x) -> CellState:
    x = np.asarray(x, dtype=np.float64)
    *_, c_pre, _, h = _lstm_core(p, s.h, s.c, x)
    return CellState(h, c_pre)


def time_gate(g: GammaParams, t, gamma_max=GAMMA_MAX):
    """Return ``(gamma, scale, clamped)`` for timestamps ``t`` (days)."""
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise ValueError("non-finite timestamp")
    gamma = g.w * t + g.b if len(g) > 1 else g.w[0] * t + g.b[0]
    clamped = np.abs(gamma) > gamma_max
    if np.any(clamped):
        gamma = np.clip(gamma, -gamma_max, gamma_max)
    return gamma, np.exp(-gamma), clamped


def litt_step(p: CellParams, g: GammaParams, s: CellState, x, t):
    """One LITT step.  ``t`` is the absolute timestamp in days (scalar or (N,))."""
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    f, i, o, y, gt, c_pre, tanh_c, h = _lstm_core(p, s.h, s.c, x)
    gamma, scale, clamped = time_gate(g, t)
    if np.any(clamped):
        warnings.warn("time-gate gamma clamped", RuntimeWarning, stacklevel=2)
    c_post = (scale[..., None] if np.ndim(scale) else scale) * c_pre
    trace = StepTrace(
        x=x, h_prev=s.h, c_prev=s.c, f=f, i=i, o=o, y=y, g=gt, c_pre=c_pre,
        tanh_c=tanh_c, h=h, t=t, gamma=gamma, scale=scale, clamped=clamped,
        c_post=c_post,
    )
    return CellState(h, c_post), trace


def gru_step(p: CellParams, h, x, return_trace=False):
    """GRU update ``h' = (1 - z) * h + z * tanh(W_h x + U_h (r * h) + b_h)``."""
    h = np.asarray(h, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check(p, h, x)
    z = sigmoid(_affine(p, "z", h, x))
    r = sigmoid(_affine(p, "r", h, x))
    h_tilde = np.tanh((r * h) @ p.U["h"].T + x @ p.W["h"].T + p.b["h"])
    h_new = (1.0 - z) * h + z * h_tilde
    if return_trace:
        return h_new, GruTrace(x=x, h_prev=h, z=z, r=r, h_tilde=h_tilde, h=h_new)
    return h_new


def run_sequence(cell_kind, params: CellParams, gamma: GammaParams | None, xs, ts=None, mask=None):
    """Run a cell over a sequence from the zero state.

    ``xs`` is (T, D) for one individual or (N, T, D) for a batch; ``ts`` is
    (T,) / (N, T) days (required for LITT).  ``mask`` (N, T) marks real steps;
    padded steps leave the state untouched.  Returns ``(final_state, traces)``.
    """
    xs = np.asarray(xs, dtype=np.float64)
    single = xs.ndim == 2
    if single:
        xs = xs[None]
        ts = None if ts is None else np.asarray(ts, dtype=np.float64)[None]
        mask = None if mask is None else np.asarray(mask)[None]
    N, T, _ = xs.shape
    if T < 1:
        raise ValueError("empty sequence")
    if cell_kind == "litt":
        if ts is None:
            raise ValueError("LITT needs timestamps")
        ts = np.asarray(ts, dtype=np.float64)
        if ts.shape != (N, T):
            raise ShapeError(f"timestamps {ts.shape} do not match sequence {(N, T)}")
        if gamma is None:
            gamma = GammaParams.identity()
    H = params.hidden_dim
    state = CellState.zeros(H, N, with_cell=cell_kind != "gru")
    traces = []
    for k in range(T):
        x = xs[:, k]
        if cell_kind == "gru":
            h_new, tr = gru_step(params, state.h, x, return_trace=True)
            new = CellState(h_new)
        elif cell_kind == "lstm":
            f, i, o, y, gt, c_pre, tanh_c, h = _lstm_core(params, state.h, state.c, x)
            zeros = np.zeros(N)
            tr = StepTrace(
                x=x, h_prev=state.h, c_prev=state.c, f=f, i=i, o=o, y=y, g=gt,
                c_pre=c_pre, tanh_c=tanh_c, h=h, t=zeros, gamma=zeros,
                scale=np.ones(N), clamped=np.zeros(N, bool), c_post=c_pre,
            )
            new = CellState(h, c_pre)
        elif cell_kind == "litt":
            new, tr = litt_step(params, gamma, state, x, ts[:, k])
        else:
            raise ValueError(f"unknown cell kind {cell_kind!r}")
        if mask is not None:
            m = np.asarray(mask[:, k], dtype=np.float64)[:, None]
            new = CellState(
                m * new.h + (1 - m) * state.h,
                None if new.c is None else m * new.c + (1 - m) * state.c,
            )
        traces.append(tr)
        state = new
    if single:
        state = CellState(state.h[0], None if state.c is None else state.c[0])
    return state, traces


def save_checkpoint(path, arrays: dict, meta: dict | None = None):
    """Write a key -> array map (shapes kept) plus a format-version field."""
    payload = {k: np.asarray(v) for k, v in arrays.items()}
    payload["__format_version__"] = np.array(CHECKPOINT_VERSION)
    for k, v in (meta or {}).items():
        payload[f"__meta__{k}"] = np.array(str(v))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(arrays, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["__format_version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        arrays, meta = {}, {}
        for k in z.files:
            if k == "__format_version__":
                continue
            if k.startswith("__meta__"):
                meta[k[len("__meta__"):]] = str(z[k])
            else:
                arrays[k] = z[k].copy()
    return arrays, meta
