"""Relative timelines and the damped-oscillator reference problem.

A relative timeline is ``tau_i = exp(-sum_{l<=i} gamma_l)``.  The oscillator
code integrates ``x'' + gamma(t) x' + beta x = 0`` with fixed-step RK4 and
checks that a change of time variable turns the damped trajectory into an
undamped sinusoid.

The bare exponential warp ``tau' = C exp(-int gamma)`` removes the damping
term only together with an amplitude factor; with time-varying gamma the
frequency of the result still drifts.  :func:`dedamp` therefore uses the
phase-amplitude (Milne) form of the same warp: with fundamental solutions
``x1, x2`` and ``rho^2 = x1^2 + x2^2`` the Wronskian is
``sqrt(beta) exp(-int gamma)``, so ``tau' = C exp(-int gamma) / rho^2`` and
``x / rho = A cos(sqrt(beta) tau) + B sin(sqrt(beta) tau)`` exactly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import minimize_scalar

EXP_LIMIT = 700.0
RK4_ERROR_BOUND = 1e-8


@dataclass
class RelativeTimeline:
    taus: np.ndarray
    gammas: np.ndarray
    cumulative_t: np.ndarray
    clamped: bool = False

    def __len__(self):
        return self.taus.shape[0]


def accumulate_timeline(gammas, cumulative_t=None) -> RelativeTimeline:
    """``tau_i = exp(-prefix_sum(gamma)_i)``; exponents beyond +-700 are clamped and flagged."""
    g = np.asarray(gammas, dtype=np.float64).ravel()
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gamma")
    expo = -np.cumsum(g)
    clamped = bool(np.any(np.abs(expo) > EXP_LIMIT))
    taus = np.exp(np.clip(expo, -EXP_LIMIT, EXP_LIMIT))
    ct = np.zeros_like(g) if cumulative_t is None else np.asarray(cumulative_t, dtype=np.float64).ravel()
    if ct.shape != g.shape:
        raise ValueError("cumulative_t length differs from gammas")
    return RelativeTimeline(taus, g, ct, clamped)


def model_timelines(traces, mask=None) -> list:
    """Per-individual timelines from LITT forward traces (real steps only)."""
    gam = np.stack([np.broadcast_to(tr.gamma, tr.t.shape) for tr in traces], axis=1)
    ts = np.stack([tr.t for tr in traces], axis=1)
    N, T = gam.shape
    m = np.ones((N, T), bool) if mask is None else np.asarray(mask, bool)
    return [accumulate_timeline(gam[j, m[j]], ts[j, m[j]]) for j in range(N)]


@dataclass
class DispersionResult:
    taus: np.ndarray
    included: np.ndarray  # indices of individuals used
    n_excluded: int


def scaling_dispersion(timelines, event_index, form="sum") -> DispersionResult:
    """Relative time of one event per individual.

    ``event_index[j]`` is the step of the event for individual ``j`` (negative
    or None when absent; such individuals are excluded and counted).
    ``form="sum"`` reads ``tau`` from the accumulated timeline;
    ``form="product"`` uses ``exp(-V_i T_i)`` with the step's gamma as ``V_i``
    and the cumulative absolute time ``T_i``.  The two agree only when steps
    are uniform in time, so both are offered.
    """
    if form not in ("sum", "product"):
        raise ValueError(f"unknown form {form!r}")
    vals, used = [], []
    for j, (tl, k) in enumerate(zip(timelines, event_index)):
        if k is None or k < 0 or k >= len(tl):
            continue
        if form == "sum":
            vals.append(tl.taus[k])
        else:
            vals.append(math.exp(-float(np.clip(tl.gammas[k] * tl.cumulative_t[k], -EXP_LIMIT, EXP_LIMIT))))
        used.append(j)
    return DispersionResult(np.array(vals, dtype=np.float64), np.array(used, dtype=np.int64),
                            len(timelines) - len(used))


@dataclass(frozen=True)
class GammaProfile:
    """Damping profile: ``constant`` (values=(g,)), ``piecewise`` (values per
    segment, ``breaks`` interior boundaries) or ``linear`` (values=(g0, slope))."""

    kind: str
    values: tuple
    breaks: tuple = ()

    def __post_init__(self):
        if self.kind == "constant" and len(self.values) != 1:
            raise ValueError("constant profile takes one value")
        if self.kind == "linear" and len(self.values) != 2:
            raise ValueError("linear profile takes (intercept, slope)")
        if self.kind == "piecewise" and len(self.values) != len(self.breaks) + 1:
            raise ValueError("piecewise profile needs len(breaks)+1 values")
        if self.kind not in ("constant", "piecewise", "linear"):
            raise ValueError(f"unknown profile {self.kind!r}")

    @classmethod
    def constant(cls, g):
        return cls("constant", (float(g),))

    @classmethod
    def piecewise(cls, values, breaks):
        return cls("piecewise", tuple(float(v) for v in values), tuple(float(b) for b in breaks))

    @classmethod
    def linear(cls, g0, slope):
        return cls("linear", (float(g0), float(slope)))

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "constant":
            out = np.full(t.shape, self.values[0])
        elif self.kind == "linear":
            out = self.values[0] + self.values[1] * t
        else:
            out = np.asarray(self.values)[np.searchsorted(self.breaks, t, side="right")]
        return out if out.ndim else float(out)

    def max_abs(self, duration):
        if self.kind == "linear":
            return max(abs(self.values[0]), abs(self.values[0] + self.values[1] * duration))
        return max(abs(v) for v in self.values)

    def stage_value(self, t_stage, t_mid):
        # a piecewise profile is held fixed over an RK step (picked at the step midpoint)
        return self(t_mid) if self.kind == "piecewise" else self(t_stage)


@dataclass(frozen=True)
class OscillatorSpec:
    """``x'' + gamma(t) x' + beta x = 0`` with ``x(0)=A``, ``x'(0)=B sqrt(beta)``.

    The step must satisfy ``omega^5 dt^4 / 120 < 1e-8`` with
    ``omega = sqrt(beta + gamma_max^2)``, a conservative bound on the RK4 local
    error per unit time for this linear system.
    """

    beta: float
    gamma_fn: GammaProfile
    A: float = 1.0
    B: float = 0.0
    duration: float = 20.0
    dt: float = 0.01

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        gmax = self.gamma_fn.max_abs(self.duration)
        if gmax * gmax >= 4.0 * self.beta:
            raise ValueError("spec is not underdamped everywhere (gamma^2 >= 4 beta)")
        if self.dt <= 0 or self.duration <= 0:
            raise ValueError("dt and duration must be positive")
        if self.dt > self.max_dt():
            raise ValueError(f"dt={self.dt} exceeds the RK4 accuracy bound {self.max_dt():.3g}")

    def max_dt(self):
        omega = math.sqrt(self.beta + self.gamma_fn.max_abs(self.duration) ** 2)
        return (120.0 * RK4_ERROR_BOUND / omega ** 5) ** 0.25

    @property
    def n_steps(self):
        return int(round(self.duration / self.dt))

    def grid(self):
        return np.arange(self.n_steps + 1) * self.dt


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    spec: OscillatorSpec | None = field(default=None, repr=False)


def _rk4(spec: OscillatorSpec, x0, v0):
    t = spec.grid()
    dt, beta, gf = spec.dt, spec.beta, spec.gamma_fn
    n = t.size
    x = np.empty(n)
    v = np.empty(n)
    x[0], v[0] = x0, v0

    def acc(tt, tm, xx, vv):
        return -gf.stage_value(tt, tm) * vv - beta * xx

    for k in range(n - 1):
        tk, tm = t[k], t[k] + 0.5 * dt
        xk, vk = x[k], v[k]
        k1x, k1v = vk, acc(tk, tm, xk, vk)
        k2x, k2v = vk + 0.5 * dt * k1v, acc(tm, tm, xk + 0.5 * dt * k1x, vk + 0.5 * dt * k1v)
        k3x, k3v = vk + 0.5 * dt * k2v, acc(tm, tm, xk + 0.5 * dt * k2x, vk + 0.5 * dt * k2v)
        k4x, k4v = vk + dt * k3v, acc(tk + dt, tm, xk + dt * k3x, vk + dt * k3v)
        x[k + 1] = xk + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v[k + 1] = vk + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return t, x, v


def rk4_oscillator(spec: OscillatorSpec) -> Trajectory:
    t, x, v = _rk4(spec, spec.A, spec.B * math.sqrt(spec.beta))
    return Trajectory(t, x, v, spec)


def damped_closed_form(beta, gamma, A, B, t):
    """Exact solution for constant gamma with ``x(0)=A``, ``x'(0)=B sqrt(beta)``."""
    t = np.asarray(t, dtype=np.float64)
    w = math.sqrt(beta - gamma * gamma / 4.0)
    b2 = (B * math.sqrt(beta) + 0.5 * gamma * A) / w
    return np.exp(-0.5 * gamma * t) * (A * np.cos(w * t) + b2 * np.sin(w * t))


def _damping_integral(spec: OscillatorSpec, t):
    # left-Riemann sum of per-step gamma (midpoint value: exact for the profiles above)
    steps = spec.gamma_fn(t[:-1] + 0.5 * spec.dt) * spec.dt
    return np.concatenate([[0.0], np.cumsum(steps)])


@dataclass
class Dedamped:
    t: np.ndarray
    tau: np.ndarray
    x: np.ndarray
    u: np.ndarray  # amplitude-compensated signal on tau
    rho: np.ndarray


def dedamp(traj: Trajectory, gamma_fn: GammaProfile | None = None, C: float = 1.0) -> Dedamped:
    """Re-express a damped trajectory on the relative time ``tau``.

    ``tau(0) = 0`` and ``tau' = C exp(-int gamma) / rho^2``; the output
    ``u = x / rho`` equals ``A cos(sqrt(beta) tau / C) + B sin(sqrt(beta) tau / C)``.
    """
    if not C > 0:
        raise ValueError("C must be positive for a monotone tau")
    spec = traj.spec
    if spec is None:
        raise ValueError("trajectory carries no oscillator spec")
    if gamma_fn is not None and gamma_fn != spec.gamma_fn:
        spec = OscillatorSpec(spec.beta, gamma_fn, spec.A, spec.B, spec.duration, spec.dt)
    t, x1, _ = _rk4(spec, 1.0, 0.0)
    _, x2, _ = _rk4(spec, 0.0, math.sqrt(spec.beta))
    rho2 = x1 * x1 + x2 * x2
    rate = C * np.exp(-_damping_integral(spec, t)) / rho2
    tau = cumulative_trapezoid(rate, t, initial=0.0)
    if np.any(np.diff(tau) <= 0):
        raise ValueError("relative time is not monotone")
    rho = np.sqrt(rho2)
    return Dedamped(t, tau, traj.x, traj.x / rho, rho)


def warp_literal(traj: Trajectory, C: float = 1.0) -> Dedamped:
    """The bare exponential warp with ``sqrt`` amplitude compensation only.

    Kept to show that, on its own, it does not produce a constant-frequency
    signal when gamma is non-zero.
    """
    if not C > 0:
        raise ValueError("C must be positive for a monotone tau")
    spec = traj.spec
    integral = _damping_integral(spec, traj.t)
    tau = cumulative_trapezoid(C * np.exp(-integral), traj.t, initial=0.0)
    amp = np.exp(0.5 * integral)
    return Dedamped(traj.t, tau, traj.x, traj.x * amp, 1.0 / amp)


@dataclass
class SinusoidFit:
    omega: float
    A: float
    B: float
    residual_rms: float

    @property
    def amplitude(self):
        return math.hypot(self.A, self.B)

    @property
    def relative_residual(self):
        return self.residual_rms / self.amplitude if self.amplitude > 0 else float("inf")


def _linear_fit(tau, u, omega):
    M = np.column_stack([np.cos(omega * tau), np.sin(omega * tau)])
    coef, *_ = np.linalg.lstsq(M, u, rcond=None)
    r = u - M @ coef
    return coef, float(np.sqrt(np.mean(r * r)))


def fit_sinusoid(tau, u, omega_guess=None) -> SinusoidFit:
    """Least-squares ``A cos(w tau) + B sin(w tau)`` with free frequency ``w``."""
    tau = np.asarray(tau, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    span = tau[-1] - tau[0]
    if omega_guess is None:
        # coarse scan; resolution well under one period across the record
        grid = np.linspace(2 * np.pi / span, 200 * np.pi / span, 2000)
        errs = [_linear_fit(tau, u, w)[1] for w in grid]
        omega_guess = grid[int(np.argmin(errs))]
    half = np.pi / span
    res = minimize_scalar(lambda w: _linear_fit(tau, u, w)[1],
                          bounds=(max(omega_guess - half, 1e-12), omega_guess + half),
                          method="bounded", options={"xatol": 1e-12})
    coef, rms = _linear_fit(tau, u, res.x)
    return SinusoidFit(float(res.x), float(coef[0]), float(coef[1]), rms)


def write_trajectory_csv(path, traj: Trajectory, dd: Dedamped):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "tau", "x_dedamped"])
        for row in zip(traj.t, traj.x, dd.tau, dd.u):
            w.writerow([f"{v:.16g}" for v in row])
