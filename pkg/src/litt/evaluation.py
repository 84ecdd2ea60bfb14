"""Baselines, gamma calibration for held-out individuals, and the cross-validation protocol."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cells import GammaParams
from .cohort import CohortBatch, Standardizer, SurvivalTable
from .grad import (LossSpec, Model, SeqBatch, TrainConfig, batch_from_cohort, fit_gamma, loss_terms, predict,
                   train)
from .metrics import UndefinedMetricError, auc, c_index, f1, rmse_days, threshold_binarize
from .numkit import Rng


class ConvergenceError(RuntimeError):
    pass


# --- Cox proportional hazards ---------------------------------------------------


@dataclass
class CphModel:
    beta: np.ndarray
    event_times: np.ndarray  # distinct event times, ascending
    cum_hazard: np.ndarray  # Breslow baseline cumulative hazard at event_times
    mean: np.ndarray  # covariate standardization
    scale: np.ndarray
    loglik: float
    iterations: int
    separated: bool = False

    def linear_predictor(self, X):
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
        return Z @ self.beta


def _cox_terms(Z, d, e, beta, with_hessian=True):
    """Log partial likelihood (Breslow ties), gradient and Hessian; ``d`` sorted ascending."""
    eta = Z @ beta
    shift = float(eta.max())
    w = np.exp(eta - shift)
    # risk-set sums over {j: d_j >= d_i}: reverse cumulative sums, read at the first index of each tie
    rs0 = np.cumsum(w[::-1])[::-1]
    rs1 = np.cumsum((w[:, None] * Z)[::-1], axis=0)[::-1]
    first = np.searchsorted(d, d, side="left")
    S0, S1 = rs0[first], rs1[first]
    ev = e.astype(bool)
    ll = float(np.sum(eta[ev] - shift - np.log(S0[ev])))
    ratio = S1[ev] / S0[ev, None]
    grad = Z[ev].sum(axis=0) - ratio.sum(axis=0)
    if not with_hessian:
        return ll, grad, None
    p = Z.shape[1]
    rs2 = np.cumsum((w[:, None, None] * Z[:, :, None] * Z[:, None, :])[::-1], axis=0)[::-1]
    S2 = rs2[first][ev]
    H = -(np.sum(S2 / S0[ev, None, None], axis=0) - ratio.T @ ratio)
    return ll, grad, H.reshape(p, p)


def cox_partial_loglik(X, durations, events, beta):
    order = np.argsort(durations, kind="mergesort")
    X = np.asarray(X, dtype=np.float64).reshape(len(durations), -1)
    return _cox_terms(X[order], np.asarray(durations, dtype=np.float64)[order],
                      np.asarray(events)[order], np.asarray(beta, dtype=np.float64), False)[0]


def fit_cph(table: SurvivalTable, max_iter=100, tol=1e-8, standardize=True) -> CphModel:
    """Newton-Raphson on the Breslow partial likelihood with step halving.

    Stops when the gradient norm drops below ``tol``.  A likelihood still rising
    while coefficients grow without bound is reported as separation.
    """
    if int(np.sum(table.event)) < 2:
        raise ValueError("need at least two events")
    X = table.X
    mean = X.mean(axis=0) if standardize else np.zeros(X.shape[1])
    scale = X.std(axis=0) if standardize else np.ones(X.shape[1])
    scale = np.where(scale > 1e-12, scale, 1.0)
    order = np.argsort(table.duration, kind="mergesort")
    Z = ((X - mean) / scale)[order]
    d = table.duration[order]
    e = table.event[order]
    beta = np.zeros(Z.shape[1])
    ll, g, H = _cox_terms(Z, d, e, beta)
    separated = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) < tol:
            break
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-H, g, rcond=None)[0]
        t = 1.0
        while True:
            nb = beta + t * step
            nll, ng, nH = _cox_terms(Z, d, e, nb)
            if nll >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll, g, H = nb, nll, ng, nH
        if np.max(np.abs(beta)) > 50:
            separated = True
            break
    else:
        if np.linalg.norm(g) >= tol:
            raise ConvergenceError(f"CPH did not converge in {max_iter} iterations (|grad|={np.linalg.norm(g):.3g})")
    # a partial likelihood at its supremum of 0 means the covariates order the events perfectly
    separated = separated or ll > -1e-6
    # Breslow baseline hazard
    w = np.exp(Z @ beta)
    rs0 = np.cumsum(w[::-1])[::-1]
    ev_times, n_events = np.unique(d[e.astype(bool)], return_counts=True)
    idx = np.searchsorted(d, ev_times, side="left")
    cum = np.cumsum(n_events / rs0[idx])
    return CphModel(beta, ev_times, cum, mean, scale, ll, it, separated)


def cph_survival(model: CphModel, X, times):
    """``S(t | x)`` on a grid of times."""
    H0 = np.concatenate([[0.0], model.cum_hazard])
    k = np.searchsorted(model.event_times, np.asarray(times, dtype=np.float64), side="right")
    risk = np.exp(model.linear_predictor(X))
    return np.exp(-np.outer(risk, H0[k]))


def cph_median_survival(model: CphModel, X):
    """First event time at which predicted survival is <= 0.5 (``inf`` if never)."""
    risk = np.exp(model.linear_predictor(np.atleast_2d(X)))
    S = np.exp(-np.outer(risk, model.cum_hazard))
    below = S <= 0.5
    idx = np.where(below.any(axis=1), below.argmax(axis=1), -1)
    out = np.where(idx >= 0, model.event_times[np.maximum(idx, 0)], np.inf)
    return out


# --- logistic regression -----------------------------------------------------------


@dataclass
class LogisticModel:
    w: np.ndarray
    b: float
    iterations: int
    separated: bool = False

    def predict_proba(self, X):
        from .numkit import sigmoid
        return np.atleast_1d(sigmoid(np.asarray(X, dtype=np.float64) @ self.w + self.b))


def fit_logistic(X, y, max_iter=100, tol=1e-8) -> LogisticModel:
    """Unpenalised logistic regression by iteratively reweighted least squares.

    Stops early and flags separation when the fitted probabilities saturate or
    reproduce the labels.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.float64)
    if y.min() == y.max():
        raise ValueError("both classes must be present")
    A = np.column_stack([X, np.ones(X.shape[0])])
    theta = np.zeros(A.shape[1])
    from .numkit import sigmoid
    it = 0
    for it in range(1, max_iter + 1):
        p = np.atleast_1d(sigmoid(A @ theta))
        g = A.T @ (y - p)
        if np.linalg.norm(g) < tol:
            break
        W = p * (1 - p)
        if np.max(np.abs(y - p)) < 1e-6 or (np.min(W) < 1e-12 and np.max(np.abs(theta)) > 20):
            return LogisticModel(theta[:-1], float(theta[-1]), it, True)
        H = A.T @ (A * W[:, None])
        try:
            theta = theta + np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return LogisticModel(theta[:-1], float(theta[-1]), it, True)
    return LogisticModel(theta[:-1], float(theta[-1]), it, False)


# --- gamma for held-out individuals ----------------------------------------------------


def calibrate_gamma(model: Model, batch: SeqBatch, steps=300, lr=0.005, n_grid=61, ridge=1e-3) -> GammaParams:
    """Per-individual gate parameters for new individuals, group weights frozen.

    Minimises each individual's own loss (label-informed).  The loss surface in
    ``b`` is not convex, so each row first takes the best start among an
    intercept grid spanning the trained intercepts (slope at the population
    mean) and all trained ``(w, b)`` pairs, then both parameters are refined
    by Adam.  A small ridge towards the mean trained
    intercept breaks ties between equally good intercepts in both stages.
    """
    if model.cell_kind != "litt" or model.gamma is None:
        raise ValueError("needs a trained LITT model")
    if np.any(batch.lengths < 1):
        raise ValueError("empty sequence")
    N = len(batch)
    w0 = float(np.mean(model.gamma.w))
    lo, hi = float(np.min(model.gamma.b)), float(np.max(model.gamma.b))
    span = max(hi - lo, 0.1)
    grid = np.linspace(lo - 2 * span, hi + 2 * span, n_grid)
    # starts: intercept grid at the mean slope, plus every trained (w, b) pair
    sw = np.r_[np.full(n_grid, w0), model.gamma.w]
    sb = np.r_[grid, model.gamma.b]
    S = sw.size
    rep = batch.take(np.tile(np.arange(N), S))
    g = GammaParams(np.repeat(sw, N), np.repeat(sb, N))
    per, _ = loss_terms(predict(model, rep, g), rep, LossSpec(), model.target_scale)
    # several intercepts can fit one label; lean towards the population centre
    b_bar = float(np.mean(model.gamma.b))
    score = per.reshape(S, N) + ridge * (sb[:, None] - b_bar) ** 2
    best = np.argmin(score, axis=0)
    init = GammaParams(sw[best], sb[best])
    gamma, loss = fit_gamma(model, batch, steps=steps, lr=lr, init=init, ridge=ridge, center=b_bar)
    if not math.isfinite(loss):
        raise ConvergenceError("gamma calibration diverged")
    # Adam can step off a narrow basin; keep whichever start or end scores better per row
    fin, _ = loss_terms(predict(model, batch, gamma), batch, LossSpec(), model.target_scale)
    fin = fin + ridge * (gamma.b - b_bar) ** 2
    keep = fin <= score[best, np.arange(N)]
    return GammaParams(np.where(keep, gamma.w, init.w), np.where(keep, gamma.b, init.b))


def population_gamma(model: Model, n: int) -> GammaParams:
    """Label-free choice for new individuals: the mean trained gate parameters."""
    return GammaParams(np.full(n, float(np.mean(model.gamma.w))), np.full(n, float(np.mean(model.gamma.b))))


# --- protocol ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    method: str
    mode: str
    values: dict = field(default_factory=dict)  # metric -> list of fold values
    traces: list = field(default_factory=list)  # per-fold epoch RMSE traces

    @property
    def folds(self):
        return max((len(v) for v in self.values.values()), default=0)

    def add(self, metric, value):
        self.values.setdefault(metric, []).append(float(value))

    def mean(self, metric):
        return float(np.mean(self.values[metric]))

    def std(self, metric):
        v = self.values[metric]
        return float(np.std(v, ddof=1)) if len(v) > 1 else 0.0

    def rows(self):
        for m in sorted(self.values):
            yield (self.method, m, self.mean(m), self.std(m), len(self.values[m]))

    def mean_trace(self):
        if not self.traces:
            return []
        return list(np.mean(np.array(self.traces), axis=0))


def write_report_csv(path, reports):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "metric", "mean", "std", "folds"])
        for r in reports:
            for method, metric, mean, std, k in r.rows():
                w.writerow([method, metric, f"{mean:.10g}", f"{std:.10g}", k])


def write_trace_csv(path, trace):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "rmse_days"])
        for e, v in enumerate(trace, start=1):
            w.writerow([e, f"{v:.10g}"])


def format_table(reports) -> str:
    lines = [f"{'method':<14}{'metric':<10}{'mean':>12}{'std':>12}{'folds':>7}"]
    for r in reports:
        for method, metric, mean, std, k in r.rows():
            lines.append(f"{method:<14}{metric:<10}{mean:>12.4f}{std:>12.4f}{k:>7d}")
    return "\n".join(lines)


def stratified_folds(strata, k, seed) -> np.ndarray:
    """Fold id per row; each stratum is shuffled and dealt round-robin."""
    strata = np.asarray(strata)
    n = strata.size
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n < k:
        raise ValueError("fewer rows than folds")
    rng = Rng(seed)
    order = []
    for i, s in enumerate(np.unique(strata)):
        idx = np.flatnonzero(strata == s)
        order.append(idx[rng.child(i).permutation(idx.size)])
    order = np.concatenate(order)
    fold = np.empty(n, dtype=np.int64)
    fold[order] = np.arange(n) % k
    return fold


SEQ_METHODS = {
    "lstm": ("lstm", "no_ind"),
    "gru": ("gru", "no_ind"),
    "litt_no_ind": ("litt", "no_ind"),
    "litt_shared": ("litt", "shared"),
    "litt_ind": ("litt", "ind"),
    "litt_ind_pop": ("litt", "ind"),
}
BASELINES = ("cph", "glm", "const")
KNOWN_METHODS = tuple(SEQ_METHODS) + BASELINES


def _check_methods(methods):
    bad = [m for m in methods if m not in KNOWN_METHODS]
    if bad:
        raise ValueError(f"unknown method(s) {bad}; known: {', '.join(KNOWN_METHODS)}")


def _seq_predictions(method, cfg: TrainConfig, train_b: SeqBatch, test_b: SeqBatch, calib_steps, cache=None):
    cell, mode = SEQ_METHODS[method]
    c = replace(cfg, cell=cell, mode=mode)
    # litt_ind and litt_ind_pop share one trained model per fold
    if cache is not None and (cell, mode) in cache:
        model, trace = cache[(cell, mode)]
    else:
        model, trace = train(train_b, c)
        if cache is not None:
            cache[(cell, mode)] = (model, trace)
    gamma = None
    if method == "litt_ind":
        gamma = calibrate_gamma(model, test_b, steps=calib_steps)
    elif method == "litt_ind_pop":
        gamma = population_gamma(model, len(test_b))
    return predict(model, test_b, gamma), trace, model


def _add_timing_metrics(rep: EvalReport, pred, b: SeqBatch):
    try:
        rep.add("rmse_days", rmse_days(pred, b.target, b.censored))
    except UndefinedMetricError:
        pass
    actual = ~b.censored
    if actual.all() or not actual.any():
        return
    # earlier predicted day ranks as higher risk; follow-up length is left out of the score
    rep.add("auc", auc(-np.asarray(pred, dtype=np.float64), actual))
    rep.add("f1", f1(threshold_binarize(pred, b.last_obs), actual))


def run_cohort_protocol(cohort: CohortBatch, methods, folds=10, seed=0, cfg: TrainConfig | None = None,
                        calib_steps=300, progress=None) -> list:
    """Cross-validated event-timing regression on a longitudinal cohort.

    Features are standardised with training-fold statistics only.  Returns one
    EvalReport per method with RMSE (days) and, when both outcomes occur in a
    fold, AUC and F1 of the thresholded predictions.
    """
    _check_methods(methods)
    cfg = cfg or TrainConfig()
    fold = stratified_folds(cohort.censored.astype(int), folds, seed)
    reports = {m: EvalReport(m, SEQ_METHODS.get(m, (m, m))[1]) for m in methods}
    for k in range(folds):
        tr = cohort.take(np.flatnonzero(fold != k))
        te = cohort.take(np.flatnonzero(fold == k))
        st = Standardizer.fit(tr.x, tr.mask)
        trb, teb = batch_from_cohort(tr.standardized(st)), batch_from_cohort(te.standardized(st))
        cache = {}
        for m in methods:
            rep = reports[m]
            if m in SEQ_METHODS:
                pred, trace, _ = _seq_predictions(m, replace(cfg, seed=cfg.seed + k), trb, teb, calib_steps, cache)
                rep.traces.append(trace)
            elif m == "const":
                obs = ~trb.censored
                pred = np.full(len(teb), float(np.mean(trb.target[obs])) if obs.any() else 0.0)
            elif m == "glm":
                y = ~trb.censored
                if y.all() or not y.any():
                    continue
                xl = _last_step(trb)
                lm = fit_logistic(xl, y)
                p = lm.predict_proba(_last_step(teb))
                actual = ~teb.censored
                if not actual.all() and actual.any():
                    rep.add("auc", auc(p, actual))
                    rep.add("f1", f1(p >= 0.5, actual))
                continue
            else:
                raise ValueError(f"method {m!r} does not apply to longitudinal cohorts")
            _add_timing_metrics(rep, pred, teb)
            if progress:
                progress(k, m)
    return [reports[m] for m in methods]


def _last_step(b: SeqBatch):
    idx = np.maximum(b.lengths - 1, 0)
    return b.xs[np.arange(len(b)), idx]


def survival_batch(table: SurvivalTable, st: Standardizer | None = None, log_time=True) -> SeqBatch:
    """Tabular records as length-1 sequences (timestamp 0).

    Censored rows keep their follow-up time as ``last_obs`` for the one-sided
    loss.  With ``log_time`` the regression target is ``log(duration)``.
    """
    X = table.X[:, None, :]
    if st is not None:
        X = st.apply(X, np.ones(X.shape[:2], bool))
    d = np.log(table.duration) if log_time else table.duration.astype(np.float64)
    ev = table.event.astype(bool)
    return SeqBatch(X, np.zeros((len(table), 1)), None, np.where(ev, d, np.nan), ~ev, d)


# short schedule: longer training overfits the single-step model on METABRIC-sized tables
SURVIVAL_TRAIN = TrainConfig(cell="litt", mode="no_ind", epochs=20, lr=3e-3, hidden_dim=16, batch_size=64)


def run_survival_protocol(table: SurvivalTable, methods, folds=5, seed=0, cfg: TrainConfig | None = None,
                          log_time=True, progress=None) -> list:
    """Cross-validated concordance for CPH (median survival) and recurrent models
    (predicted event time), folds stratified on the event indicator."""
    _check_methods(methods)
    for m in methods:
        if m in ("glm", "litt_ind", "litt_ind_pop"):
            raise ValueError(f"method {m!r} does not apply to survival tables")
    cfg = cfg or SURVIVAL_TRAIN
    fold = stratified_folds(table.event, folds, seed)
    reports = {m: EvalReport(m, SEQ_METHODS.get(m, (m, m))[1]) for m in methods}
    for k in range(folds):
        tr = table.take(np.flatnonzero(fold != k))
        te = table.take(np.flatnonzero(fold == k))
        for m in methods:
            if m == "cph":
                model = fit_cph(tr)
                pred = cph_median_survival(model, te.X)
            elif m == "const":
                pred = np.zeros(len(te))
            else:
                st = Standardizer.fit(tr.X[:, None, :], np.ones((len(tr), 1), bool))
                cell, mode = SEQ_METHODS[m]
                c = replace(cfg, cell=cell, mode=mode, seed=cfg.seed + k)
                model, trace = train(survival_batch(tr, st, log_time), c)
                pred = predict(model, survival_batch(te, st, log_time))
                reports[m].traces.append(trace)
            reports[m].add("c_index", c_index(pred, te.duration, te.event))
            if progress:
                progress(k, m)
    return [reports[m] for m in methods]
