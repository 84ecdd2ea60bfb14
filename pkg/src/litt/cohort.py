"""Cohort data model, CSV ingestion, survival tables and synthetic generators.

Cohort CSV (long format, one row per individual and visit)::

    id,step,t_days,<feature...>,<event flag...>,label_day,censored,last_obs_day

Event-flag columns are those listed in the schema (default: columns starting
with ``event_``); every other non-role column is a numeric feature.
"""
from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .numkit import Rng

FLOAT_FMT = "{:.16g}"


class CohortFormatError(ValueError):
    """Malformed cohort or survival file."""


def read_kv(path) -> dict:
    """Flat ``key=value`` file (``#`` comments) as an ordered dict of strings."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    cp.optionxform = str
    cp.read_string("[root]\n" + text)
    return dict(cp["root"])


@dataclass(frozen=True)
class EventDef:
    """The ``occurrence_rank``-th step where flag column ``source_feature`` is set."""

    id: str
    source_feature: str
    occurrence_rank: int = 1

    def __post_init__(self):
        if self.occurrence_rank not in (1, 2, 3):
            raise ValueError("occurrence_rank must be 1, 2 or 3")


@dataclass
class Schema:
    id: str = "id"
    step: str = "step"
    time: str = "t_days"
    label: str = "label_day"
    censored: str = "censored"
    last_obs: str = "last_obs_day"
    events: tuple | None = None  # None: columns starting with event_prefix
    features: tuple | None = None  # None: everything else
    event_prefix: str = "event_"
    gamma: str = "gamma_true"  # optional column

    @classmethod
    def from_file(cls, path) -> "Schema":
        kv = read_kv(path)
        args = {}
        for k, v in kv.items():
            if k in ("events", "features"):
                args[k] = tuple(s.strip() for s in v.split(",") if s.strip())
            elif k in cls.__dataclass_fields__:
                args[k] = v.strip()
            else:
                raise CohortFormatError(f"unknown schema key {k!r}")
        return cls(**args)

    def roles(self):
        return (self.id, self.step, self.time, self.label, self.censored, self.last_obs)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x, mask):
        rows = x[np.asarray(mask, bool)]
        mean = rows.mean(axis=0) if rows.size else np.zeros(x.shape[-1])
        std = rows.std(axis=0) if rows.size else np.ones(x.shape[-1])
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std)

    def apply(self, x, mask):
        out = (x - self.mean) / self.std
        return np.where(np.asarray(mask, bool)[..., None], out, 0.0)


@dataclass
class CohortBatch:
    """Padded cohort arrays.

    ``x`` (N, T, D), ``t`` (N, T) days, ``mask`` (N, T); padded steps carry the
    last real timestamp.  ``events`` (N, T, E) flags follow ``event_names``.
    ``label_day`` is NaN when censored.  Generators also fill ``gamma_true``
    (N,) per-individual warp or (N, T) per-step rates, ``truth_day`` (label
    before censoring) and ``latent`` (N, T).
    """

    ids: list
    x: np.ndarray
    t: np.ndarray
    mask: np.ndarray
    label_day: np.ndarray
    censored: np.ndarray
    last_obs_day: np.ndarray
    feature_names: list = field(default_factory=list)
    events: np.ndarray | None = None
    event_names: list = field(default_factory=list)
    gamma_true: np.ndarray | None = None
    truth_day: np.ndarray | None = None
    latent: np.ndarray | None = None
    outcome: np.ndarray | None = None
    standardizer: Standardizer | None = None

    def __post_init__(self):
        N, T = self.t.shape
        if self.events is None:
            self.events = np.zeros((N, T, 0), bool)
        if self.outcome is None:
            self.outcome = ~np.asarray(self.censored, bool)

    def __len__(self):
        return len(self.ids)

    @property
    def lengths(self):
        return self.mask.sum(axis=1)

    def validate(self):
        if len(self.ids) != len(set(self.ids)):
            raise CohortFormatError("duplicate individual ids")
        for j in range(len(self)):
            tj = self.t[j, self.mask[j]]
            if np.any(np.diff(tj) < 0):
                raise CohortFormatError(f"timestamps decrease for individual {self.ids[j]}")
        obs = ~self.censored
        if np.any(self.label_day[obs] > self.last_obs_day[obs] + 1e-9):
            raise CohortFormatError("uncensored label after last observation")
        return self

    def take(self, idx) -> "CohortBatch":
        idx = np.asarray(idx)

        def opt(a):
            return None if a is None else a[idx]

        return CohortBatch(
            [self.ids[i] for i in idx], self.x[idx], self.t[idx], self.mask[idx],
            self.label_day[idx], self.censored[idx], self.last_obs_day[idx],
            list(self.feature_names), self.events[idx], list(self.event_names),
            opt(self.gamma_true), opt(self.truth_day), opt(self.latent), opt(self.outcome),
            self.standardizer,
        )

    def standardized(self, st: Standardizer | None = None) -> "CohortBatch":
        """Copy with z-scored features; statistics from ``st`` or from this cohort."""
        st = Standardizer.fit(self.x, self.mask) if st is None else st
        out = self.take(np.arange(len(self)))
        out.x = st.apply(self.x, self.mask)
        out.standardizer = st
        return out

    def event_steps(self, ev: EventDef) -> np.ndarray:
        """Step index of the event per individual, -1 when it does not occur."""
        col = self.event_names.index(ev.source_feature)
        flags = self.events[:, :, col] & self.mask
        csum = np.cumsum(flags, axis=1)
        hit = flags & (csum == ev.occurrence_rank)
        out = np.where(hit.any(axis=1), hit.argmax(axis=1), -1)
        return out


def _pad(rows, T, fill=0.0):
    out = np.full((len(rows), T) + np.shape(rows[0])[1:], fill, dtype=np.float64)
    for j, r in enumerate(rows):
        out[j, :len(r)] = r
    return out


def _to_float(s, where):
    s = s.strip()
    if s == "" or s.lower() in ("nan", "na"):
        return math.nan
    try:
        return float(s)
    except ValueError:
        raise CohortFormatError(f"{where}: not a number: {s!r}") from None


def load_cohort_csv(path, schema: Schema | None = None, standardizer: Standardizer | None = None,
                    standardize=True) -> CohortBatch:
    """Parse a long-format cohort file.

    Missing feature values are forward-filled within an individual, then
    zero-filled, and a ``<name>_missing`` indicator is added for every feature
    with any gap.  Features are z-scored with ``standardizer`` when given
    (test split), else with statistics of this file (train split).
    """
    schema = schema or Schema()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortFormatError("empty cohort file") from None
        rows = list(reader)
    header = [h.strip() for h in header]
    missing = [c for c in schema.roles() if c not in header]
    if missing:
        raise CohortFormatError(f"missing columns {missing}")
    col = {h: i for i, h in enumerate(header)}
    ev_cols = list(schema.events) if schema.events is not None else [
        h for h in header if h.startswith(schema.event_prefix)]
    for c in ev_cols:
        if c not in col:
            raise CohortFormatError(f"missing event column {c!r}")
    reserved = set(schema.roles()) | set(ev_cols) | {schema.gamma}
    feat_cols = list(schema.features) if schema.features is not None else [
        h for h in header if h not in reserved]
    for c in feat_cols:
        if c not in col:
            raise CohortFormatError(f"missing feature column {c!r}")
    has_gamma = schema.gamma in col
    if not rows:
        raise CohortFormatError("cohort file has no data rows")

    groups: dict = {}
    order = []
    seen = set()
    for n, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise CohortFormatError(f"row {n}: expected {len(header)} fields, got {len(r)}")
        pid = r[col[schema.id]].strip()
        try:
            step = int(r[col[schema.step]])
        except ValueError:
            raise CohortFormatError(f"row {n}: bad step {r[col[schema.step]]!r}") from None
        if (pid, step) in seen:
            raise CohortFormatError(f"row {n}: duplicate (id, step) = ({pid}, {step})")
        seen.add((pid, step))
        if pid not in groups:
            groups[pid] = []
            order.append(pid)
        groups[pid].append((step, n, r))

    N = len(order)
    T = max(len(v) for v in groups.values())
    D0 = len(feat_cols)
    xs, ts, evs, gms = [], [], [], []
    label = np.empty(N)
    cens = np.zeros(N, bool)
    last = np.empty(N)
    for j, pid in enumerate(order):
        recs = sorted(groups[pid], key=lambda s: s[0])
        x = np.array([[_to_float(r[col[c]], f"row {n}") for c in feat_cols] for _, n, r in recs]).reshape(-1, D0)
        t = np.array([_to_float(r[col[schema.time]], f"row {n}") for _, n, r in recs])
        for k in range(1, len(t)):
            if not t[k] >= t[k - 1]:
                raise CohortFormatError(f"row {recs[k][1]}: timestamps not monotone for id {pid}")
        if not np.all(np.isfinite(t)):
            raise CohortFormatError(f"id {pid}: missing timestamp")
        ev = np.array([[_to_float(r[col[c]], f"row {n}") == 1.0 for c in ev_cols] for _, n, r in recs],
                      dtype=bool).reshape(len(recs), len(ev_cols))
        _, n0, r0 = recs[0]
        label[j] = _to_float(r0[col[schema.label]], f"row {n0}")
        cens[j] = _to_float(r0[col[schema.censored]], f"row {n0}") == 1.0
        last[j] = _to_float(r0[col[schema.last_obs]], f"row {n0}")
        if has_gamma:
            gms.append(np.array([_to_float(r[col[schema.gamma]], f"row {n}") for _, n, r in recs]))
        xs.append(x)
        ts.append(t)
        evs.append(ev)
    label[cens] = np.nan

    lengths = [len(t) for t in ts]
    mask = np.zeros((N, T), bool)
    for j, L in enumerate(lengths):
        mask[j, :L] = True
    x = np.zeros((N, T, D0))
    miss = np.zeros((N, T, D0), bool)
    for j, xj in enumerate(xs):
        m = np.isnan(xj)
        miss[j, :len(xj)] = m
        filled = xj.copy()
        for k in range(1, len(filled)):
            gap = np.isnan(filled[k])
            filled[k, gap] = filled[k - 1, gap]
        x[j, :len(xj)] = np.nan_to_num(filled, nan=0.0)
    with_gaps = [d for d in range(D0) if miss[:, :, d].any()]
    names = list(feat_cols)
    if with_gaps:
        x = np.concatenate([x, miss[:, :, with_gaps].astype(np.float64)], axis=2)
        names += [f"{feat_cols[d]}_missing" for d in with_gaps]
    t = np.zeros((N, T))
    for j, tj in enumerate(ts):
        t[j, :len(tj)] = tj
        t[j, len(tj):] = tj[-1]
    events = np.zeros((N, T, len(ev_cols)), bool)
    for j, e in enumerate(evs):
        events[j, :len(e)] = e
    gamma = None
    if has_gamma:
        gamma = _pad(gms, T)
    cohort = CohortBatch(order, x, t, mask, label, cens, last, names, events, ev_cols,
                         gamma_true=gamma)
    cohort.validate()
    if standardize:
        cohort = cohort.standardized(standardizer)
    return cohort


def write_cohort_csv(path, cohort: CohortBatch):
    """Inverse of :func:`load_cohort_csv` (features written as stored)."""
    per_step_gamma = cohort.gamma_true is not None and cohort.gamma_true.ndim == 2
    header = ["id", "step", "t_days"] + list(cohort.feature_names) + list(cohort.event_names) + [
        "label_day", "censored", "last_obs_day"]
    if per_step_gamma:
        header.append("gamma_true")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for j, pid in enumerate(cohort.ids):
            lab = "" if cohort.censored[j] else FLOAT_FMT.format(cohort.label_day[j])
            for k in range(int(cohort.lengths[j])):
                row = [pid, k, FLOAT_FMT.format(cohort.t[j, k])]
                row += [FLOAT_FMT.format(v) for v in cohort.x[j, k]]
                row += [int(v) for v in cohort.events[j, k]]
                row += [lab, int(cohort.censored[j]), FLOAT_FMT.format(cohort.last_obs_day[j])]
                if per_step_gamma:
                    row.append(FLOAT_FMT.format(cohort.gamma_true[j, k]))
                w.writerow(row)


@dataclass
class SurvivalTable:
    X: np.ndarray
    duration: np.ndarray
    event: np.ndarray
    covariate_names: list
    n_rejected: int = 0

    def __len__(self):
        return self.duration.shape[0]

    @property
    def censoring_fraction(self):
        return float(1.0 - self.event.mean()) if len(self) else float("nan")

    def take(self, idx):
        return SurvivalTable(self.X[idx], self.duration[idx], self.event[idx], self.covariate_names)


@dataclass(frozen=True)
class SurvivalRecord:
    covariates: np.ndarray
    duration: float
    event_indicator: int


def load_survival_table(path, duration_col="duration", event_col="event") -> SurvivalTable:
    """``duration,event,<covariate...>`` table; rows with duration <= 0 are rejected and counted."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CohortFormatError("empty survival file") from None
        rows = list(reader)
    for c in (duration_col, event_col):
        if c not in header:
            raise CohortFormatError(f"missing column {c!r}")
    di, ei = header.index(duration_col), header.index(event_col)
    cov = [i for i in range(len(header)) if i not in (di, ei)]
    X, d, e = [], [], []
    rejected = 0
    for n, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise CohortFormatError(f"row {n}: expected {len(header)} fields")
        dur = _to_float(r[di], f"row {n}")
        if not dur > 0:
            rejected += 1
            continue
        ev = _to_float(r[ei], f"row {n}")
        if ev not in (0.0, 1.0):
            raise CohortFormatError(f"row {n}: event must be 0 or 1")
        vals = [_to_float(r[i], f"row {n}") for i in cov]
        if any(math.isnan(v) for v in vals):
            raise CohortFormatError(f"row {n}: missing covariate")
        X.append(vals)
        d.append(dur)
        e.append(int(ev))
    return SurvivalTable(np.array(X, dtype=np.float64).reshape(len(d), len(cov)),
                         np.array(d, dtype=np.float64), np.array(e, dtype=np.int64),
                         [header[i] for i in cov], rejected)


def survival_records(table: SurvivalTable) -> list:
    return [SurvivalRecord(table.X[i], float(table.duration[i]), int(table.event[i]))
            for i in range(len(table))]


# --- synthetic cohorts -------------------------------------------------------

WARP_PERIOD = 12.0
WARP_THRESHOLD = 0.7


def warp_latent(u, T):
    """Shared latent dynamic on the relative visit index ``u``."""
    u = np.asarray(u, dtype=np.float64)
    return u / T + 0.05 * np.sin(2 * np.pi * u / WARP_PERIOD)


def threshold_crossing_day(latent, days, threshold):
    """First upward crossing, linearly interpolated between visits; NaN if none."""
    for k in range(1, len(latent)):
        if latent[k - 1] < threshold <= latent[k]:
            w = (threshold - latent[k - 1]) / (latent[k] - latent[k - 1])
            return float(days[k - 1] + w * (days[k] - days[k - 1]))
    return math.nan


def gen_warp_cohort(n=200, T=50, seed=0, warp_strength=0.5, base_day=10.0, feature_noise=0.05,
                    visit_jitter=0.2, censor_fraction=0.0) -> CohortBatch:
    """Shared latent process observed under individual exponential time warps.

    Individual ``j`` has warp ``g_j ~ warp_strength * N(0, 1)`` and visits on
    ``u_l = l + jitter`` (relative), observed on day ``base_day * exp(g_j) * u_l``.
    Features depend on ``u`` only, so they carry no information about the warp;
    the label is the day the latent crosses a fixed threshold.  ``gamma_true``
    holds ``g_j``.  ``censor_fraction`` censors exactly ``round(f n)`` individuals
    at a visit before their event.
    """
    if n < 1 or T < 1:
        raise ValueError("n and T must be positive")
    rng = Rng(seed)
    g = warp_strength * rng.child(1).normal(size=n)
    jit = rng.child(2).uniform(-visit_jitter, visit_jitter, (n, T))
    u = np.arange(1, T + 1)[None, :] + jit
    days = base_day * np.exp(g)[:, None] * u
    lat = warp_latent(u, T)
    phase = 2 * np.pi * u / WARP_PERIOD
    x = np.stack([np.sin(phase), np.cos(phase), u / T], axis=2)
    x = x + feature_noise * rng.child(3).normal(size=x.shape)
    truth = np.array([threshold_crossing_day(lat[j], days[j], WARP_THRESHOLD) for j in range(n)])
    mask = np.ones((n, T), bool)
    last = days[:, -1].copy()
    censored = np.zeros(n, bool)
    n_cens = int(round(censor_fraction * n))
    if n_cens:
        chosen = np.sort(rng.child(4).permutation(n)[:n_cens])
        for j in chosen:
            # follow-up ends at a visit strictly before the event
            before = np.flatnonzero(days[j] < truth[j])
            stop = int(before[int(rng.child(5, int(j)).integers(0, before.size))]) if before.size else 0
            mask[j, stop + 1:] = False
            days[j, stop + 1:] = days[j, stop]
            last[j] = days[j, stop]
            censored[j] = True
    x = np.where(mask[..., None], x, 0.0)
    label = np.where(censored, np.nan, truth)
    ids = [f"w{j:04d}" for j in range(n)]
    return CohortBatch(ids, x, days, mask, label, censored, last, ["sin", "cos", "ramp"],
                       gamma_true=g, truth_day=truth, latent=lat)


EVENT_SLOTS = (0.1, 0.3, 0.5, 0.7, 0.85)


def _strata(r: Rng, K):
    return (np.arange(K) + r.uniform(0.0, 1.0, K)) / K


def _place_path(rng: Rng, s, path, slot, follow_prob, jitter_sd, n_extra, free=()):
    """Visit index of every path event plus ``n_extra`` unplanted events.

    Returns ``(steps (n, len(path) + n_extra), aligned (n, len(path)))``.
    """
    n, T = s.shape
    P = len(path)
    aligned = np.ones((n, P), bool)
    alive = np.arange(n)
    for m in range(1, P):
        if path[m] in free and path[m] != free[0]:
            continue  # an order-free set is kept or dropped as a unit
        n_drop = int(round((1.0 - follow_prob) * alive.size))
        drop = rng.child(4, m).permutation(alive.size)[:n_drop]
        aligned[alive[drop], m:] = False
        alive = np.delete(alive, drop)
    jitter = rng.child(5).normal(0.0, jitter_sd, (n, P)) if jitter_sd > 0 else np.zeros((n, P))
    steps = np.full((n, P + n_extra), -1)

    def nearest(j, target):
        return int(np.argmin(np.abs(s[j] - target)))

    for m, ev in enumerate(path):
        for j in np.flatnonzero(aligned[:, m]):
            if ev in free:
                first = nearest(j, slot[ev] + jitter[j, path.index(free[0])])
                steps[j, m] = min(T - 1, first + free.index(ev))
            else:
                steps[j, m] = nearest(j, slot[ev] + jitter[j, m])
    for m in range(P + n_extra):
        loose = np.flatnonzero(~aligned[:, m]) if m < P else np.arange(n)
        if m < P and path[m] in free:
            continue
        K = loose.size
        if K:
            # misplaced occurrences: stratified over relative time, strata shuffled across individuals
            q = _strata(rng.child(10, m), K)[rng.child(11, m).permutation(K)]
            steps[loose, m] = [nearest(j, qj) for j, qj in zip(loose, q)]
    if free:
        m0 = path.index(free[0])
        loose = np.flatnonzero(~aligned[:, m0])
        K = loose.size
        if K:
            # a dropped unordered set lands on random visits, kept in path order here
            qs = np.sort(np.stack([_strata(rng.child(12, i), K)[rng.child(13, i).permutation(K)]
                                   for i in range(len(free))], axis=1), axis=1)
            for i, ev in enumerate(free):
                steps[loose, path.index(ev)] = [nearest(j, qj) for j, qj in zip(loose, qs[:, i])]
    return steps, aligned


def gen_event_cohort(n=300, candidates=("A", "B", "C", "D", "E", "F"), planted_path=("A", "B", "C", "D"),
                     order_free_set=None, noise=True, seed=0, T=40, follow_prob=0.95,
                     core_jitter=0.01, order_dependent_tail=False) -> CohortBatch:
    """Cohort with a planted event route on a shared relative timeline.

    Each individual visits on a jittered relative grid ``s`` in (0, 1);
    ``tau = 1 + 4 s`` and the per-step rates ``gamma_true = -diff(log tau)``
    reproduce it through the usual accumulation.  Absolute days are an
    individual nonlinear warp of ``s``, so they do not align across individuals.

    The root event occurs for everyone near its slot.  At each later path
    event an exact fraction ``1 - follow_prob`` of the remaining followers
    drops out; from the first miss on, remaining path events land on random
    visits, stratified in relative time.  Candidates off the path are placed
    the same way.  ``noise`` adds Gaussian jitter of ``core_jitter`` to every
    aligned placement.

    ``order_free_set`` names consecutive path events that share a slot and sit
    on adjacent visits.  The cohort is then built from twin pairs: the second
    half repeats the first half with the set in reversed order, so the set is
    exchangeable within the sample itself up to the timing noise, which twins
    draw afresh.  With ``order_dependent_tail`` the
    path events after the set are re-placed at random for the reversed twins
    (they are aligned only when the set appears in path order): the control.
    """
    path = list(planted_path)
    cands = list(candidates)
    if not set(path) <= set(cands):
        raise ValueError("planted path must be a subset of the candidates")
    free = [e for e in path if e in set(order_free_set or ())]
    if len(free) != len(set(order_free_set or ())):
        raise ValueError("order-free events must lie on the planted path")
    if free:
        pos = [path.index(e) for e in free]
        if pos != list(range(pos[0], pos[0] + len(pos))) or pos[0] == 0:
            raise ValueError("order-free events must be consecutive non-root path events")
    rng = Rng(seed)
    n_base = n - n // 2 if free else n
    # near-regular relative visits; irregularity in days comes from the individual warp below
    s = (np.arange(T)[None, :] + 0.5 + rng.child(1).uniform(-0.3, 0.3, (n_base, T))) / T
    slot = {}
    k = 0
    for ev in path:
        if ev in free and ev != free[0]:
            slot[ev] = slot[free[0]]
            continue
        slot[ev] = EVENT_SLOTS[k]
        k += 1
    extra = [c for c in cands if c not in path]
    steps, aligned = _place_path(rng.child(2), s, path, slot, follow_prob,
                                 core_jitter if noise else 0.0, len(extra), tuple(free))
    order = path + extra
    if free:
        twins = np.arange(n // 2)
        s = np.concatenate([s, s[twins]])
        tw = steps[twins].copy()
        pos = [path.index(e) for e in free]
        tw[:, pos] = tw[:, pos[::-1]]
        if noise and core_jitter > 0:
            # twins keep schedule and drop-out status; their aligned timing noise is redrawn
            jit = rng.child(23).normal(0.0, core_jitter, (twins.size, len(path)))
            for m, ev in enumerate(path):
                rows = np.flatnonzero(aligned[twins, m])
                if ev in free:
                    m0 = path.index(free[0])
                    first = [int(np.argmin(np.abs(s[n_base + r] - slot[ev] - jit[r, m0]))) for r in rows]
                    rank = len(free) - 1 - free.index(ev)
                    tw[rows, m] = np.minimum(T - 1, np.array(first, dtype=np.int64) + rank)
                else:
                    tw[rows, m] = [int(np.argmin(np.abs(s[n_base + r] - slot[ev] - jit[r, m]))) for r in rows]
        if order_dependent_tail and pos[-1] + 1 < len(path):
            tail = list(range(pos[-1] + 1, len(path)))
            hit = aligned[twins][:, tail[0]]
            K = int(hit.sum())
            if K:
                q = _strata(rng.child(20), K)[rng.child(21).permutation(K)]
                for m in tail:
                    rows = np.flatnonzero(hit)
                    tw[rows, m] = [int(np.argmin(np.abs(s[n_base + r] - qr))) for r, qr in zip(rows, q)]
                    q = q[rng.child(22, m).permutation(K)]
        steps = np.concatenate([steps, tw])
    tau = 1.0 + 4.0 * s
    gamma = -np.diff(np.concatenate([np.zeros((n, 1)), np.log(tau)], axis=1), axis=1)
    g = rng.child(3).normal(0.0, 0.5, n)
    p = np.exp(rng.child(4).normal(0.0, 0.3, n))
    days = 365.0 * np.exp(g)[:, None] * s ** p[:, None]
    events = np.zeros((n, T, len(cands)), bool)
    for i, ev in enumerate(order):
        events[np.arange(n), steps[:, i], cands.index(ev)] = True
    full = np.array([all(a < b for a, b in zip(st[:len(path)], st[1:len(path)])) for st in steps])
    outcome = rng.child(8).random(n) < np.where(full, 0.7, 0.2)
    last = days[:, -1].copy()
    label = np.where(outcome, last, np.nan)
    x = np.concatenate([events.astype(np.float64), s[..., None]], axis=2)
    names = [f"x_{c}" for c in cands] + ["visit_frac"]
    ids = [f"e{j:04d}" for j in range(n)]
    return CohortBatch(ids, x, days, np.ones((n, T), bool), label, ~outcome, last, names,
                       events, [f"event_{c}" for c in cands], gamma_true=gamma, outcome=outcome)


def event_defs(cohort: CohortBatch, rank=1) -> list:
    """One EventDef per flag column; ids drop the ``event_`` prefix."""
    return [EventDef(name[len("event_"):] if name.startswith("event_") else name, name, rank)
            for name in cohort.event_names]
