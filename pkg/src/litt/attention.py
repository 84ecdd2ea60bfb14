"""Timing attention and greedy conditional trajectory discovery.

Timing attention of an event is the excess kurtosis of its relative times
over the individuals who show the conditioning events in order and then the
event.  Discovery grows a tree from a root event, keeping every candidate
whose attention clears a threshold and ordering siblings by attention.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .cohort import CohortBatch, EventDef
from .numkit import DegenerateDistributionError, excess_kurtosis

__all__ = [
    "EventDef", "DiscoveryConfig", "TrajectoryNode", "AttentionResult", "timing_attention",
    "discover", "initial_event", "merge_siblings", "merge_tree", "merged_sets", "greedy_expansions", "Heatmap", "association_heatmap", "best_route",
    "brute_force_table", "brute_force_argmax", "tree_to_text", "tree_to_dot",
]


@dataclass(frozen=True)
class DiscoveryConfig:
    kappa_threshold: float = 3.0
    min_support: int = 30
    max_depth: int = 4
    merge_tolerance: float = 0.05

    def __post_init__(self):
        if self.min_support < 2:
            raise ValueError("min_support must be at least 2")
        if not 0.0 < self.merge_tolerance < 1.0:
            raise ValueError("merge_tolerance must lie in (0, 1)")
        if self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")

    @classmethod
    def from_mapping(cls, kv: dict) -> "DiscoveryConfig":
        conv = {"kappa_threshold": float, "min_support": int, "max_depth": int,
                "merge_tolerance": float}
        unknown = set(kv) - set(conv)
        if unknown:
            raise KeyError(f"unknown discovery options {sorted(unknown)}")
        return cls(**{k: conv[k](v) for k, v in kv.items()})


@dataclass
class TrajectoryNode:
    event: EventDef
    kappa: float
    cohort_size: int
    positive_rate: float
    degenerate: bool = False
    children: list = field(default_factory=list)
    merged_events: tuple = ()
    members: np.ndarray | None = field(default=None, repr=False)

    def path_ids(self):
        return (self.event.id,)


@dataclass
class AttentionResult:
    kappa: float
    cohort_size: int
    degenerate: bool
    members: np.ndarray  # indices of individuals counted
    n_excluded: int


class _Context:
    """Event step lookups and relative times for one cohort."""

    def __init__(self, cohort: CohortBatch, timelines):
        self.cohort = cohort
        if isinstance(timelines, np.ndarray):
            self.tau = np.asarray(timelines, dtype=np.float64)
        else:
            T = cohort.t.shape[1]
            self.tau = np.full((len(cohort), T), np.nan)
            for j, tl in enumerate(timelines):
                self.tau[j, :len(tl.taus)] = tl.taus
        self._steps = {}

    def steps(self, ev: EventDef):
        if ev not in self._steps:
            self._steps[ev] = self.cohort.event_steps(ev)
        return self._steps[ev]

    def pattern(self, condition, event, base=None):
        """Members showing ``condition`` in order and then ``event`` strictly later."""
        ok = np.ones(len(self.cohort), bool) if base is None else base.copy()
        prev = np.full(len(self.cohort), -1)
        for ev in list(condition) + [event]:
            s = self.steps(ev)
            ok &= (s >= 0) & (s > prev)
            prev = np.where(ok, s, prev)
        return ok, prev


def _kappa(values):
    try:
        return excess_kurtosis(values), False
    except DegenerateDistributionError:
        return math.inf, True


def timing_attention(cohort: CohortBatch, timelines, event: EventDef, condition=(),
                     min_support: int = 2, _ctx=None) -> AttentionResult:
    """Kurtosis of ``event``'s relative time over individuals matching the ordered condition.

    Returns ``kappa = nan`` when fewer than ``min_support`` individuals match,
    and ``kappa = inf`` with ``degenerate=True`` when all matched relative
    times coincide.
    """
    ctx = _ctx or _Context(cohort, timelines)
    ok, step = ctx.pattern(condition, event)
    members = np.flatnonzero(ok)
    excluded = len(cohort) - members.size
    if members.size < max(min_support, 2):
        return AttentionResult(math.nan, int(members.size), False, members, excluded)
    vals = ctx.tau[members, step[members]]
    k, degen = _kappa(vals)
    return AttentionResult(k, int(members.size), degen, members, excluded)


def _positive_rate(cohort, members):
    return float(np.mean(cohort.outcome[members])) if members.size else math.nan


def _rank_key(node: TrajectoryNode):
    return (-node.kappa, -node.cohort_size, node.event.id)


def _expand(ctx, path, candidates, config):
    """Children of ``path`` before thresholding: one node per supported candidate."""
    out = []
    used = {e for e in path}
    for ev in candidates:
        if ev in used:
            continue
        res = timing_attention(ctx.cohort, None, ev, path, config.min_support, _ctx=ctx)
        if math.isnan(res.kappa):
            continue
        out.append(TrajectoryNode(ev, res.kappa, res.cohort_size,
                                  _positive_rate(ctx.cohort, res.members), res.degenerate,
                                  members=res.members))
    out.sort(key=_rank_key)
    return out


def discover(cohort: CohortBatch, timelines, candidates, config: DiscoveryConfig = DiscoveryConfig(),
             root: EventDef | None = None) -> TrajectoryNode | None:
    """Greedy conditional expansion from ``root``.

    At each node every remaining candidate is scored given the ordered path so
    far; candidates with support >= ``min_support`` and kappa >=
    ``kappa_threshold`` become children (a lone supported candidate is kept
    whatever its kappa).  Children are sorted by kappa, then cohort size, then id.
    ``root`` defaults to :func:`initial_event`.  Returns None when the root lacks support.
    """
    ctx = _Context(cohort, timelines)
    candidates = sorted(set(candidates), key=lambda e: (e.id, e.source_feature, e.occurrence_rank))
    if root is None:
        if not candidates:
            return None
        root = initial_event(cohort, candidates)
    ok, step = ctx.pattern([], root)
    members = np.flatnonzero(ok)
    if members.size < config.min_support:
        return None
    k, degen = _kappa(ctx.tau[members, step[members]])
    node = TrajectoryNode(root, k, int(members.size), _positive_rate(cohort, members), degen,
                          members=members)
    _grow(ctx, node, [root], candidates, config, config.max_depth)
    return node


def initial_event(cohort: CohortBatch, candidates) -> EventDef:
    """Candidate most often seen first (ties at a step count for every tied
    event); then larger support, then id."""
    candidates = list(candidates)
    steps = np.stack([cohort.event_steps(e) for e in candidates], axis=1)
    present = steps >= 0
    big = np.where(present, steps, np.iinfo(np.int64).max)
    first = present & (big == big.min(axis=1, keepdims=True))
    score = [(-int(first[:, k].sum()), -int(present[:, k].sum()), e.id) for k, e in enumerate(candidates)]
    return candidates[min(range(len(candidates)), key=lambda k: score[k])]


def _grow(ctx, node, path, candidates, config, depth):
    if depth <= 0:
        return
    scored = _expand(ctx, path, candidates, config)
    if len(scored) == 1:
        kept = scored
    else:
        kept = [c for c in scored if c.kappa >= config.kappa_threshold]
    node.children = kept
    for child in kept:
        _grow(ctx, child, path + [child.event], candidates, config, depth - 1)


def best_route(node: TrajectoryNode | None) -> list:
    """Event ids along the highest-kappa child at every level."""
    out = []
    while node is not None:
        out.append(node.event.id)
        node = node.children[0] if node.children else None
    return out


def _close(a, b, tol):
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= tol * max(abs(a), abs(b))


def _child(node, ev):
    for c in node.children:
        if c.event == ev:
            return c
    return None


def _branches_agree(bx, by, tol):
    """Permutation branches X->Y and Y->X condition on the same set; compare their
    end attention and every continuation one level further."""
    if not _close(bx.kappa, by.kappa, tol):
        return False
    cx = {c.event: c.kappa for c in bx.children}
    cy = {c.event: c.kappa for c in by.children}
    if set(cx) != set(cy):
        return False
    return all(_close(cx[e], cy[e], tol) for e in cx)


def merge_siblings(node: TrajectoryNode, tolerance: float = 0.05) -> TrajectoryNode:
    """Coalesce children X, Y whose orderings X->Y and Y->X reach the same attention.

    The merged child keeps the higher-ranked member's attention, lists both
    events in ``merged_events`` and continues with the subtree that follows the
    pair.  Unpaired children are left alone.
    """
    if len(node.children) < 2:
        return node
    kids = list(node.children)
    dropped = set()
    for a, b in itertools.combinations(range(len(kids)), 2):
        if a in dropped or b in dropped:
            continue
        x, y = kids[a], kids[b]
        bx, by = _child(x, y.event), _child(y, x.event)
        if bx is None or by is None:
            continue
        if _branches_agree(bx, by, tolerance):
            members = tuple(sorted(set(x.merged_events or (x.event,)) | set(y.merged_events or (y.event,)),
                                   key=lambda e: e.id))
            x.merged_events = members
            x.children = bx.children  # the set acts as one step; continue after both
            dropped.add(b)
    node.children = [k for i, k in enumerate(kids) if i not in dropped]
    return node


def merge_tree(node: TrajectoryNode | None, tolerance: float = 0.05):
    """Apply :func:`merge_siblings` bottom-up over the whole tree."""
    if node is None:
        return None
    for c in node.children:
        merge_tree(c, tolerance)
    return merge_siblings(node, tolerance)


def merged_sets(node: TrajectoryNode | None) -> list:
    """All ``merged_events`` groups in the tree as tuples of ids."""
    out = []
    if node is None:
        return out
    if node.merged_events:
        out.append(tuple(e.id for e in node.merged_events))
    for c in node.children:
        out.extend(merged_sets(c))
    return out


@dataclass
class Heatmap:
    event_ids: list
    matrix: np.ndarray
    constant: list  # ids whose indicator was constant within the sub-cohort
    n: int

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([""] + self.event_ids)
            for eid, row in zip(self.event_ids, self.matrix):
                w.writerow([eid] + [f"{v:.16g}" for v in row])


def association_heatmap(cohort: CohortBatch, initial_event: EventDef, events) -> Heatmap:
    """Pearson correlation of occurrence indicators within the sub-cohort whose
    earliest event (among ``events`` and ``initial_event``) is ``initial_event``.

    Ties at the first step count for the initial event.  Constant columns get
    zero off-diagonal scores and are listed in ``constant``.
    """
    events = list(events)
    allev = [initial_event] + [e for e in events if e != initial_event]
    steps = np.stack([cohort.event_steps(e) for e in allev], axis=1)
    s0 = steps[:, 0]
    others = np.where(steps[:, 1:] >= 0, steps[:, 1:], np.iinfo(np.int64).max)
    sub = (s0 >= 0) & np.all(others >= s0[:, None], axis=1)
    occ = np.stack([cohort.event_steps(e) >= 0 for e in events], axis=1)[sub].astype(np.float64)
    m = len(events)
    mat = np.eye(m)
    sd = occ.std(axis=0) if occ.shape[0] else np.zeros(m)
    const = [events[i].id for i in range(m) if not sd[i] > 0]
    for a in range(m):
        for b in range(a + 1, m):
            if sd[a] > 0 and sd[b] > 0:
                r = float(np.mean((occ[:, a] - occ[:, a].mean()) * (occ[:, b] - occ[:, b].mean())) / (sd[a] * sd[b]))
                mat[a, b] = mat[b, a] = r
    return Heatmap([e.id for e in events], mat, const, int(sub.sum()))


# --- exhaustive oracle ---------------------------------------------------------


def _naive_kurtosis(vals):
    n = len(vals)
    mean = 0.0
    for v in vals:
        mean += v
    mean /= n
    m2 = m4 = 0.0
    for v in vals:
        d = v - mean
        m2 += d * d
        m4 += d * d * d * d
    m2 /= n
    m4 /= n
    if m2 == 0.0:
        return math.inf
    return m4 / (m2 * m2) - 3.0


def brute_force_table(cohort: CohortBatch, gammas, candidates, root: EventDef, min_support=2,
                      max_len=None) -> dict:
    """Attention of every ordered path starting at ``root``, recomputed from raw rates.

    ``gammas`` is (N, T) per-step rates; relative times are rebuilt per
    individual with an explicit running sum.  Keys are tuples of event ids;
    values ``(kappa, size)``.  Exponential in the number of candidates.
    """
    gam = np.asarray(gammas, dtype=np.float64)
    N, T = gam.shape
    tau = [[0.0] * T for _ in range(N)]
    for j in range(N):
        acc = 0.0
        for k in range(T):
            acc += gam[j, k]
            tau[j][k] = math.exp(-acc)
    lookup = {}
    for ev in set(candidates) | {root}:
        col = cohort.event_names.index(ev.source_feature)
        st = []
        for j in range(N):
            cnt, where = 0, -1
            for k in range(T):
                if cohort.mask[j, k] and cohort.events[j, k, col]:
                    cnt += 1
                    if cnt == ev.occurrence_rank:
                        where = k
                        break
            st.append(where)
        lookup[ev] = st
    others = [e for e in candidates if e != root]
    max_len = len(others) if max_len is None else max_len
    table = {}
    for L in range(1, max_len + 1):
        for perm in itertools.permutations(others, L):
            seq = (root,) + perm
            vals = []
            for j in range(N):
                prev, good = -1, True
                for ev in seq:
                    s = lookup[ev][j]
                    if s < 0 or s <= prev:
                        good = False
                        break
                    prev = s
                if good:
                    vals.append(tau[j][prev])
            if len(vals) >= max(min_support, 2):
                table[tuple(e.id for e in seq)] = (_naive_kurtosis(vals), len(vals))
    return table


def brute_force_argmax(table: dict, prefix: tuple):
    """Best next event id after ``prefix`` by (kappa desc, size desc, id asc); None if none."""
    best = None
    for key, (k, n) in table.items():
        if len(key) == len(prefix) + 1 and key[:-1] == prefix:
            rank = (-k, -n, key[-1])
            if best is None or rank < best[0]:
                best = (rank, key[-1])
    return None if best is None else best[1]


def greedy_expansions(node: TrajectoryNode, prefix=()):
    """Yield ``(prefix, best child id)`` for every internal node of the tree."""
    path = prefix + (node.event.id,)
    if node.children:
        yield path, node.children[0].event.id
    for c in node.children:
        yield from greedy_expansions(c, path)


# --- serialization ---------------------------------------------------------------


def _fmt_kappa(k):
    return "inf" if math.isinf(k) else f"{k:.4f}"


def _label(node):
    name = "+".join(e.id for e in node.merged_events) if node.merged_events else node.event.id
    return name


def tree_to_text(node: TrajectoryNode | None) -> str:
    """Indented outline; ``*`` marks the highest-kappa route."""
    if node is None:
        return "(empty tree)\n"
    lines = []

    def walk(n, depth, on_best):
        mark = "*" if on_best else " "
        flag = " degenerate" if n.degenerate else ""
        lines.append(f"{'  ' * depth}{mark} {_label(n)}  kappa={_fmt_kappa(n.kappa)}  "
                     f"n={n.cohort_size}  rate={n.positive_rate:.4f}{flag}")
        for i, c in enumerate(n.children):
            walk(c, depth + 1, on_best and i == 0)

    walk(node, 0, True)
    return "\n".join(lines) + "\n"


def tree_to_dot(node: TrajectoryNode | None) -> str:
    """Graphviz description; the highest-kappa route is drawn in red."""
    out = ["digraph trajectory {", "  node [shape=box];"]
    if node is None:
        out.append("}")
        return "\n".join(out) + "\n"
    counter = itertools.count()

    def walk(n, on_best):
        nid = f"n{next(counter)}"
        color = ', color="red"' if on_best else ""
        out.append(f'  {nid} [label="{_label(n)}\\nkappa={_fmt_kappa(n.kappa)}\\n'
                   f'n={n.cohort_size} rate={n.positive_rate:.3f}"{color}];')
        for i, c in enumerate(n.children):
            cid = walk(c, on_best and i == 0)
            ecolor = ' [color="red"]' if on_best and i == 0 else ""
            out.append(f"  {nid} -> {cid}{ecolor};")
        return nid

    walk(node, True)
    out.append("}")
    return "\n".join(out) + "\n"
