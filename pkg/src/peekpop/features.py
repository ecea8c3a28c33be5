"""Early-adoption features for cascade windows.

Feature groups, in schema order:

========== ================================================================
temporal   time_2..time_k, time_first_half, time_second_half
ego        in_2..in_k, reach, connections
subgraph   indegree_sub, density_sub, cc_sub, dist_sub, sub_in_1..sub_in_k
root       activity_root, age_root, popularity_root
resharer   activity_resharer, age_resharer, popularity_resharer
similarity sim_count, sim_mean, sim_med, sim_max
daily      adoptions_1..adoptions_t  (k-t cohorts only)
========== ================================================================

Times are reported in days. Undefined values (no similarity pairs, no
connected pair in the subgraph) are NaN.
"""
import csv
import itertools
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .corpus import DAY, count_adoptions_in
from .windows import KT, CohortError

CATEGORIES = ("temporal", "ego", "subgraph", "root", "resharer", "similarity", "daily")
NON_TEMPORAL = ("ego", "subgraph", "root", "resharer", "similarity")
MAY_BE_MISSING = ("dist_sub", "sim_mean", "sim_med", "sim_max")
ACTIVITY_WINDOW_DAYS = 28
MIN_SIMILARITY_HISTORY = 5


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple
    categories: tuple

    def __len__(self):
        return len(self.names)

    def columns(self, categories):
        """Column indices belonging to any of ``categories``."""
        unknown = set(categories) - set(CATEGORIES)
        if unknown:
            raise ValueError(f"unknown feature categories: {sorted(unknown)}")
        wanted = set(categories)
        return [i for i, c in enumerate(self.categories) if c in wanted]

    def index(self, name):
        return self.names.index(name)

    def present_categories(self):
        return tuple(c for c in CATEGORIES if c in self.categories)


def feature_schema(k=5, t=None, categories=None):
    groups = {
        "temporal": [f"time_{i}" for i in range(2, k + 1)] + ["time_first_half", "time_second_half"],
        "ego": [f"in_{i}" for i in range(2, k + 1)] + ["reach", "connections"],
        "subgraph": ["indegree_sub", "density_sub", "cc_sub", "dist_sub"]
                    + [f"sub_in_{i}" for i in range(1, k + 1)],
        "root": ["activity_root", "age_root", "popularity_root"],
        "resharer": ["activity_resharer", "age_resharer", "popularity_resharer"],
        "similarity": ["sim_count", "sim_mean", "sim_med", "sim_max"],
        "daily": [f"adoptions_{i}" for i in range(1, t + 1)] if t else [],
    }
    if categories is None:
        categories = [c for c in CATEGORIES if c != "daily" or t]
    else:
        categories = list(dict.fromkeys(categories))
        unknown = set(categories) - set(CATEGORIES)
        if unknown:
            raise ValueError(f"unknown feature categories: {sorted(unknown)}")
        if "daily" in categories and not t:
            raise ValueError("daily features need a k-t cohort (t is not set)")
    names, cats = [], []
    for c in CATEGORIES:
        if c in categories:
            names += groups[c]
            cats += [c] * len(groups[c])
    return FeatureSchema(tuple(names), tuple(cats))


# ---------------------------------------------------------------------------
# Per-window feature groups
# ---------------------------------------------------------------------------


def temporal_features(window):
    times = np.asarray(window.adopter_times, dtype=np.int64)
    since_first = (times[1:] - times[0]) / DAY
    gaps = np.diff(times) / DAY
    n_first = len(gaps) // 2
    first_half = float(gaps[:n_first].mean()) if n_first else 0.0
    second_half = float(gaps[n_first:].mean()) if len(gaps) > n_first else 0.0
    return since_first.tolist() + [first_half, second_half]


def daily_adoption_features(window, t):
    """New distinct adopters on each of the first ``t`` days after the first adoption."""
    days = (np.asarray(window.adopter_times, dtype=np.int64) - window.adopter_times[0]) // DAY
    return np.bincount(days[days < t], minlength=t)[:t].astype(float).tolist()


def _followers_of(graph, adopters):
    return [graph.followers(u) for u in adopters]


def ego_structural_features(window, graph):
    """in_2..in_k, reach and connections of the early adopters."""
    adopters = list(window.adopters)
    followers = _followers_of(graph, adopters)
    in_deg = [float(len(f)) for f in followers[1:]]
    aset = set(adopters)
    reached = set()
    for f in followers:
        reached.update(f.tolist())
    reach = len(reached - aset)
    incident = sum(len(f) + len(graph.following(u)) for u, f in zip(adopters, followers))
    inner = _induced_edges(graph, adopters)
    if graph.directed:
        connections = incident - len(inner)
    else:
        # symmetrized storage counts each friendship twice in ``incident``
        connections = incident // 2 - len(inner)
    return in_deg + [float(reach), float(connections)]


def _induced_edges(graph, adopters):
    """Edges among the adopters as (src_pos, dst_pos) index pairs.

    Undirected graphs yield each friendship once with src_pos < dst_pos.
    """
    pos = {u: i for i, u in enumerate(adopters)}
    edges = []
    for i, u in enumerate(adopters):
        for v in graph.following(u).tolist():
            j = pos.get(v)
            if j is not None and (graph.directed or i < j):
                edges.append((i, j))
    return edges


def subgraph_structural_features(window, graph):
    """indegree_sub, density_sub, cc_sub, dist_sub, sub_in_1..sub_in_k."""
    adopters = list(window.adopters)
    k = len(adopters)
    edges = _induced_edges(graph, adopters)
    nbrs = [set() for _ in range(k)]
    sub_in = [0] * k
    for i, j in edges:
        nbrs[i].add(j)
        nbrs[j].add(i)
        sub_in[j] += 1
        if not graph.directed:
            sub_in[i] += 1
    n_cc = 0
    seen = [False] * k
    dist_total = n_pairs = 0
    for src in range(k):
        if not seen[src]:
            n_cc += 1
        dist = {src: 0}
        frontier = [src]
        while frontier:
            nxt = []
            for a in frontier:
                for b in nbrs[a]:
                    if b not in dist:
                        dist[b] = dist[a] + 1
                        nxt.append(b)
            frontier = nxt
        for b, d in dist.items():
            seen[b] = True
            if b > src:
                dist_total += d
                n_pairs += 1
    dist_sub = dist_total / n_pairs if n_pairs else math.nan
    indegree_sub = float(np.mean([graph.follower_count(u) for u in adopters]))
    return [indegree_sub, float(len(edges)), float(n_cc), dist_sub] + [float(x) for x in sub_in]


def _registration(user, log, meta):
    if meta is not None:
        reg = meta.registration_time(user)
        if reg is not None:
            return reg
    return log.first_adoption_time(user)


def _user_profile(user, window_end, log, graph, meta):
    activity = count_adoptions_in(log, user, window_end - ACTIVITY_WINDOW_DAYS * DAY, window_end)
    reg = _registration(user, log, meta)
    age = (window_end - reg) / DAY if reg is not None else 0.0
    return float(activity), float(age), float(graph.follower_count(user))


def root_features(window, log, graph, meta=None):
    """activity_root, age_root, popularity_root of the first adopter.

    Without ``meta`` the account age is measured from the user's first
    adoption in the log.
    """
    return list(_user_profile(window.adopters[0], window.window_end, log, graph, meta))


def resharer_features(window, log, graph, meta=None):
    profiles = [_user_profile(u, window.window_end, log, graph, meta) for u in window.adopters[1:]]
    return np.mean(np.array(profiles), axis=0).tolist()


def history_before(log, user, cutoff, exclude_item=None):
    """Sorted distinct items ``user`` adopted before ``cutoff``, minus ``exclude_item``."""
    ev = log.user_events(user)
    n = np.searchsorted(log.times[ev], cutoff, side="left")
    items = np.unique(log.items[ev[:n]])
    if exclude_item is not None:
        items = items[items != exclude_item]
    return items


def jaccard(a, b):
    """Jaccard index of two sorted arrays of distinct ids."""
    inter = len(np.intersect1d(a, b, assume_unique=True))
    union = len(a) + len(b) - inter
    return inter / union if union else 0.0


def similarity_features(window, log):
    """sim_count, sim_mean, sim_med, sim_max over eligible adopter pairs.

    An adopter is eligible with at least five distinct earlier adoptions
    (the window's own item does not count and is left out of the sets).
    """
    histories = []
    for u in window.adopters:
        h = history_before(log, u, window.window_end, exclude_item=window.item)
        if len(h) >= MIN_SIMILARITY_HISTORY:
            histories.append(h)
    sims = [jaccard(a, b) for a, b in itertools.combinations(histories, 2)]
    if not sims:
        return [0.0, math.nan, math.nan, math.nan]
    return [float(len(sims)), float(np.mean(sims)), float(np.median(sims)), float(max(sims))]


# ---------------------------------------------------------------------------
# Whole cohorts
# ---------------------------------------------------------------------------


@dataclass
class FeatureMatrix:
    """Rows aligned with cohort windows; NaN marks undefined values."""

    X: np.ndarray
    y: np.ndarray
    schema: FeatureSchema
    items: list = field(default_factory=list)
    age_proxy: bool = False

    @property
    def missing(self):
        return np.isnan(self.X)

    def select(self, categories):
        cols = self.schema.columns(categories)
        sub = FeatureSchema(tuple(self.schema.names[i] for i in cols),
                            tuple(self.schema.categories[i] for i in cols))
        return FeatureMatrix(self.X[:, cols], self.y, sub, self.items, self.age_proxy)


def featurize_window(window, graph, log, meta=None, categories=CATEGORIES, t=None):
    row = []
    if "temporal" in categories:
        row += temporal_features(window)
    if "ego" in categories:
        row += ego_structural_features(window, graph)
    if "subgraph" in categories:
        row += subgraph_structural_features(window, graph)
    if "root" in categories:
        row += root_features(window, log, graph, meta)
    if "resharer" in categories:
        row += resharer_features(window, log, graph, meta)
    if "similarity" in categories:
        row += similarity_features(window, log)
    if "daily" in categories and t:
        row += daily_adoption_features(window, t)
    return row


def featurize_cohort(cohort, graph, log, meta=None, categories=None, threads=1):
    """Feature matrix and labels for every window, in cohort order."""
    if cohort is None or len(cohort) == 0:
        raise CohortError("cannot featurize an empty cohort")
    spec = cohort.spec
    t = spec.t if spec.formulation == KT else None
    if categories is not None and "daily" in categories and t is None:
        raise ValueError("daily features are only defined for k-t cohorts")
    schema = feature_schema(spec.k, t, categories)
    cats = set(schema.categories)
    X = np.empty((len(cohort), len(schema)), dtype=float)

    def fill(i):
        X[i] = featurize_window(cohort.windows[i], graph, log, meta, cats, t)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(fill, range(len(cohort))))
    else:
        for i in range(len(cohort)):
            fill(i)
    return FeatureMatrix(X, cohort.labels, schema, cohort.items, age_proxy=meta is None)


def write_feature_csv(fm, path, log=None):
    """Header is the schema names plus ``label``; NaN is written as an empty cell."""
    names = log.item_ids.names if log is not None else None
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item", *fm.schema.names, "label"])
        for item, row, lab in zip(fm.items, fm.X, fm.y):
            cells = ["" if math.isnan(v) else repr(float(v)) for v in row]
            w.writerow([names[item] if names else item, *cells, int(lab)])


def read_feature_csv(path):
    """Load a matrix written by :func:`write_feature_csv`.

    Categories are recovered from the column names.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[0] != "item" or header[-1] != "label":
        raise ValueError(f"{path}: not a feature CSV (expected item ... label header)")
    names = tuple(header[1:-1])
    indexed = [re.fullmatch(r"(time|in|sub_in|adoptions)_(\d+)", n) for n in names]
    k = max([int(m.group(2)) for m in indexed if m and m.group(1) != "adoptions"] + [2])
    t = max([int(m.group(2)) for m in indexed if m and m.group(1) == "adoptions"] + [0]) or None
    full = feature_schema(k, t)
    lookup = dict(zip(full.names, full.categories))
    try:
        cats = tuple(lookup[n] for n in names)
    except KeyError as e:
        raise ValueError(f"{path}: unknown feature column {e.args[0]!r}") from None
    body = rows[1:]
    X = np.array([[float(c) if c != "" else math.nan for c in r[1:-1]] for r in body], dtype=float)
    X = X.reshape(len(body), len(names))
    y = np.array([int(r[-1]) for r in body], dtype=np.int64)
    return FeatureMatrix(X, y, FeatureSchema(names, cats), [r[0] for r in body])
