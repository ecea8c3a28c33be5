"""Random-instance comparison of the fast feature code with tests/oracles.py.

Shared by the unit tests (small counts) and the acceptance suite (200 cases).
"""
import math

import numpy as np

from peekpop.corpus import DAY, SocialGraph
from peekpop.features import (ego_structural_features, similarity_features,
                              subgraph_structural_features, temporal_features)

from . import oracles
from .helpers import make_log, make_window


def _close(a, b, tol=1e-12):
    if b is None:
        return math.isnan(a)
    return abs(a - b) <= tol * max(1.0, abs(b))


def random_case(rng):
    n = int(rng.integers(2, 21))
    directed = bool(rng.integers(0, 2))
    p = rng.uniform(0.05, 0.6)
    edges = [(u, v) for u in range(n) for v in range(n) if u != v and rng.random() < p]
    if edges:
        src, dst = map(list, zip(*edges))
    else:
        src, dst = [], []
    # shuffle storage order: features must not depend on it
    order = rng.permutation(len(src))
    graph = SocialGraph.from_edges(np.array(src, dtype=np.int64)[order],
                                   np.array(dst, dtype=np.int64)[order], n, directed=directed)
    k = int(rng.integers(2, min(n, 6) + 1))
    adopters = [int(x) for x in rng.choice(n, size=k, replace=False)]
    days = np.sort(rng.choice([0.0, 0.25, 0.5, 1.0, 2.0, 3.5, 7.0], size=k)) if rng.random() < 0.3 \
        else np.sort(rng.uniform(0, 28, size=k))
    days[0] = 0.0
    item = 0
    base = 40 * DAY
    window = make_window(adopters, base / DAY + days, item=item)
    # background history over a small item pool so Jaccard overlaps happen
    events = [(u, item, t) for u, t in zip(adopters, window.adopter_times)]
    for _ in range(int(rng.integers(0, 200))):
        events.append((int(rng.integers(0, n)), int(rng.integers(1, 12)),
                       int(rng.integers(0, 80 * DAY))))
    return graph, edges, directed, window, events


def check_case(graph, edges, directed, window, events):
    """Return a list of mismatch descriptions (empty when everything agrees)."""
    bad = []
    A = oracles.adjacency(edges, graph.n_nodes, directed)
    adopters = list(window.adopters)
    k = len(adopters)
    got = ego_structural_features(window, graph)
    want = oracles.ego(A, adopters, directed)
    if got != [float(x) for x in want]:
        bad.append(f"ego {got} != {want}")
    got = subgraph_structural_features(window, graph)
    want = oracles.subgraph(A, adopters, directed)
    ints_ok = got[1:3] == [float(x) for x in want[1:3]] and got[4:] == [float(x) for x in want[4:]]
    if not (ints_ok and _close(got[0], want[0]) and _close(got[3], want[3])):
        bad.append(f"subgraph {got} != {want}")
    got = temporal_features(window)
    want = oracles.temporal(window.adopter_times, k)
    if len(got) != len(want) or not all(_close(a, b) for a, b in zip(got, want)):
        bad.append(f"temporal {got} != {want}")
    log = make_log(events)
    got = similarity_features(window, log)
    want = oracles.similarity(events, adopters, window.item, window.window_end)
    if got[0] != want[0] or not all(_close(a, b) for a, b in zip(got[1:], want[1:])):
        bad.append(f"similarity {got} != {want}")
    return bad


def run(n_cases, seed=0):
    rng = np.random.default_rng(seed)
    failures = []
    for i in range(n_cases):
        bad = check_case(*random_case(rng))
        failures += [f"case {i}: {b}" for b in bad]
    return failures
