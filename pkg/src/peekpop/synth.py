"""Seeded synthetic follow graphs and adoption cascades.

The generator is a testbed, not a model of any real site: item quality is
log-normal, spread happens along follow edges with a hazard that grows with
the number of current adopters (cumulative advantage), and a small
out-of-network rate lets items pop up anywhere.
"""
import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .corpus import DAY, AdoptionLog, IdTable, SocialGraph

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 20000
    attach_m: int = 8
    n_items: int = 50000
    horizon_days: int = 60
    seed: int = 42
    quality_sigma: float = 1.0
    p0: float = 0.02
    alpha: float = 0.5
    epsilon: float = 1e-5

    def validate(self):
        if self.attach_m < 0 or self.n_users < self.attach_m + 1:
            raise ValueError("need n_users >= attach_m + 1 and attach_m >= 0")
        if not 0 <= self.p0 < 1:
            raise ValueError("p0 must lie in [0, 1)")
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must lie in [0, 1)")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.n_items < 1 or self.horizon_days < 1:
            raise ValueError("n_items and horizon_days must be positive")
        if self.quality_sigma < 0:
            raise ValueError("quality_sigma must be non-negative")
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)


PROFILES = {
    "default": SynthConfig(),
    # median time to five adoptions: about 1.2 days (mostly out-of-network
    # arrivals, since half the users have no followers) vs about 7 days
    "fast": SynthConfig(n_items=10000, p0=0.01, alpha=0.0, epsilon=3e-4),
    "slow": SynthConfig(n_items=10000, p0=0.05),
}


def get_profile(name, **overrides):
    try:
        base = PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown synth profile {name!r}; choose from {sorted(PROFILES)}") from None
    return base.replace(**overrides) if overrides else base


def generate_graph(config):
    """Directed preferential-attachment follow graph.

    Node ``i`` follows ``attach_m`` distinct earlier nodes, each picked with
    probability proportional to its follower count plus one. The first
    ``attach_m`` nodes follow nobody, so the graph has exactly
    ``attach_m * (n_users - attach_m)`` edges.
    """
    config.validate()
    n, m = config.n_users, config.attach_m
    rng = np.random.default_rng([config.seed, 0])
    # each node appears once for the +1 and once more per follower gained
    pool = np.empty(n + m * n, dtype=np.int64)
    pool[:m] = np.arange(m)
    size = m
    src = np.empty(m * max(n - m, 0), dtype=np.int64)
    dst = np.empty_like(src)
    e = 0
    for v in range(m, n):
        chosen = []
        while len(chosen) < m:
            for t in pool[rng.integers(0, size, size=2 * m)].tolist():
                if t not in chosen:
                    chosen.append(t)
                    if len(chosen) == m:
                        break
        src[e:e + m] = v
        dst[e:e + m] = chosen
        e += m
        pool[size:size + m] = chosen
        pool[size + m] = v
        size += m + 1
    users = IdTable(str(i) for i in range(n))
    return SocialGraph.from_edges(src, dst, n, directed=True, users=users)


def _first_success(u, p):
    """Index of the first success among Bernoulli(p) trials given CDF draw ``u``."""
    if p >= 1.0:
        return 0
    return int(math.floor(math.log1p(-u) / math.log1p(-p)))


def _sample_outside(rng, n_users, k, blocked, n_blocked):
    """``k`` distinct users drawn uniformly from those not marked in ``blocked``."""
    if n_blocked * 2 >= n_users:
        pool = np.flatnonzero(~blocked)
        return np.sort(rng.choice(pool, size=k, replace=False))
    out = []
    while len(out) < k:
        for x in rng.integers(0, n_users, size=2 * (k - len(out)) + 4).tolist():
            if not blocked[x] and x not in out:
                out.append(x)
                if len(out) == k:
                    break
    out.sort()
    return np.array(out, dtype=np.int64)


def _gather(indptr, indices, nodes):
    """Concatenated neighbour slices of ``nodes`` in a CSR adjacency."""
    starts, ends = indptr[nodes], indptr[nodes + 1]
    lens = ends - starts
    total = int(lens.sum())
    if total == 0:
        return indices[:0]
    offs = np.repeat(starts - np.cumsum(lens) + lens, lens) + np.arange(total)
    return indices[offs]


def simulate_item(graph, config, item):
    """Simulate one item's cascade; returns (users, timestamps) arrays.

    Daily steps are not iterated one by one: while nobody adopts, every day
    is an identical batch of Bernoulli trials, so the gap to the next day
    with at least one adoption is geometric, and that day's outcome is drawn
    conditioned on being non-empty. This is equal in distribution to the
    plain day loop.
    """
    rng = np.random.default_rng([config.seed, 1, item])
    n_users = config.n_users
    indptr, indices = graph.in_indptr, graph.in_indices
    quality = rng.lognormal(0.0, config.quality_sigma)
    seed_user = int(rng.integers(n_users))
    day = int(rng.integers(config.horizon_days))
    users = [np.array([seed_user])]
    times = [np.array([day * DAY + int(rng.integers(DAY))])]
    n_adopted = 1
    # blocked marks adopters and exposed non-adopters alike
    blocked = np.zeros(n_users, dtype=bool)
    adopted = np.zeros(n_users, dtype=bool)
    stamp = np.empty(n_users, dtype=np.int64)
    adopted[seed_user] = blocked[seed_user] = True
    frontier = np.unique(indices[indptr[seed_user]:indptr[seed_user + 1]])
    frontier = frontier[~adopted[frontier]]
    blocked[frontier] = True
    s = min(1.0, config.epsilon * quality)
    while True:
        h = min(1.0, config.p0 * quality * (1.0 + config.alpha * n_adopted))
        hf = 1.0 - (1.0 - h) * (1.0 - s)
        n_front = len(frontier)
        n_rest = n_users - n_adopted - n_front
        if not n_front:
            log_front_none = 0.0
        elif hf >= 1.0:
            log_front_none = -math.inf
        else:
            log_front_none = n_front * math.log1p(-hf)
        if not n_rest:
            log_rest_none = 0.0
        elif s >= 1.0:
            log_rest_none = -math.inf
        else:
            log_rest_none = n_rest * math.log1p(-s)
        p_any = -math.expm1(log_front_none + log_rest_none)
        if p_any <= 0.0:
            break
        day += int(rng.geometric(p_any))
        if day >= config.horizon_days:
            break
        p_front = -math.expm1(log_front_none)
        u = rng.random() * p_any
        if u < p_front:
            j = min(_first_success(u, hf), n_front - 1)
            hits = np.flatnonzero(rng.random(n_front - j - 1) < hf) + (j + 1)
            new = np.concatenate([frontier[j:j + 1], frontier[hits]])
            n_spont = int(rng.binomial(n_rest, s)) if n_rest else 0
        else:
            new = frontier[:0]
            u_rest = (u - p_front) / (1.0 - p_front)
            i = min(_first_success(u_rest, s), n_rest - 1)
            n_spont = 1 + (int(rng.binomial(n_rest - i - 1, s)) if n_rest - i - 1 > 0 else 0)
        if n_spont:
            spont = _sample_outside(rng, n_users, n_spont, blocked, n_adopted + n_front)
            new = np.concatenate([new, spont])
        adopted[new] = blocked[new] = True
        n_adopted += len(new)
        exposed = _gather(indptr, indices, new)
        exposed = exposed[~blocked[exposed]]
        if len(exposed) > 1:
            # drop repeats without sorting: keep each node's last position
            stamp[exposed] = np.arange(len(exposed))
            exposed = exposed[stamp[exposed] == np.arange(len(exposed))]
        blocked[exposed] = True
        frontier = frontier[~adopted[frontier]]
        if len(exposed):
            frontier = np.concatenate([frontier, exposed])
        users.append(new)
        times.append(day * DAY + rng.integers(DAY, size=len(new)))
    return np.concatenate(users).astype(np.int32), np.concatenate(times)


def simulate_adoptions(graph, config, threads=1):
    """Run every item's cascade; per-item random streams keep results schedule-independent."""
    config.validate()
    if graph.n_nodes < config.n_users:
        graph = graph.with_node_count(config.n_users)

    def run(item):
        return simulate_item(graph, config, item)

    items = range(config.n_items)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, items, chunksize=256))
    else:
        results = [run(i) for i in items]
    sizes = np.array([len(r[0]) for r in results], dtype=np.int64)
    u = np.concatenate([r[0] for r in results])
    t = np.concatenate([r[1] for r in results])
    del results
    it = np.repeat(np.arange(config.n_items, dtype=np.int64), sizes)
    logger.info("simulated %d adoptions over %d items", len(u), config.n_items)
    user_ids = graph.users if len(graph.users) >= config.n_users else IdTable(str(i) for i in range(config.n_users))
    item_ids = IdTable(f"i{i}" for i in range(config.n_items))
    return AdoptionLog.from_events(u, it, t, user_ids, item_ids)


def item_popularity(log):
    """Distinct adopters per item over the whole log."""
    n_users = max(log.n_users, 1)
    pairs = np.unique(log.items.astype(np.int64) * n_users + log.users)
    return np.bincount(pairs // n_users, minlength=log.n_items)


def top_share(popularity, fraction=0.2):
    """Share of all adoptions held by the most popular ``fraction`` of items."""
    pop = np.sort(np.asarray(popularity, dtype=float))[::-1]
    n_top = max(1, int(math.ceil(fraction * len(pop))))
    total = pop.sum()
    return float(pop[:n_top].sum() / total) if total else 0.0


def gini(values):
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    if n == 0 or x.sum() == 0:
        return 0.0
    ranks = np.arange(1, n + 1)
    return float((2 * ranks - n - 1) @ x / (n * x.sum()))
