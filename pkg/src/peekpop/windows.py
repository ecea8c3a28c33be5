"""Early-adoption windows and median-split cohorts.

Two ways of picking items to predict on:

* fixed-k: every item whose k-th distinct adopter arrives within the
  horizon; the window closes at that k-th adoption.
* k-t: only items with exactly k distinct adopters in their first t days;
  the window closes t days after the first adoption.

Both apply the same censoring rule (first adoption at least T days before the
end of the log) and the same label rule (1 iff final popularity is strictly
above the cohort median).
"""
import json
import math
from dataclasses import dataclass

import numpy as np

from .corpus import DAY

FIXED_K = "fixed_k"
KT = "kt"


class CohortError(ValueError):
    pass


@dataclass(frozen=True)
class CohortSpec:
    k: int = 5
    T: int = 28
    t: int = None

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1 day, got {self.T}")
        if self.t is not None and not 1 <= self.t <= self.T:
            raise ValueError(f"t must lie in [1, T], got {self.t}")

    @property
    def formulation(self):
        return FIXED_K if self.t is None else KT

    def to_dict(self):
        return {"k": self.k, "T": self.T, "t": self.t}


@dataclass(frozen=True)
class CascadeWindow:
    item: int
    adopters: tuple
    adopter_times: tuple
    window_end: int
    final_popularity: int
    label: int = 0

    @property
    def first_time(self):
        return self.adopter_times[0]


@dataclass
class Cohort:
    spec: CohortSpec
    windows: list
    median_popularity: float

    def __len__(self):
        return len(self.windows)

    @property
    def labels(self):
        return np.array([w.label for w in self.windows], dtype=np.int64)

    @property
    def items(self):
        return [w.item for w in self.windows]


def _first_distinct(users, times, limit=None):
    """First occurrence of each user, in event order; optionally the first ``limit``."""
    _, first = np.unique(users, return_index=True)
    first.sort()
    if limit is not None:
        first = first[:limit]
    return users[first], times[first]


def popularity_at(log, item, origin, horizon_days):
    """Distinct adopters of ``item`` with ``origin <= time < origin + horizon``."""
    ev = log.item_events(item)
    t = log.times[ev]
    lo = np.searchsorted(t, origin, side="left")
    hi = np.searchsorted(t, origin + horizon_days * DAY, side="left")
    return int(len(np.unique(log.users[ev[lo:hi]])))


def median_labels(popularity):
    """Median (mean of middle two for even counts) and strict-above labels."""
    pop = np.asarray(popularity, dtype=float)
    median = float(np.median(pop))
    return median, (pop > median).astype(np.int64)


def _censor_limit(log, spec):
    return log.last_timestamp - spec.T * DAY


def _finish(spec, rows):
    if len(rows) < 2:
        raise CohortError(f"cohort too small: {len(rows)} qualifying item(s)")
    median, labels = median_labels([r[4] for r in rows])
    windows = [CascadeWindow(*row, label=int(lab)) for row, lab in zip(rows, labels)]
    return Cohort(spec, windows, median)


def build_fixed_k_cohort(log, spec):
    """Items whose k-th distinct adopter arrives within T days of the first adoption."""
    if spec.formulation != FIXED_K:
        raise ValueError("build_fixed_k_cohort needs a spec without t")
    limit = _censor_limit(log, spec)
    horizon = spec.T * DAY
    rows = []
    for item in range(log.n_items):
        ev = log.item_events(item)
        if len(ev) < spec.k:
            continue
        times = log.times[ev]
        first = int(times[0])
        if first > limit:
            continue
        end = np.searchsorted(times, first + horizon, side="left")
        users = log.users[ev[:end]]
        dusers, dtimes = _first_distinct(users, times[:end])
        if len(dusers) < spec.k:
            continue
        rows.append((item, tuple(dusers[:spec.k].tolist()), tuple(dtimes[:spec.k].tolist()),
                     int(dtimes[spec.k - 1]), len(dusers)))
    return _finish(spec, rows)


def build_kt_cohort(log, spec):
    """Items with exactly k distinct adopters in ``[first, first + t days)``."""
    if spec.formulation != KT:
        raise ValueError("build_kt_cohort needs a spec with t")
    limit = _censor_limit(log, spec)
    rows = []
    for item in range(log.n_items):
        ev = log.item_events(item)
        if len(ev) < spec.k:
            continue
        times = log.times[ev]
        first = int(times[0])
        if first > limit:
            continue
        end_t = np.searchsorted(times, first + spec.t * DAY, side="left")
        dusers, dtimes = _first_distinct(log.users[ev[:end_t]], times[:end_t])
        if len(dusers) != spec.k:
            continue
        end_T = np.searchsorted(times, first + spec.T * DAY, side="left")
        final = len(np.unique(log.users[ev[:end_T]]))
        rows.append((item, tuple(dusers.tolist()), tuple(dtimes.tolist()),
                     first + spec.t * DAY, final))
    return _finish(spec, rows)


def build_cohort(log, spec):
    if spec.formulation == KT:
        return build_kt_cohort(log, spec)
    return build_fixed_k_cohort(log, spec)


def median_time_to_k(cohort):
    """Median days from first to k-th adoption over a fixed-k cohort."""
    spans = [(w.adopter_times[-1] - w.adopter_times[0]) / DAY for w in cohort.windows]
    return float(np.median(spans))


def matched_t(cohort):
    """Whole-day matching window for a k-t cohort: the median time to k, rounded up."""
    return max(1, min(cohort.spec.T, math.ceil(median_time_to_k(cohort))))


def write_cohort_jsonl(cohort, path, log=None):
    """One JSON object per window. External ids are used when ``log`` is given."""
    un = log.user_ids.names if log is not None else None
    itn = log.item_ids.names if log is not None else None
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for w in cohort.windows:
            row = {
                "item": itn[w.item] if itn else w.item,
                "adopters": [un[u] for u in w.adopters] if un else list(w.adopters),
                "adopter_times": list(w.adopter_times),
                "window_end": w.window_end,
                "final_popularity": w.final_popularity,
                "label": w.label,
            }
            fh.write(json.dumps(row) + "\n")


def read_cohort_jsonl(path, spec, log=None):
    """Inverse of :func:`write_cohort_jsonl`; the median is recomputed from the rows."""
    windows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            item, adopters = row["item"], row["adopters"]
            if log is not None:
                item = log.item_ids[item]
                adopters = [log.user_ids[u] for u in adopters]
            windows.append(CascadeWindow(item, tuple(adopters), tuple(row["adopter_times"]),
                                         row["window_end"], row["final_popularity"], row["label"]))
    if len(windows) < 2:
        raise CohortError(f"cohort too small: {len(windows)} window(s) in {path}")
    median, _ = median_labels([w.final_popularity for w in windows])
    return Cohort(spec, windows, median)
