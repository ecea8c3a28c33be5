import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peekpop.corpus import DAY
from peekpop.windows import (CohortError, CohortSpec, build_fixed_k_cohort, build_kt_cohort,
                             matched_t, median_time_to_k, popularity_at, read_cohort_jsonl,
                             write_cohort_jsonl)

from .helpers import make_log
from .oracles import median_labels

# the last event pins last_timestamp far enough out that nothing is censored
FAR = (0, 99, 400 * DAY)


def days(user_days, item):
    return [(u, item, int(d * DAY)) for u, d in user_days]


class TestFixedK:
    def test_hand_enumerated_example(self):
        ev = days([(1, 0), (2, 1), (3, 2), (4, 3)], 0) + days([(1, 0), (2, 4)], 1) + days([(1, 0)], 2)
        cohort = build_fixed_k_cohort(make_log(ev + [FAR]), CohortSpec(k=2, T=5))
        by_item = {w.item: w for w in cohort.windows}
        assert set(by_item) == {0, 1}
        assert by_item[0].final_popularity == 4 and by_item[1].final_popularity == 2
        assert cohort.median_popularity == 3
        assert by_item[0].label == 1 and by_item[1].label == 0

    def test_censoring(self):
        # last timestamp is day 10; an item first adopted on day 8 is censored for T=5
        ev = days([(1, 0), (2, 1)], 0) + days([(1, 1), (2, 2)], 1) + days([(1, 8), (2, 10)], 2)
        cohort = build_fixed_k_cohort(make_log(ev), CohortSpec(k=2, T=5))
        assert cohort.items == [0, 1]

    def test_equal_popularity_all_zero(self):
        ev = days([(1, 0), (2, 1)], 0) + days([(3, 0), (4, 1)], 1) + days([(1, 0), (3, 2)], 2)
        cohort = build_fixed_k_cohort(make_log(ev + [FAR]), CohortSpec(k=2, T=5))
        assert cohort.median_popularity == 2
        assert cohort.labels.tolist() == [0, 0, 0]

    def test_repeat_adopter_counted_once(self):
        ev = days([(1, 0), (1, 0.5), (2, 1), (3, 2)], 0) + days([(1, 0), (2, 1)], 1)
        cohort = build_fixed_k_cohort(make_log(ev + [FAR]), CohortSpec(k=2, T=5))
        w = cohort.windows[0]
        assert w.adopters == (1, 2)
        assert w.window_end == 1 * DAY
        assert w.final_popularity == 3

    def test_too_small(self):
        ev = days([(1, 0), (2, 1)], 0)
        with pytest.raises(CohortError, match="cohort too small"):
            build_fixed_k_cohort(make_log(ev + [FAR]), CohortSpec(k=2, T=5))

    def test_rejects_kt_spec(self):
        with pytest.raises(ValueError):
            build_fixed_k_cohort(make_log([FAR]), CohortSpec(k=2, T=5, t=1))


class TestKT:
    def test_exactly_k(self):
        ev = (days([(1, 0), (2, 0.2), (3, 0.4)], 0)          # 3 in day 0: excluded
              + days([(1, 0), (2, 0.8), (3, 3)], 1)          # 2 in day 0: included
              + days([(4, 0), (5, 0.5)], 2))
        cohort = build_kt_cohort(make_log(ev + [FAR]), CohortSpec(k=2, T=5, t=1))
        assert cohort.items == [1, 2]
        w = cohort.windows[0]
        assert w.adopters == (1, 2)
        assert w.window_end == 1 * DAY
        assert w.final_popularity == 3

    def test_kth_adoption_on_boundary_excluded(self):
        ev = days([(1, 0), (2, 1)], 0) + days([(1, 0), (2, 0.5)], 1) + days([(1, 0), (3, 0.9)], 2)
        cohort = build_kt_cohort(make_log(ev + [FAR]), CohortSpec(k=2, T=5, t=1))
        assert 0 not in cohort.items

    def test_subset_of_fixed_k(self):
        rng = np.random.default_rng(5)
        ev = [(int(u), int(i), int(t)) for u, i, t in
              zip(rng.integers(0, 30, 600), rng.integers(0, 40, 600), rng.integers(0, 40 * DAY, 600))]
        log = make_log(ev + [FAR])
        fixed = build_fixed_k_cohort(log, CohortSpec(k=3, T=10))
        kt = build_kt_cohort(log, CohortSpec(k=3, T=10, t=4))
        assert set(kt.items) <= set(fixed.items)


class TestPopularityAt:
    def test_half_open(self):
        log = make_log([(1, 0, 0), (2, 0, int(27.9 * DAY)), (3, 0, 28 * DAY)])
        assert popularity_at(log, 0, 0, 28) == 2

    def test_distinct(self):
        log = make_log([(1, 0, 0), (1, 0, 5)])
        assert popularity_at(log, 0, 0, 1) == 1

    def test_empty_window(self):
        log = make_log([(1, 0, 100 * DAY)])
        assert popularity_at(log, 0, 0, 28) == 0


def test_spec_validation():
    with pytest.raises(ValueError):
        CohortSpec(k=1)
    with pytest.raises(ValueError):
        CohortSpec(k=5, T=28, t=29)
    assert CohortSpec(5, 28).formulation == "fixed_k"
    assert CohortSpec(5, 28, 7).formulation == "kt"


def test_matched_t_rounds_up_median():
    ev = (days([(1, 0), (2, 1.5)], 0) + days([(1, 0), (2, 2.5)], 1) + days([(1, 0), (2, 0.5)], 2))
    cohort = build_fixed_k_cohort(make_log(ev + [FAR]), CohortSpec(k=2, T=5))
    assert median_time_to_k(cohort) == 1.5
    assert matched_t(cohort) == 2


def test_jsonl_round_trip(tmp_path):
    ev = days([(1, 0), (2, 1), (3, 2), (4, 3)], 0) + days([(1, 0), (2, 4)], 1)
    log = make_log(ev + [FAR])
    spec = CohortSpec(k=2, T=5)
    cohort = build_fixed_k_cohort(log, spec)
    path = tmp_path / "c.jsonl"
    write_cohort_jsonl(cohort, path, log)
    lines = path.read_text().splitlines()
    assert len(lines) == 2 and '"final_popularity": 4' in lines[0]
    back = read_cohort_jsonl(path, spec, log)
    assert back.windows == cohort.windows
    assert back.median_popularity == cohort.median_popularity


event_lists = st.lists(st.tuples(st.integers(0, 9), st.integers(0, 5), st.integers(0, 30 * DAY)),
                       min_size=10, max_size=80)


@settings(max_examples=80, deadline=None)
@given(event_lists, st.integers(2, 4), st.integers(1, 10), st.integers(1, 10))
def test_cohort_properties(evs, k, T, t):
    log = make_log(evs + [(0, 9, 60 * DAY)])
    t = min(t, T)
    try:
        fixed = build_fixed_k_cohort(log, CohortSpec(k, T))
    except CohortError:
        return
    again = build_fixed_k_cohort(log, CohortSpec(k, T))
    assert again.windows == fixed.windows
    pops = [w.final_popularity for w in fixed.windows]
    med, labels = median_labels(pops)
    assert fixed.median_popularity == med
    assert fixed.labels.tolist() == labels
    assert fixed.labels.sum() <= len(fixed) - fixed.labels.sum()
    assert fixed.items == sorted(fixed.items)
    for w in fixed.windows:
        assert len(w.adopters) == len(set(w.adopters)) == k
        assert list(w.adopter_times) == sorted(w.adopter_times)
        assert w.window_end == w.adopter_times[-1]
        assert w.final_popularity >= k
        # brute-force recount of the first k distinct adopters
        seen = []
        for u, i, tt in sorted(evs, key=lambda e: (e[2], e[0], e[1])):
            if i == w.item and u not in seen:
                seen.append(u)
        assert list(w.adopters) == seen[:k]
    try:
        kt = build_kt_cohort(log, CohortSpec(k, T, t))
    except CohortError:
        return
    assert set(kt.items) <= set(fixed.items)
