"""End-to-end experiment runs: data -> cohort -> features -> reports.

Every report is written with a fixed key order and no wall-clock content,
so the same configuration always reproduces the same bytes.
"""
import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import corpus, synth
from .features import NON_TEMPORAL, featurize_cohort, write_feature_csv
from .learner import (ALL, ALL_MINUS_TEMPORAL, LogisticRegressionGD, ablation,
                      cross_validate, sign_table, single_feature_scan, transfer_matrix)
from .windows import CohortSpec, build_cohort, build_fixed_k_cohort, matched_t, \
    median_time_to_k, write_cohort_jsonl

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage, err):
        super().__init__(f"[{stage}] {err}")
        self.stage = stage


@dataclass
class DataSource:
    """Either a named synthetic profile (plus overrides) or TSV paths."""

    name: str = "synth"
    profile: str = None
    synth: dict = field(default_factory=dict)
    graph: str = None
    adoptions: str = None
    meta: str = None
    directed: bool = True

    def __post_init__(self):
        if self.profile is None and (self.graph is None or self.adoptions is None):
            raise ValueError("a data source needs a synth profile or graph + adoptions paths")


@dataclass
class ExperimentConfig:
    data: DataSource = field(default_factory=lambda: DataSource(profile="default"))
    k: int = 5
    T: int = 28
    # None: fixed-k; an int: k-t with that window; "median": k-t matched to
    # the fixed-k cohort's median time to k adoptions
    t: object = None
    categories: list = None
    learner: dict = field(default_factory=dict)
    folds: int = 5
    seed: int = 0
    out: str = "out"
    threads: int = 1

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        if isinstance(d.get("data"), dict):
            d["data"] = DataSource(**d["data"])
        return cls(**d)


def load_config_file(path):
    """Read a TOML or JSON config file into a plain dict."""
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    try:
        import tomllib
    except ModuleNotFoundError:  # Python 3.10
        import tomli as tomllib

    with open(path, "rb") as fh:
        return tomllib.load(fh)


def write_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def write_rows_csv(rows, header, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def load_dataset(source, threads=1):
    """Return ``(graph, log, meta)`` for a :class:`DataSource`."""
    if source.profile is not None:
        cfg = synth.get_profile(source.profile, **source.synth)
        graph = synth.generate_graph(cfg)
        log = synth.simulate_adoptions(graph, cfg, threads=threads)
        return graph, log, None
    users = corpus.IdTable()
    graph = corpus.load_graph(source.graph, directed=source.directed, users=users)
    log = corpus.load_adoptions(source.adoptions, users=users)
    meta = corpus.load_meta(source.meta, users, log) if source.meta else None
    return graph, log, meta


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as err:
        raise StageError(name, err) from err


def _spec_for(config, log):
    if config.t is None:
        return CohortSpec(config.k, config.T), None
    if config.t == "median":
        base = build_fixed_k_cohort(log, CohortSpec(config.k, config.T))
        return CohortSpec(config.k, config.T, matched_t(base)), median_time_to_k(base)
    return CohortSpec(config.k, config.T, int(config.t)), None


def _round(x):
    return round(float(x), 6)


def run_experiment(config):
    """Run one dataset through every stage; returns the summary dict.

    Files written to ``config.out``: cohort.jsonl, features.csv,
    ablation.json/.csv, scan.json/.csv, summary.json, config.json.
    """
    os.makedirs(config.out, exist_ok=True)
    estimator = LogisticRegressionGD(**config.learner)
    graph, log, meta = _stage("ingest", load_dataset, config.data, config.threads)
    spec, median_t = _stage("cohort", _spec_for, config, log)
    cohort = _stage("cohort", build_cohort, log, spec)
    write_cohort_jsonl(cohort, os.path.join(config.out, "cohort.jsonl"), log)
    fm = _stage("featurize", featurize_cohort, cohort, graph, log, meta, config.categories,
                config.threads)
    write_feature_csv(fm, os.path.join(config.out, "features.csv"), log)
    reports = _stage("ablate", ablation, fm, None, config.folds, config.seed, estimator,
                     config.threads)
    write_json({k: v.to_dict() for k, v in reports.items()}, os.path.join(config.out, "ablation.json"))
    write_rows_csv([[k, _round(v.accuracy), len(v.features)] for k, v in reports.items()],
                   ["feature_set", "accuracy", "n_features"], os.path.join(config.out, "ablation.csv"))
    scans = _stage("scan", single_feature_scan, fm, config.folds, config.seed, estimator,
                   config.threads)
    write_json([dataclasses.asdict(s) for s in scans], os.path.join(config.out, "scan.json"))
    write_rows_csv([[s.feature, s.category, _round(s.accuracy), s.coef, s.sign] for s in scans],
                   ["feature", "category", "accuracy", "coef", "sign"],
                   os.path.join(config.out, "scan.csv"))
    best = max(scans, key=lambda s: s.accuracy)
    summary = {
        "config": config.to_dict(),
        "dataset": {"users": int(log.n_users), "items": int(log.n_items),
                    "adoptions": int(len(log)), "edges": int(graph.edge_count),
                    "top20_share": _round(synth.top_share(synth.item_popularity(log)))},
        "cohort": {"formulation": spec.formulation, "k": spec.k, "T": spec.T, "t": spec.t,
                   "size": len(cohort), "median_popularity": cohort.median_popularity,
                   "positives": int(cohort.labels.sum()),
                   "median_time_to_k_days": None if median_t is None else _round(median_t)},
        "age_source": "first_adoption_proxy" if fm.age_proxy else "registration",
        "schema": list(fm.schema.names),
        "accuracy": {k: _round(v.accuracy) for k, v in reports.items()},
        "best_single_feature": {"feature": best.feature, "accuracy": _round(best.accuracy)},
        "single_feature_accuracy": {s.feature: _round(s.accuracy) for s in scans},
    }
    write_json(summary, os.path.join(config.out, "summary.json"))
    write_json(config.to_dict(), os.path.join(config.out, "config.json"))
    return summary


@dataclass
class TransferConfig:
    datasets: list
    k: int = 5
    T: int = 28
    learner: dict = field(default_factory=dict)
    folds: int = 5
    seed: int = 0
    out: str = "out"
    threads: int = 1

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["datasets"] = [x if isinstance(x, DataSource) else DataSource(**x) for x in d["datasets"]]
        return cls(**d)

    def to_dict(self):
        return dataclasses.asdict(self)


def run_transfer(config):
    """Cross-dataset accuracy matrices (temporal-only and non-temporal-only) plus a sign table."""
    if len(config.datasets) < 2:
        raise ValueError("need >= 2 datasets for a transfer run")
    names = [d.name for d in config.datasets]
    if len(set(names)) != len(names):
        raise ValueError(f"dataset names must be unique, got {names}")
    os.makedirs(config.out, exist_ok=True)
    estimator = LogisticRegressionGD(**config.learner)
    matrices = {}
    for src in config.datasets:
        graph, log, meta = _stage(f"ingest:{src.name}", load_dataset, src, config.threads)
        cohort = _stage(f"cohort:{src.name}", build_fixed_k_cohort, log, CohortSpec(config.k, config.T))
        matrices[src.name] = _stage(f"featurize:{src.name}", featurize_cohort, cohort, graph, log,
                                    meta, None, config.threads)
    return transfer_report(matrices, config.out, config.folds, config.seed, estimator,
                           config.threads, extra={"config": config.to_dict()})


def transfer_report(matrices, out, folds=5, seed=0, estimator=None, threads=1, extra=None):
    """Write transfer matrices and the coefficient-sign table for prepared feature matrices."""
    if len(matrices) < 2:
        raise ValueError("need >= 2 datasets for a transfer run")
    os.makedirs(out, exist_ok=True)
    names = list(matrices)
    blocks = {}
    for label, cats in (("temporal", ["temporal"]), ("non_temporal", list(NON_TEMPORAL))):
        res = _stage("transfer", transfer_matrix, matrices, cats, folds, seed, estimator, threads)
        blocks[label] = res
        write_rows_csv([[n, *(_round(a) for a in row)] for n, row in zip(names, res.accuracy)],
                       ["test\\train", *names], os.path.join(out, f"transfer_{label}.csv"))
    scans = {n: _stage("scan", single_feature_scan, matrices[n].select(NON_TEMPORAL), folds, seed,
                       estimator, threads) for n in names}
    signs = sign_table(scans)
    write_rows_csv([[r["feature"], r["category"], *(r["signs"][n] for n in names), int(r["flips"])]
                    for r in signs], ["feature", "category", *names, "flips"],
                   os.path.join(out, "signs.csv"))
    report = dict(extra or {})
    report.update({
        "datasets": names,
        "sizes": {n: int(len(matrices[n].y)) for n in names},
        "temporal": blocks["temporal"].to_dict(),
        "non_temporal": blocks["non_temporal"].to_dict(),
        "signs": signs,
        "n_sign_flips": int(sum(r["flips"] for r in signs)),
        "n_sign_features": len(signs),
    })
    write_json(report, os.path.join(out, "transfer.json"))
    return report
