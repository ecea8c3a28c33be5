"""Command-line entry point: ``peekpop <subcommand> ...``.

Subcommands map to pipeline stages and exchange plain files (TSV, JSONL,
CSV, JSON), so any stage can be rerun or inspected on its own. ``report``
runs every stage from one config file; ``transfer`` compares datasets.
"""
import argparse
import json
import logging
import os
import sys

from . import corpus, synth
from .experiment import (DataSource, ExperimentConfig, StageError, TransferConfig,
                         load_config_file, run_experiment, run_transfer, transfer_report,
                         write_json, write_rows_csv)
from .features import CATEGORIES, featurize_cohort, read_feature_csv, write_feature_csv
from .learner import (LogisticRegressionGD, ablation, cross_validate, evaluate, load_model,
                      save_model, single_feature_scan)
from .windows import CohortSpec, build_cohort, build_fixed_k_cohort, matched_t, \
    read_cohort_jsonl, write_cohort_jsonl

logger = logging.getLogger("peekpop")

FORMATTER = argparse.ArgumentDefaultsHelpFormatter


def _global_flags(suppress=False):
    """Flags accepted before or after the subcommand.

    The subcommand copy uses SUPPRESS defaults so it does not clobber a value
    given before the subcommand name.
    """
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d(None), help="random seed (CV shuffles; synth generator)")
    p.add_argument("--threads", type=int, default=d(1), help="worker cap for parallel stages")
    p.add_argument("--out", default=d("out"), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def _data_flags(p, required=True):
    p.add_argument("--graph", required=required, help="edge list TSV: src<TAB>dst (src follows dst)")
    p.add_argument("--adoptions", required=required, help="adoption TSV: user<TAB>item<TAB>unix_seconds")
    p.add_argument("--meta", help="optional registration TSV: user<TAB>unix_seconds")
    p.add_argument("--undirected", action="store_true", help="symmetrize the graph on load")


def _cohort_flags(p):
    p.add_argument("--k", type=int, default=5, help="number of early adopters to peek at")
    p.add_argument("--T", type=int, default=28, help="popularity horizon in days")
    p.add_argument("--t", default=None,
                   help="k-t window in days, or 'median' to match the fixed-k median time to k")


def _learner_flags(p):
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--max-epochs", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-6)


def _estimator(args):
    return LogisticRegressionGD(learning_rate=args.learning_rate, l2=args.l2,
                                max_epochs=args.max_epochs, tol=args.tol)


def _load(args):
    users = corpus.IdTable()
    graph = corpus.load_graph(args.graph, directed=not args.undirected, users=users)
    log = corpus.load_adoptions(args.adoptions, users=users)
    meta = corpus.load_meta(args.meta, users, log) if args.meta else None
    return graph, log, meta


def _spec(args, log):
    if args.t is None:
        return CohortSpec(args.k, args.T)
    if args.t == "median":
        return CohortSpec(args.k, args.T, matched_t(build_fixed_k_cohort(log, CohortSpec(args.k, args.T))))
    return CohortSpec(args.k, args.T, int(args.t))


def _seed(args, default=0):
    return default if args.seed is None else args.seed


def _parse_set(pairs):
    out = {}
    for pair in pairs or ():
        key, _, value = pair.partition("=")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


# --- subcommands -----------------------------------------------------------


def cmd_synth(args):
    overrides = {}
    if args.config:
        overrides.update(load_config_file(args.config))
    overrides.update(_parse_set(args.set))
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = synth.get_profile(args.profile, **overrides).validate()
    graph = synth.generate_graph(cfg)
    log = synth.simulate_adoptions(graph, cfg, threads=args.threads)
    os.makedirs(args.out, exist_ok=True)
    corpus.write_graph(graph, os.path.join(args.out, "graph.tsv"))
    corpus.write_adoptions(log, os.path.join(args.out, "adoptions.tsv"))
    if args.cache:
        corpus.save_cache(os.path.join(args.out, "corpus.clb"), graph, log)
    pop = synth.item_popularity(log)
    write_json({"config": cfg.to_dict(), "users": graph.n_nodes, "edges": graph.edge_count,
                "adoptions": len(log), "top20_share": round(synth.top_share(pop), 6),
                "gini": round(synth.gini(pop), 6)}, os.path.join(args.out, "synth.json"))


def cmd_cohort(args):
    graph, log, meta = _load(args)
    spec = _spec(args, log)
    cohort = build_cohort(log, spec)
    os.makedirs(args.out, exist_ok=True)
    write_cohort_jsonl(cohort, os.path.join(args.out, "cohort.jsonl"), log)
    write_json({"spec": spec.to_dict(), "formulation": spec.formulation, "size": len(cohort),
                "median_popularity": cohort.median_popularity},
               os.path.join(args.out, "cohort.json"))


def cmd_featurize(args):
    graph, log, meta = _load(args)
    spec = _spec(args, log)
    cohort = read_cohort_jsonl(args.cohort, spec, log)
    fm = featurize_cohort(cohort, graph, log, meta, args.categories, threads=args.threads)
    os.makedirs(args.out, exist_ok=True)
    write_feature_csv(fm, os.path.join(args.out, "features.csv"), log)


def _features(args):
    fm = read_feature_csv(args.features)
    return fm.select(args.categories) if args.categories else fm


def cmd_train(args):
    fm = _features(args)
    model = _estimator(args).fit(fm.X, fm.y)
    os.makedirs(args.out, exist_ok=True)
    save_model(model, fm.schema.names, os.path.join(args.out, "model.json"))


def cmd_eval(args):
    fm = read_feature_csv(args.features)
    os.makedirs(args.out, exist_ok=True)
    if args.model:
        model, names = load_model(args.model)
        missing = [n for n in names if n not in fm.schema.names]
        if missing:
            raise ValueError(f"feature file lacks model columns: {missing}")
        cols = [fm.schema.index(n) for n in names]
        report = evaluate(model, fm.X[:, cols], fm.y, names)
    else:
        fm = fm.select(args.categories) if args.categories else fm
        report = cross_validate(fm, folds=args.folds, seed=_seed(args), estimator=_estimator(args),
                                threads=args.threads)
    write_json(report.to_dict(), os.path.join(args.out, "eval.json"))


def cmd_ablate(args):
    fm = read_feature_csv(args.features)
    reports = ablation(fm, args.categories, args.folds, _seed(args), _estimator(args), args.threads)
    os.makedirs(args.out, exist_ok=True)
    write_json({k: v.to_dict() for k, v in reports.items()}, os.path.join(args.out, "ablation.json"))
    write_rows_csv([[k, round(v.accuracy, 6), len(v.features)] for k, v in reports.items()],
                   ["feature_set", "accuracy", "n_features"], os.path.join(args.out, "ablation.csv"))


def cmd_scan(args):
    fm = _features(args)
    scans = single_feature_scan(fm, args.folds, _seed(args), _estimator(args), args.threads)
    os.makedirs(args.out, exist_ok=True)
    write_rows_csv([[s.feature, s.category, round(s.accuracy, 6), s.coef, s.sign] for s in scans],
                   ["feature", "category", "accuracy", "coef", "sign"], os.path.join(args.out, "scan.csv"))


def cmd_transfer(args):
    if args.config:
        raw = load_config_file(args.config)
        raw.setdefault("out", args.out)
        if args.seed is not None:
            raw["seed"] = args.seed
        raw.setdefault("threads", args.threads)
        run_transfer(TransferConfig.from_dict(raw))
        return
    if args.features:
        names = args.name or [os.path.splitext(os.path.basename(f))[0] for f in args.features]
        if len(names) != len(args.features):
            raise ValueError("--name must be given once per --features file")
        if len(args.features) < 2:
            raise ValueError("need >= 2 datasets")
        matrices = {n: read_feature_csv(f) for n, f in zip(names, args.features)}
        transfer_report(matrices, args.out, args.folds, _seed(args), _estimator(args), args.threads)
        return
    profiles = args.profile or []
    if len(profiles) < 2:
        raise ValueError("need >= 2 datasets (give --profile twice, --features twice, or --config)")
    cfg = TransferConfig([DataSource(name=p, profile=p) for p in profiles], k=args.k, T=args.T,
                         learner=_estimator(args).get_params(), folds=args.folds, seed=_seed(args),
                         out=args.out, threads=args.threads)
    run_transfer(cfg)


def cmd_report(args):
    raw = load_config_file(args.config) if args.config else {}
    if args.profile:
        raw["data"] = {"name": args.profile, "profile": args.profile}
    elif args.graph:
        raw["data"] = {"name": os.path.basename(args.adoptions), "graph": args.graph,
                       "adoptions": args.adoptions, "meta": args.meta,
                       "directed": not args.undirected}
    raw.setdefault("out", args.out)
    raw.setdefault("threads", args.threads)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.t is not None:
        raw["t"] = args.t if args.t == "median" else int(args.t)
    summary = run_experiment(ExperimentConfig.from_dict(raw))
    print(json.dumps(summary["accuracy"], indent=2))


def build_parser():
    parser = argparse.ArgumentParser(prog="peekpop", description=__doc__, formatter_class=FORMATTER,
                                     parents=[_global_flags()])
    g = _global_flags(suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[g], formatter_class=FORMATTER,
                       help="generate a synthetic graph and adoption log")
    p.add_argument("--profile", default="default", choices=sorted(synth.PROFILES))
    p.add_argument("--config", help="TOML/JSON file with SynthConfig keys")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one SynthConfig key")
    p.add_argument("--cache", action="store_true", help="also write a CLB1 binary cache")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cohort", parents=[g], formatter_class=FORMATTER,
                       help="build a fixed-k or k-t cohort")
    _data_flags(p)
    _cohort_flags(p)
    p.set_defaults(func=cmd_cohort)

    p = sub.add_parser("featurize", parents=[g], formatter_class=FORMATTER,
                       help="compute the feature matrix for a cohort")
    _data_flags(p)
    _cohort_flags(p)
    p.add_argument("--cohort", required=True, help="cohort JSONL from the cohort stage")
    p.add_argument("--categories", nargs="+", choices=CATEGORIES)
    p.set_defaults(func=cmd_featurize)

    for name, func, text in (("train", cmd_train, "fit a model on a feature CSV"),
                             ("eval", cmd_eval, "score a saved model, or cross-validate"),
                             ("ablate", cmd_ablate, "cross-validate each feature category"),
                             ("scan", cmd_scan, "single-feature accuracy and coefficient signs")):
        p = sub.add_parser(name, parents=[g], formatter_class=FORMATTER, help=text)
        p.add_argument("--features", required=True, help="feature CSV from the featurize stage")
        p.add_argument("--categories", nargs="+", choices=CATEGORIES)
        _learner_flags(p)
        if name == "eval":
            p.add_argument("--model", help="model JSON from the train stage; omit to cross-validate")
        p.set_defaults(func=func)

    p = sub.add_parser("transfer", parents=[g], formatter_class=FORMATTER,
                       help="train on one dataset, test on each other")
    p.add_argument("--config", help="TOML/JSON with a [[datasets]] list")
    p.add_argument("--profile", action="append", choices=sorted(synth.PROFILES))
    p.add_argument("--features", action="append", help="feature CSV, one per dataset")
    p.add_argument("--name", action="append", help="dataset name for each --features")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--T", type=int, default=28)
    _learner_flags(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("report", parents=[g], formatter_class=FORMATTER,
                       help="run the whole pipeline from one config")
    p.add_argument("--config", help="experiment TOML/JSON")
    p.add_argument("--profile", choices=sorted(synth.PROFILES), help="use a synthetic profile")
    _data_flags(p, required=False)
    p.add_argument("--t", default=None, help="k-t window in days or 'median'")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except StageError as err:
        print(f"peekpop {args.command}: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - report any stage failure by name
        print(f"peekpop {args.command}: [{args.command}] {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
