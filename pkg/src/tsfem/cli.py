"""Command-line interface: ``tsfem fit | predict | simulate | report``.

Exit codes: 0 success, 1 data or fitting error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .baselines import LmmFit, fit_lmm, fit_ltscb, fit_null
from .dataset import LoadError, load_csv
from .pruning import fit_pruned
from .simlab.dgp import SimSpec
from .simlab.report import read_results, write_report
from .simlab.study import STUDY_MODELS, run_study
from .stepwise import MODEL_KINDS, FitConfig
from .trees import ParseError, TreeModel, UnseenUnitError, deserialize, serialize

log = logging.getLogger("tsfem")

FIT_DEFAULTS = {
    "model": "ttsc",
    "max_splits": 20,
    "min_bucket": None,
    "max_depth": None,
    "folds": 10,
    "one_se": True,
    "seed": 2024,
    "workers": 1,
    "out": "model.json",
}


class UsageError(Exception):
    pass


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(lo: int, hi: int):
    def parse(text: str) -> list[int]:
        vals = []
        try:
            for tok in _csv_list(text):
                a, sep, b = tok.partition("-")
                vals += list(range(int(a), int(b) + 1)) if sep else [int(a)]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None
        bad = [v for v in vals if not lo <= v <= hi]
        if bad or not vals:
            raise argparse.ArgumentTypeError(f"values must lie in {lo}-{hi}, got {text!r}")
        return vals

    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsfem", description="Tree-structured fixed-effects models for clustered data.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model to a CSV file")
    f.add_argument("--config", help="TOML file with defaults for any of the options below (flags override it)")
    f.add_argument("--data", help="input CSV (required, here or in --config)")
    f.add_argument("--outcome", help="outcome column (required)")
    f.add_argument("--unit", help="unit column (required)")
    f.add_argument("--covariates", type=_csv_list, help="comma-separated covariate columns (default: none)")
    f.add_argument("--binary", type=_csv_list, help="covariates forced to binary kind (default: auto-detected)")
    f.add_argument("--model", choices=MODEL_KINDS, help="model kind (default: ttsc)")
    f.add_argument("--max-splits", type=int, help="maximal number of splits S_max (default: 20)")
    f.add_argument("--min-bucket", type=int, help="minimal bucket size n_mb in observations (default: floor(0.1*N))")
    f.add_argument("--max-depth", type=int, help="maximal depth per tree d_max (default: unlimited)")
    f.add_argument("--folds", type=int, help="cross-validation folds k (default: 10)")
    f.add_argument("--one-se", action=argparse.BooleanOptionalAction, default=None, help="apply the 1SE rule (default: on)")
    f.add_argument("--seed", type=int, help="seed for the fold assignment (default: 2024)")
    f.add_argument("--workers", type=int, help="parallel folds (default: 1)")
    f.add_argument("--out", help="model document path (default: model.json)")

    p = sub.add_parser("predict", help="predict with a fitted model")
    p.add_argument("--model", required=True, help="model document written by `fit` (required)")
    p.add_argument("--data", required=True, help="CSV with the model's unit and covariate columns (required)")
    p.add_argument("--out", default="predictions.csv", help="output CSV (default: predictions.csv)")
    p.add_argument("--unit", help="unit column (default: the one used at fit time)")
    p.add_argument("--allow-unseen-units", action="store_true",
                   help="use the cluster-share weighted intercept for unknown units (default: off)")

    s = sub.add_parser("simulate", help="run the simulation study")
    s.add_argument("--scenario", type=_int_list(1, 4), default=[1], help="scenario(s) 1-4, comma-separated or a range like 1-4 (default: 1)")
    s.add_argument("--setting", type=_int_list(1, 6), default=[1], help="setting(s) 1-6, comma-separated or a range like 2-5 (default: 1)")
    s.add_argument("--reps", type=int, default=100, help="replications per scenario and setting (default: 100)")
    s.add_argument("--models", type=_csv_list, default=list(STUDY_MODELS),
                   help=f"comma-separated subset of {','.join(STUDY_MODELS)} (default: all)")
    s.add_argument("--seed", type=int, default=2024, help="base seed (default: 2024)")
    s.add_argument("--max-splits", type=int, default=20, help="S_max of the tree models (default: 20)")
    s.add_argument("--folds", type=int, default=10, help="cross-validation folds (default: 10)")
    s.add_argument("--workers", type=int, default=1, help="parallel replications (default: 1)")
    s.add_argument("--out", default="results.csv", help="raw results CSV (default: results.csv)")

    r = sub.add_parser("report", help="summarize raw simulation results")
    r.add_argument("--in", dest="inp", required=True, help="raw results CSV from `simulate` (required)")
    r.add_argument("--out", default="summary.md", help="Markdown summary; quartiles go to <stem>_rmse_quartiles.csv (default: summary.md)")
    return parser


def resolve_fit_options(args: argparse.Namespace) -> dict:
    """Layer command-line flags over the config file over built-in defaults."""
    opts = dict(FIT_DEFAULTS)
    opts.update({"covariates": [], "binary": []})
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                file_opts = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        known = set(opts) | {"data", "outcome", "unit"}
        unknown = set(file_opts) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        opts.update(file_opts)
        if isinstance(opts.get("covariates"), str):
            opts["covariates"] = _csv_list(opts["covariates"])
    for key in ("data", "outcome", "unit", "covariates", "binary", "model", "max_splits", "min_bucket",
                "max_depth", "folds", "one_se", "seed", "workers", "out"):
        val = getattr(args, key, None)
        if val is not None:
            opts[key] = val
    for key in ("data", "outcome", "unit"):
        if not opts.get(key):
            raise UsageError(f"--{key} is required")
    try:
        opts["cfg"] = FitConfig(
            max_splits=int(opts["max_splits"]),
            min_bucket=None if opts["min_bucket"] is None else int(opts["min_bucket"]),
            max_depth=None if opts["max_depth"] is None else int(opts["max_depth"]),
            folds=int(opts["folds"]),
            one_se=bool(opts["one_se"]),
            seed=int(opts["seed"]),
            model=str(opts["model"]),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if int(opts["workers"]) < 1:
        raise UsageError("--workers must be >= 1")
    return opts


def summarize(model: TreeModel | LmmFit, opts: dict, data_path: str) -> str:
    cfg: FitConfig = opts["cfg"]
    depth = "unlimited" if cfg.max_depth is None else cfg.max_depth
    bucket = "floor(0.1*N)" if cfg.min_bucket is None else cfg.min_bucket
    lines = [
        f"model: {cfg.model}   data: {data_path}",
        f"S_max = {cfg.max_splits}, n_mb = {bucket}, d_max = {depth}, k = {cfg.folds}, "
        f"1SE = {'on' if cfg.one_se else 'off'}, seed = {cfg.seed}",
        "",
    ]
    if isinstance(model, LmmFit):
        lines += [
            f"intercept: {model.intercept:.6g}",
            f"sigma2_b = {model.sigma2_b:.6g}, sigma2_e = {model.sigma2_e:.6g}, loglik = {model.loglik:.6g}",
            "",
            "covariate  coefficient",
        ]
        lines += [f"{nm:<10} {b: .6g}" for nm, b in zip(model.covariate_names, model.beta)]
        return "\n".join(lines) + "\n"
    if model.cv is not None:
        lines.append(f"selected splits: {model.n_splits} (max CV loglik at {model.cv.s_max_ll}, 1SE choice {model.cv.s_1se})")
    lines.append(f"rss = {model.rss:.6g}, sigma2 = {model.sigma2:.6g}, gamma_bar = {model.gamma_bar:.6g}")
    lines += ["", "cluster  adjusted intercept  units"]
    for c, units in enumerate(model.unit_tree.members()):
        labels = ", ".join(model.unit_labels[u] for u in units)
        lines.append(f"{c:<8} {model.cluster_coef_adj[c]: .6g}  {labels}")
    lines += ["", "leaf  adjusted effect  rule"]
    for m, rule in enumerate(model.cov_tree.rules(list(model.covariate_names))):
        lines.append(f"{m:<5} {model.leaf_coef_adj[m]: .6g}  {rule}")
    if model.linear_vars:
        lines += ["", "covariate  linear coefficient"]
        for k, b in zip(model.linear_vars, model.linear_coef):
            lines.append(f"{model.covariate_names[k]:<10} {b: .6g}")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    opts = resolve_fit_options(args)
    cfg: FitConfig = opts["cfg"]
    kinds = {name: "binary" for name in opts["binary"]}
    d = load_csv(opts["data"], opts["outcome"], opts["unit"], opts["covariates"], kinds)
    workers = int(opts["workers"])
    if cfg.model in ("ttsc", "ltsc"):
        model = fit_pruned(d, cfg, workers)
    elif cfg.model == "ltscb":
        model = fit_ltscb(d, cfg, workers)
    elif cfg.model == "null":
        model = fit_null(d)
    else:
        model = fit_lmm(d)
    columns = {"outcome": opts["outcome"], "unit": opts["unit"]}
    out = Path(opts["out"])
    if isinstance(model, LmmFit):
        doc = model.to_document()
        doc["columns"] = columns
        out.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    else:
        model = _with_columns(model, columns)
        out.write_text(serialize(model), encoding="utf-8")
        if model.cv is not None:
            model.cv.write_csv(out.with_name(out.stem + "_cv.csv"))
    text = summarize(model, opts, opts["data"])
    out.with_name(out.stem + "_summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _with_columns(model: TreeModel, columns: dict) -> TreeModel:
    import dataclasses

    return dataclasses.replace(model, config={**model.config, "columns": columns})


def load_model(path: str) -> tuple[TreeModel | LmmFit, dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError("$", f"cannot read model {path}: {exc}") from None
    if isinstance(doc, dict) and doc.get("kind") == "lmm":
        return LmmFit.from_document(doc), doc.get("columns", {})
    model = deserialize(doc)
    return model, model.config.get("columns", {})


def cmd_predict(args) -> int:
    model, columns = load_model(args.model)
    unit_col = args.unit or columns.get("unit")
    if not unit_col:
        raise UsageError("--unit is required for this model document")
    d = load_csv(args.data, None, unit_col, list(model.covariate_names))
    labels = [d.unit_labels[u] for u in d.unit]
    try:
        frame = model.predict_frame(d.X, labels, allow_unseen=args.allow_unseen_units)
    except UnseenUnitError as exc:
        print(f"error: {exc.args[0]}; pass --allow-unseen-units to predict them", file=sys.stderr)
        return 1
    with Path(args.out).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "unit", "leaf", "cluster", "prediction", "fallback"])
        for r in range(d.N):
            w.writerow([r, labels[r], int(frame["leaf"][r]), int(frame["cluster"][r]),
                        repr(float(frame["prediction"][r])), int(frame["fallback"][r])])
    return 0


def cmd_simulate(args) -> int:
    unknown = [m for m in args.models if m not in STUDY_MODELS]
    if unknown:
        raise UsageError(f"unknown model(s) {unknown}; choose from {', '.join(STUDY_MODELS)}")
    if args.reps < 1 or args.workers < 1:
        raise UsageError("--reps and --workers must be >= 1")
    try:
        cfg = FitConfig(max_splits=args.max_splits, folds=args.folds)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    specs = [SimSpec(sc, st, reps=args.reps, seed=args.seed) for sc in args.scenario for st in args.setting]
    result = run_study(specs, args.models, cfg, workers=args.workers)
    result.write_csv(args.out)
    for f in result.failures:
        print(f"warning: replication failed: {f}", file=sys.stderr)
    return 0


def cmd_report(args) -> int:
    try:
        raw = read_results(args.inp)
    except (OSError, ValueError) as exc:
        print(f"error: cannot read {args.inp}: {exc}", file=sys.stderr)
        return 1
    if raw.empty:
        print(f"error: {args.inp} contains no results", file=sys.stderr)
        return 1
    md, quart = write_report(raw, args.out)
    print(f"wrote {md} and {quart}")
    return 0


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (LoadError, ParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
