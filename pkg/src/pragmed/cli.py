"""Command-line interface: ``pragmed <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .dataset import load_csv, save_csv
from .errors import ConfigError, DataError, NumericError
from .estimator import adapt_stage_one, fit_stage_one, fit_stage_two, load_pipeline, predict_do_batch, save_pipeline
from .features import load_manifest, save_manifest
from .harness import ExperimentConfig, emit_report, run_theta_trials
from .mediation import partition_features
from .regress import RegressorSpec
from .simgen import ImgPertConfig, make_benchmark, provenance, sample_theta_trial

log = logging.getLogger("pragmed")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no such config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return doc


def _learner(args) -> RegressorSpec:
    if args.learner.strip().startswith("{"):
        try:
            return RegressorSpec.from_dict(json.loads(args.learner))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--learner: invalid JSON ({exc})") from None
    spec = RegressorSpec(args.learner)
    return spec.with_seed(args.seed) if args.seed is not None else spec


def _threads(args) -> int:
    n = 1 if args.threads is None else int(args.threads)
    if n < 1:
        raise ConfigError("--threads must be at least 1")
    return n


def _z_columns(text):
    if text is None or text == "all":
        return None
    try:
        return [int(c) for c in text.split(",") if c.strip()]
    except ValueError:
        raise ConfigError(f"--z-columns expects comma-separated integers or 'all', got {text!r}") from None


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    doc = _read_json(args.config) if args.config else {}
    doc = dict(doc)
    n_new = int(doc.pop("n_new", 2000))
    w_new = int(doc.pop("w_new", 5))
    mode = doc.pop("theta_mode", "single")
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = ImgPertConfig.from_dict(doc)
    if mode == "multi":
        cfg = cfg.with_outcome(sample_theta_trial(cfg.seed, "multi"))
    historic, new, gen = make_benchmark(cfg, n_new=n_new, w_new=w_new)
    os.makedirs(args.out, exist_ok=True)
    save_csv(historic, os.path.join(args.out, "historic.csv"))
    save_csv(new, os.path.join(args.out, "new.csv"))
    save_manifest(gen.library(), os.path.join(args.out, "features.json"))
    with open(os.path.join(args.out, "provenance.json"), "w", encoding="utf-8") as fh:
        json.dump(provenance(cfg, n_new=n_new, w_new=w_new, theta_mode=mode), fh, indent=1, sort_keys=True)
    log.info("wrote %d historic and %d new-regime rows to %s", historic.n, new.n, args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    lib = load_manifest(args.features)
    historic = [load_csv(p) for p in args.historic]
    spec = _learner(args)
    zc = _z_columns(args.z_columns)
    seed = args.seed or 0
    g = fit_stage_one(historic, lib, spec, zc, n_jobs=_threads(args))
    crm = fit_stage_two(g, historic, lib, k_folds=args.folds, out_of_fold=not args.in_sample,
                        refit=not args.no_refit, penalty=args.penalty, seed=seed, n_jobs=_threads(args))
    save_pipeline(args.out, g, crm, lib)
    log.info("theta0=%.6g theta=%s lambda*=%.4g", crm.theta0, np.round(crm.theta, 6).tolist(), crm.lambda_star)
    return EXIT_OK


def cmd_adapt(args) -> int:
    g, crm, lib = load_pipeline(args.model)
    new = load_csv(args.unlabeled)
    if args.drop_y and new.labeled:
        new = new.strip_labels()
    g_star = adapt_stage_one(g, new, lib, n_jobs=_threads(args))
    save_pipeline(args.out, g_star, crm, lib)
    log.info("adapted stage one on %d rows", new.n)
    return EXIT_OK


def cmd_predict(args) -> int:
    g, crm, _ = load_pipeline(args.model)
    if crm is None:
        raise ConfigError(f"{args.model} has no stage-two model")
    data = load_csv(args.input)
    yhat = predict_do_batch(crm, g, data.w, data.z)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["regime", "yhat"])
        for r, v in zip(data.regime, yhat):
            w.writerow([int(r), format(float(v), ".17g")])
    return EXIT_OK


def cmd_mediate(args) -> int:
    g, crm, lib = load_pipeline(args.model)
    if crm is None:
        raise ConfigError(f"{args.model} has no stage-two model")
    train, test = load_csv(args.train), load_csv(args.test)
    spec = g.spec if args.learner is None else _learner(args)
    zc = g.z_columns if args.z_columns is None else _z_columns(args.z_columns)
    report = partition_features(crm, lib, train, test, args.alpha, spec, args.test_method, zc,
                                marginal=args.marginal, null_design=args.null_design, seed=args.seed or 0)
    report.write(args.out)
    sys.stdout.write(report.summary())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    doc = _read_json(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.threads is not None:
        doc["threads"] = args.threads
    cfg = ExperimentConfig.from_dict(doc)
    out = args.out or cfg.outdir
    if not out:
        raise ConfigError("no output directory (use --out or set 'outdir')")
    table, report = run_theta_trials(cfg, progress=lambda t, m: log.info("trial %d done (method mse %.5g)", t, m))
    for p in emit_report(table, report, out):
        log.info("wrote %s", p)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default 1)")
    common.add_argument("--verbose", "-v", action="count", default=0, help="more logging")

    p = argparse.ArgumentParser(prog="pragmed", description="Two-stage causal response estimation "
                                "for crude interventions, mediator discovery and benchmarks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate the image-perturbation benchmark")
    s.add_argument("--config", help="JSON generator settings (optional)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", parents=[common], help="fit both stages on historic data")
    s.add_argument("--historic", nargs="+", required=True, help="labeled historic CSVs")
    s.add_argument("--features", required=True, help="feature manifest JSON")
    s.add_argument("--out", required=True, help="model directory")
    s.add_argument("--learner", default="forest", help="stage-one learner kind or JSON spec")
    s.add_argument("--z-columns", default=None, help="comma-separated z columns for stage one, or 'all'")
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--in-sample", action="store_true", help="regress on in-sample stage-one fits")
    s.add_argument("--no-refit", action="store_true", help="keep the penalized coefficients")
    s.add_argument("--penalty", choices=("adaptive", "l1"), default="adaptive")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("adapt", parents=[common], help="refit stage one on unlabeled new-regime rows")
    s.add_argument("--model", required=True)
    s.add_argument("--unlabeled", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--drop-y", action="store_true", help="discard a y column instead of refusing the file")
    s.set_defaults(func=cmd_adapt)

    s = sub.add_parser("predict", parents=[common], help="estimate E[Y | do(w), z] for each row")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True, help="CSV with regime, w*, z* columns")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("mediate", parents=[common], help="select mediators and partition the features")
    s.add_argument("--model", required=True)
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--alpha", type=float, default=0.01)
    s.add_argument("--learner", default=None, help="learner for the tests (default: stage-one learner)")
    s.add_argument("--z-columns", default=None)
    s.add_argument("--test-method", choices=("signed_rank", "rank_sum"), default="signed_rank")
    s.add_argument("--marginal", action="store_true", help="drop z from the tests (randomized w)")
    s.add_argument("--null-design", choices=("permuted", "drop"), default="permuted",
                   help="null model inputs: z plus w shuffled within z strata (default) or z alone")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mediate)

    s = sub.add_parser("evaluate", parents=[common], help="run the MSE-vs-label-fraction protocol")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"pragmed: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"pragmed: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"pragmed: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
