"""Command-line interface: ``semtrial estimate | bootstrap | simulate``."""

import argparse
import csv
import io
import json
import math
import sys

from . import __version__
from ._backend import backend_name, set_threads
from .analysis import analyze
from .averaging import DEFAULT_FOLDS, DEFAULT_GRID_STEP
from .bootstrap import MIN_B, BootstrapError, bootstrap
from .data import METHODS, DataValidationError, load_csv
from .sem import SemFitError
from .simulate import ScenarioError, load_sweep, run_monte_carlo, summary_rows, \
    write_replicates_csv, write_summary_csv

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_CONFIG = 4


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _split(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _common(p, B_default):
    p.add_argument("--bootstrap-B", type=int, default=B_default, metavar="B",
                   help=f"bootstrap resamples (default {B_default})")
    p.add_argument("--folds", type=int, default=DEFAULT_FOLDS,
                   help=f"Super Learner folds V (default {DEFAULT_FOLDS})")
    p.add_argument("--grid-step", type=float, default=DEFAULT_GRID_STEP,
                   help=f"Super Learner weight grid step (default {DEFAULT_GRID_STEP})")
    p.add_argument("--alpha", type=float, default=0.05, help="1 - CI level (default 0.05)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--threads", type=int, default=0,
                   help="kernel threads (default 0: all available)")
    p.add_argument("--output", "-o", default="-", help="output file (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def _data_args(p):
    p.add_argument("--input", required=True, help="trial CSV with a header row")
    p.add_argument("--primary", required=True, help="primary endpoint column")
    p.add_argument("--arm", required=True, help="0/1 treatment column")
    p.add_argument("--secondaries", required=True, type=_split,
                   help="comma-separated secondary endpoint columns")
    p.add_argument("--kinds", type=_split, default=None,
                   help="comma-separated kinds, primary first: continuous, binary, "
                        "ordinal:K (default all continuous)")


def build_parser():
    parser = _Parser(prog="semtrial", description="Efficient treatment-effect estimation "
                     "for a primary endpoint using secondary endpoints.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="analyze one dataset with every estimator")
    _data_args(p)
    p.add_argument("--estimators", type=_split, default=list(METHODS),
                   help="comma-separated subset of " + ",".join(METHODS))
    _common(p, 1000)

    p = sub.add_parser("bootstrap", help="bootstrap inference for one estimator")
    _data_args(p)
    p.add_argument("--estimators", "--estimator", dest="estimators", type=_split,
                   default=["SL-MA"], help="one of " + ",".join(METHODS) + " (default SL-MA)")
    _common(p, 1000)

    p = sub.add_parser("simulate", help="run a Monte Carlo sweep from a JSON config")
    p.add_argument("--input", "--config", dest="input", required=True,
                   help="sweep configuration JSON")
    p.add_argument("--estimators", type=_split, default=None,
                   help="override the config's estimator list")
    p.add_argument("--replicates-output", default=None,
                   help="optional long-format per-replicate CSV")
    _common(p, None)
    for a in p._actions:
        if a.dest in ("bootstrap_B", "folds", "grid_step", "alpha", "seed"):
            a.default = None
            a.help = (a.help or "").split(" (default")[0] + " (default: from config)"
    return parser


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def _emit(text, path):
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    for r in rows:
        w.writerow([repr(r[k]) if isinstance(r[k], float) else ("" if r[k] is None else r[k])
                    for k in header])
    return buf.getvalue()


def _json_text(command, args, payload):
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "seed": args.seed,
           "backend": backend_name(), "version": __version__}
    doc.update(payload)
    return json.dumps(_clean(doc), indent=2) + "\n"


def _check_estimators(names, single=False):
    bad = [m for m in names if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown estimators {bad}; choose from {list(METHODS)}")
    if single and len(names) != 1:
        raise ConfigError("bootstrap takes exactly one estimator")


def _check_B(B, allow_zero):
    if B == 0 and allow_zero:
        return
    if B is not None and B < MIN_B:
        raise ConfigError(f"--bootstrap-B must be at least {MIN_B}"
                          + (" (or 0 to skip the bootstrap)" if allow_zero else ""))


def _config(args):
    keys = ("input", "primary", "arm", "secondaries", "kinds", "estimators", "bootstrap_B",
            "folds", "grid_step", "alpha", "seed")
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def cmd_estimate(args):
    _check_estimators(args.estimators)
    _check_B(args.bootstrap_B, allow_zero=True)
    ds = load_csv(args.input, args.primary, args.arm, args.secondaries, args.kinds)
    print(f"estimate: n={ds.n}, P={ds.P}, B={args.bootstrap_B}, backend={backend_name()}",
          file=sys.stderr)
    rep = analyze(ds, tuple(args.estimators), args.bootstrap_B, args.folds, args.grid_step,
                  args.alpha, args.seed)
    rows = []
    for r in rep.results:
        d = r.to_dict()
        d["ess"] = rep.ess.get(r.method) if r.estimand == "ATE" else None
        d["flags"] = ";".join(r.flags)
        d["seed"] = args.seed
        rows.append(d)
    if args.format == "json":
        for d in rows:
            d["flags"] = [f for f in d["flags"].split(";") if f]
            del d["seed"]
        text = _json_text("estimate", args, {"config": _config(args), "n": ds.n,
                                             "results": rows})
    else:
        header = ["method", "estimand", "estimate", "std_error", "ci_low", "ci_high",
                  "weight_on_sem", "ess", "flags", "seed"]
        text = _csv_text(header, rows)
    _emit(text, args.output)
    return EXIT_OK


def cmd_bootstrap(args):
    _check_estimators(args.estimators, single=True)
    _check_B(args.bootstrap_B, allow_zero=False)
    ds = load_csv(args.input, args.primary, args.arm, args.secondaries, args.kinds)
    est = args.estimators[0]
    print(f"bootstrap: {est}, n={ds.n}, B={args.bootstrap_B}", file=sys.stderr)
    res = bootstrap(ds, est, args.bootstrap_B, args.alpha, args.seed, V=args.folds,
                    grid_step=args.grid_step)
    d = {"method": est, "estimand": "ATE"}
    d.update(res.to_dict())
    d["seed"] = args.seed
    if res.unreliable:
        print(f"warning: {res.n_failed} of {res.B} resamples failed; result is unreliable",
              file=sys.stderr)
    if args.format == "json":
        del d["seed"]
        d["flags"] = ["unreliable"] if res.unreliable else []
        text = _json_text("bootstrap", args, {"config": _config(args), "result": d})
    else:
        d["flags"] = "unreliable" if res.unreliable else ""
        header = ["method", "estimand", "point", "se", "ci_low", "ci_high", "alpha", "B",
                  "n_failed", "unreliable", "wald", "flags", "seed"]
        text = _csv_text(header, [d])
    _emit(text, args.output)
    return EXIT_OK


def cmd_simulate(args):
    try:
        with open(args.input, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read sweep config: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("sweep config must be a JSON object")
    overrides = {"estimators": args.estimators, "bootstrap_B": args.bootstrap_B,
                 "folds": args.folds, "grid_step": args.grid_step, "alpha": args.alpha,
                 "seed": args.seed}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = load_sweep(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    args.seed = cfg.seed
    summaries = []
    cells = cfg.cells()
    for cell, sc in cells:
        if isinstance(sc, ScenarioError):
            print(f"warning: cell {cell} skipped: {sc}", file=sys.stderr)
            continue
        s = run_monte_carlo(sc, cfg.reps, cfg.estimators, cfg.bootstrap_B, cfg.seed, cell,
                            cfg.folds, cfg.grid_step, cfg.alpha)
        summaries.append(s)
        digest = " ".join(f"{r.method}:bias={r.bias:+.4f},rej={r.rejection:.3f}"
                          for r in s.rows)
        print(f"cell {cell} {sc.name}: {digest}", file=sys.stderr)
    if not summaries:
        print("error: every cell was infeasible", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.format == "json":
        rows = [d for s in summaries for d in summary_rows(s)]
        text = _json_text("simulate", args, {"config": _clean(dict(vars(cfg))), "rows": rows})
        _emit(text, args.output)
    elif args.output == "-":
        buf = io.StringIO()
        write_summary_csv(summaries, buf)
        sys.stdout.write(buf.getvalue())
    else:
        write_summary_csv(summaries, args.output)
    if args.replicates_output:
        write_replicates_csv(summaries, args.replicates_output)
    return EXIT_OK


_COMMANDS = {"estimate": cmd_estimate, "bootstrap": cmd_bootstrap, "simulate": cmd_simulate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        set_threads(args.threads)
        return _COMMANDS[args.command](args)
    except DataValidationError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SemFitError, BootstrapError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError) as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
