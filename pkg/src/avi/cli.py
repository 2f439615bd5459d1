"""Command line entry point: ``avi fit|sweep|summarize|classify|verify|synth``.

Exit codes: 0 success, 1 a run or check failed (or data could not be
loaded), 2 usage or configuration error.

Every sweep option can also come from a ``key = value`` file passed with
``--config`` (``#`` starts a comment, keys use the long flag names with
underscores).  Flags given on the command line win over the file.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from . import data as data_mod
from .core import Schedule
from .errors import AviError, ConfigError, DataError
from .harness import (ExperimentConfig, default_decay, derive_seed, fit_model, load_dataset,
                      read_summary, run_experiment, save_fit, summarize, summary_table, synthesize,
                      classify_eval, train_class_models)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

SWEEP_KEYS = {
    "model": str, "data": str, "synth": str, "k": str, "regimes": str, "restarts": int,
    "seed": int, "schedule": str, "temperature_scale": float, "cutoff": int,
    "max_iter": int, "tol": float, "out": str, "workers": int, "timing": bool,
}


def parse_kv(text, source="<string>"):
    """``a=1,b=2`` or one ``key = value`` per line into a dict of strings."""
    out = {}
    items = text.splitlines() if "\n" in text else text.split(",")
    for lineno, raw in enumerate(items, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = value.strip("\"'")
    return out


def _number(text):
    try:
        return int(text)
    except ValueError:
        return float(text)


def _coerce(key, value):
    kind = SWEEP_KEYS.get(key)
    if kind is None:
        raise ConfigError(f"unknown config key {key!r}")
    if isinstance(value, str) and kind is bool:
        return value.lower() in ("1", "true", "yes", "on")
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def _int_list(text):
    try:
        return [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"expected a comma separated list of integers, got {text!r}") from None


def _merged(args):
    """Config file values overlaid by explicit flags."""
    opts = {}
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        opts.update({k: _coerce(k, v) for k, v in parse_kv(text, args.config).items()})
    for key in SWEEP_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            opts[key] = value
    if "model" not in opts:
        raise ConfigError("--model is required")
    return opts


def _synth_spec(text):
    return {k: _number(v) for k, v in parse_kv(text).items()} if text else None


def build_config(opts):
    return ExperimentConfig(
        model=opts["model"],
        k_grid=_int_list(opts.get("k", "")),
        regimes=[r for r in str(opts.get("regimes", "vi,det,stoch")).split(",") if r],
        data=opts.get("data"),
        synth=_synth_spec(opts.get("synth")),
        restarts=int(opts.get("restarts", 1)),
        seed=int(opts.get("seed", 0)),
        decay=opts.get("schedule"),
        temperature_scale=float(opts.get("temperature_scale", 5.0)),
        cutoff=int(opts.get("cutoff", 100)),
        max_iter=int(opts.get("max_iter", 200)),
        tol=float(opts.get("tol", 1e-6)),
        out=opts.get("out"),
        workers=int(opts.get("workers", 1)),
        timing=bool(opts.get("timing", False)),
    )


# ---------------------------------------------------------------- commands

def cmd_fit(args):
    opts = _merged(args)
    config = build_config(opts)
    if len(config.k_grid) != 1 or len(config.regimes) != 1:
        raise ConfigError("fit takes a single --k and a single regime")
    K, regime = config.k_grid[0], config.regimes[0]
    dataset = load_dataset(config.model, config.data, config.synth)
    seed = derive_seed(config.seed, 0, K)
    res = fit_model(config.model, dataset, K, config.schedule(regime), config.max_iter, seed, config.tol)
    if config.out:
        save_fit(config.out, res, model=config.model)
    print(f"model={config.model} K={K} regime={regime} seed={seed} iters={res.iterations} "
          f"converged={res.converged} final_elbo={res.final_elbo!r}")
    return EXIT_OK


def cmd_sweep(args):
    config = build_config(_merged(args))
    if not config.out:
        raise ConfigError("sweep needs --out")
    records, n_failed = run_experiment(config)
    print(summary_table(summarize(records)), end="")
    if n_failed:
        print(f"{n_failed} of {len(records)} runs failed", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_summarize(args):
    table = summary_table(summarize(read_summary(args.summary)))
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    else:
        print(table, end="")
    return EXIT_OK


def cmd_classify(args):
    ks = _int_list(args.k)
    regimes = args.regimes.split(",") if args.regimes else None
    if args.train:
        train = data_mod.load_points(args.train, labeled=True)
        for K in ks:
            train_class_models(train, K, regimes or ["vi", "det", "stoch"], args.models, seed=args.seed,
                               schedule_kw={"decay": args.schedule or default_decay("gmm")},
                               max_iter=args.max_iter)
    test = data_mod.load_points(args.data, labeled=True)
    print("K,regime,accuracy")
    for K in ks:
        for regime, acc in classify_eval(args.models, test, K, regimes).items():
            print(f"{K},{regime},{acc!r}")
    return EXIT_OK


def cmd_verify(args):
    from .verify import SUITES, run_suite
    names = list(SUITES) if args.suite == ["all"] else args.suite
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ConfigError(f"unknown suite {unknown[0]!r}; expected one of {', '.join(SUITES)} or all")
    ok = True
    for name in names:
        for report in run_suite(name):
            print(report.line())
            ok &= report.passed
    return EXIT_OK if ok else EXIT_FAIL


def cmd_synth(args):
    params = _synth_spec(args.params) or {}
    params.setdefault("seed", args.seed)
    dataset, truth = synthesize(args.model, **params)
    out = Path(args.out)
    if args.model == "gmm":
        data_mod.write_points(dataset, out)
    elif args.model == "hmm":
        data_mod.write_sequences(dataset, out)
    else:
        data_mod.write_bow(dataset, out)
    if args.truth:
        doc = {k: [v.tolist() for v in val] if isinstance(val, list) else val.tolist()
               for k, val in truth.items()}
        Path(args.truth).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_run_options(p, single=False):
    p.add_argument("--config", help="key=value file; flags override it")
    p.add_argument("--model", choices=["gmm", "hmm", "lda"])
    p.add_argument("--data", help="data file (CSV points, sequences or bag of words)")
    p.add_argument("--synth", help="synthetic data spec instead of --data, e.g. K=6,d=2,N=2000,separation=1.5,seed=3")
    p.add_argument("--k", help="number of components" + ("" if single else " (comma separated grid)"))
    p.add_argument("--regimes", help="vi, det, stoch" + ("" if single else " (comma separated subset)"))
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--schedule", help="rho decay: exp:BASE or linear:C:HORIZON (default exp:0.9, linear:0.25:50 for hmm)")
    p.add_argument("--temperature-scale", dest="temperature_scale", type=float,
                   help="T_t = scale / (1 - rho_t) for det (default 5)")
    p.add_argument("--cutoff", type=int, help="iteration after which annealing stops (default 100)")
    p.add_argument("--max-iter", dest="max_iter", type=int, help="iteration budget (default 200)")
    p.add_argument("--tol", type=float, help="relative convergence tolerance (default 1e-6)")
    p.add_argument("--out", help="output path" if single else "output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="avi", description="Annealed variational inference for GMM, HMM and LDA.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one model and print the final objective")
    _add_run_options(p, single=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep", help="restarts x K grid x regimes; writes summary.csv and traces.json")
    _add_run_options(p)
    p.add_argument("--restarts", type=int, help="restarts per (K, regime) (default 1)")
    p.add_argument("--workers", type=int, help="worker processes (default 1)")
    p.add_argument("--timing", action="store_const", const=True,
                   help="write measured wall_ms instead of 0 (outputs are then not reproducible)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("summarize", help="median and quartiles per (K, regime) from summary.csv")
    p.add_argument("summary")
    p.add_argument("--out", help="write the table here instead of stdout")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("classify", help="per-class GMM classifier accuracy")
    p.add_argument("--models", required=True, help="directory with class_<label>/gmm_K<K>_<regime>.json")
    p.add_argument("--data", required=True, help="labelled test CSV (label in the last column)")
    p.add_argument("--k", required=True, help="components per class model (comma separated)")
    p.add_argument("--regimes", help="comma separated subset (default: every regime found)")
    p.add_argument("--train", help="labelled training CSV; fits the class models first")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--schedule")
    p.add_argument("--max-iter", dest="max_iter", type=int, default=200)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("verify", help="run oracle and property suites")
    p.add_argument("suite", nargs="+",
                   help="fb-enum, mc-elbo, monotone, reductions, recovery, kernels or all")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synth", help="write a synthetic data set")
    p.add_argument("--model", required=True, choices=["gmm", "hmm", "lda"])
    p.add_argument("--params", help="generator parameters, e.g. K=3,V=8,N=100,c=50")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="also write the ground truth as JSON")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"avi: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, AviError) as exc:
        print(f"avi: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
