"""Command-line entry point: ``auctionlab {trial,experiment,analyze,version}``.

Exit codes: 0 success, 1 analysis failure, 2 usage or configuration
error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .exceptions import AuctionLabError, ConfigurationError, DomainError, RankDeficiencyError
from .experiment import DEFAULT_ARMS, ExperimentConfig, default_output_dir, read_dataset, run_experiment
from .trial import DEFAULT_MAX_EPISODES, TrialConfig, run_trial

EXIT_OK, EXIT_ANALYSIS, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

# single-trial defaults: the N=4, gamma=0.99 Boltzmann setup used for the
# first-price vs second-price example runs
TRIAL_DEFAULTS = dict(
    design="first", n_bidders=4, alpha=0.1, gamma=0.99, egreedy=False, asynchronous=True,
    feedback=True, num_actions=6, decay=0.9999, max_episodes=DEFAULT_MAX_EPISODES, seed=0,
    convergence="winning_bid",
)


class UsageError(Exception):
    pass


def _arms(name):
    return f"experiment arms: {DEFAULT_ARMS[name][0]} / {DEFAULT_ARMS[name][1]}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="auctionlab",
        description="Q-learning bidders in repeated first- and second-price auctions.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("trial", help="run one trial and write its episode log")
    t.add_argument("--config", help="JSON file with trial settings; explicit flags win")
    t.add_argument("--design", choices=["first", "second"],
                   help="payment rule (default first; experiment arms: second=0 / first=1)")
    t.add_argument("--n", dest="n_bidders", type=int, help=f"number of bidders (default 4; {_arms('N')})")
    t.add_argument("--alpha", type=float, help=f"learning rate (default 0.1; {_arms('alpha')})")
    t.add_argument("--gamma", type=float, help=f"discount factor (default 0.99; {_arms('gamma')})")
    g = t.add_mutually_exclusive_group()
    g.add_argument("--egreedy", dest="egreedy", action="store_const", const=True,
                   help="epsilon-greedy exploration (experiment arms: 0 / 1)")
    g.add_argument("--boltzmann", dest="egreedy", action="store_const", const=False,
                   help="Boltzmann exploration (default)")
    g = t.add_mutually_exclusive_group()
    g.add_argument("--async", dest="asynchronous", action="store_const", const=True,
                   help="update only the played bid (default; experiment arms: 0 / 1)")
    g.add_argument("--sync", dest="asynchronous", action="store_const", const=False,
                   help="update every bid from counterfactual rewards")
    g = t.add_mutually_exclusive_group()
    g.add_argument("--feedback", dest="feedback", action="store_const", const=True,
                   help="previous winning bid is the state (default; experiment arms: 0 / 1)")
    g.add_argument("--no-feedback", dest="feedback", action="store_const", const=False,
                   help="single stateless state")
    t.add_argument("--actions", dest="num_actions", type=int,
                   help=f"bid grid size (default 6; {_arms('num_actions')})")
    t.add_argument("--decay", type=float, help=f"exploration decay (default 0.9999; {_arms('decay')})")
    t.add_argument("--max-episodes", type=int, help=f"episode cap (default {DEFAULT_MAX_EPISODES})")
    t.add_argument("--seed", type=int, help="trial seed (default 0)")
    t.add_argument("--convergence", choices=["winning_bid", "policy"],
                   help="stability rule (default winning_bid)")
    t.add_argument("--out", help="output directory (default $AUCTIONLAB_OUTPUT_DIR or .)")
    t.add_argument("--log", help="episode log CSV path (default <out>/trial_log.csv)")
    t.add_argument("--thin", type=int, default=100,
                   help="keep every k-th episode plus the last 1000 in the log (default 100; 1 keeps all)")
    t.add_argument("--record-bids", action="store_true", help="add per-bidder bids to the log")
    t.add_argument("--dump-q", action="store_true", help="write each bidder's final Q-table CSV")

    e = sub.add_parser("experiment", help="run a randomized experiment and write the dataset")
    e.add_argument("--config", help="JSON file with experiment settings; explicit flags win")
    e.add_argument("--trials", type=int, help="number of trials (default 427)")
    e.add_argument("--seed", type=int, help="master seed (default 0)")
    e.add_argument("--max-episodes", type=int, help=f"episode cap per trial (default {DEFAULT_MAX_EPISODES})")
    e.add_argument("--out", help="dataset CSV path (default <$AUCTIONLAB_OUTPUT_DIR>/dataset.csv)")
    e.add_argument("--parallel", type=int, help="worker processes (default 1)")
    e.add_argument("--convergence", choices=["winning_bid", "policy"],
                   help="stability rule (default winning_bid)")
    e.epilog = "Covariate arms: " + "; ".join(f"{k} in {list(v)}" for k, v in DEFAULT_ARMS.items())

    a = sub.add_parser("analyze", help="summary, regression, CATE and boxplot tables")
    a.add_argument("--in", dest="input", required=True, help="dataset CSV written by 'experiment'")
    a.add_argument("--out", help="output directory (default $AUCTIONLAB_OUTPUT_DIR or .)")
    a.add_argument("--tables", action="store_true", help="summary statistics and regressions")
    a.add_argument("--boxplots", action="store_true", help="per-design quantiles of each outcome")
    a.add_argument("--cate", action="store_true", help="interacted treatment-effect table")
    a.add_argument("--classical", action="store_true", help="classical instead of HC1 standard errors")

    sub.add_parser("version", help="print the package version")
    return parser


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc


def _outdir(arg) -> Path:
    return Path(arg if arg else default_output_dir())


def _ensure_writable_dir(d: Path) -> None:
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {d}: {exc}") from exc
    if not os.access(d, os.W_OK):
        raise OSError(f"output directory {d} is not writable")


def _print_config(cfg: dict) -> None:
    print(json.dumps(cfg, indent=2, sort_keys=True), flush=True)


def cmd_trial(args) -> int:
    settings = dict(TRIAL_DEFAULTS)
    if args.config:
        raw = _load_json(args.config)
        unknown = set(raw) - set(TRIAL_DEFAULTS)
        if unknown:
            raise UsageError(f"unknown keys in {args.config}: {sorted(unknown)}")
        settings.update(raw)
    for key in TRIAL_DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    design = settings.pop("design")
    settings["design"] = {"first": 1, "second": 0}.get(design, design)
    config = TrialConfig(**settings)

    out = _outdir(args.out)
    _ensure_writable_dir(out)
    log_path = Path(args.log) if args.log else out / "trial_log.csv"
    _print_config({**config.to_dict(), "log": str(log_path), "thin": args.thin})

    from .stats import bid_series

    result = run_trial(config, record_bids=args.record_bids)
    try:
        result.log.to_csv(log_path, every=args.thin)
        bid_series(result.log.winning_bid).to_csv(out / "trial_avg_bids.csv", index=False)
        with open(out / "trial_outcomes.json", "w") as fh:
            json.dump({**result.outcomes.__dict__, "config": config.to_dict()}, fh, indent=2)
        if args.dump_q:
            for i, q in enumerate(result.q_tables):
                q.to_csv(out / f"qtable_bidder{i}.csv")
    except OSError as exc:
        raise OSError(f"cannot write trial outputs: {exc}") from exc
    o = result.outcomes
    print(f"bid2val={o.bid2val:.4f} vol={o.vol:.4f} episodes={o.episodes} converged={o.converged} "
          f"final_winning_bid={result.log.winning_bid[-1]:.4f}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    overrides = dict(num_trials=args.trials, master_seed=args.seed, max_episodes=args.max_episodes,
                     n_jobs=args.parallel, convergence=args.convergence)
    if args.config:
        raw = _load_json(args.config)
        try:
            config = ExperimentConfig.from_json(args.config, **overrides)
        except TypeError as exc:
            raise UsageError(str(exc)) from exc
        if args.out is None and raw.get("output"):
            args.out = raw["output"]
    else:
        config = ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})
    out = Path(args.out) if args.out else _outdir(None) / "dataset.csv"
    config.output = str(out)

    _ensure_writable_dir(out.parent)
    if out.exists() and not os.access(out, os.W_OK):
        raise OSError(f"dataset path {out} is not writable")
    _print_config(config.to_dict())

    def progress(done, total, elapsed):
        eta = elapsed / done * (total - done)
        print(f"[{done}/{total}] elapsed {elapsed:7.1f}s  eta {eta:7.1f}s", file=sys.stderr, flush=True)

    ds = run_experiment(config, progress=progress)
    failed = sum(not r.ok for r in ds.records)
    print(f"wrote {len(ds)} trials to {out} ({failed} failed)")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from . import stats

    want_all = not (args.tables or args.boxplots or args.cate)
    try:
        ds = read_dataset(args.input)
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    df = ds.to_frame()
    dropped = len(ds) - len(df)
    out = _outdir(args.out)
    _ensure_writable_dir(out)
    robust = not args.classical
    _print_config({"input": args.input, "out": str(out), "robust": robust,
                   "tables": args.tables or want_all, "boxplots": args.boxplots or want_all,
                   "cate": args.cate or want_all, "excluded_failed_trials": dropped})

    if args.tables or want_all:
        summary = stats.summarize(df)
        summary.to_csv(out / "summary.csv")
        text = stats.render_summary(summary)
        (out / "summary.txt").write_text(text + "\n")
        print(text)
        for outcome, pair in stats.run_paper_regressions(df, robust=robust).items():
            stats.regression_frame(pair).to_csv(out / f"regression_{outcome}.csv")
            text = stats.render_regressions(pair)
            (out / f"regression_{outcome}.txt").write_text(text + "\n")
            print("\n" + text)
    if args.boxplots or want_all:
        stats.boxplot_table(df).to_csv(out / "boxplots.csv", index=False)
    if args.cate or want_all:
        res = stats.interacted_cate(df)
        res.table.to_csv(out / "cate.csv")
        text = stats.render_cate(res)
        (out / "cate.txt").write_text(text + "\n")
        print("\n" + text)
    return EXIT_OK


COMMANDS = {"trial": cmd_trial, "experiment": cmd_experiment, "analyze": cmd_analyze}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "version":
        print(f"auctionlab {__version__}")
        return EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except RankDeficiencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AuctionLabError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
