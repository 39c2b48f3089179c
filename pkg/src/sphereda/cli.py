"""Command-line entry point: generate, train, eval, sweep, report.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import ScenarioConfig, generate_scenario, save_scenario
from .errors import InvalidConfig, SpheredaError
from .experiment import (
    ABLATIONS,
    SWEEP_AXES,
    SWEEP_COLUMNS,
    RunConfig,
    default_output_root,
    eval_from_dir,
    run_sweep,
    train_to_dir,
    write_json,
)
from .metrics import reports_to_csv

log = logging.getLogger("sphereda")


def positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def build_parser():
    p = argparse.ArgumentParser(prog="sphereda", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic multi-domain scenario")
    g.add_argument("--config", help="run config JSON; its 'scenario' section seeds the defaults")
    g.add_argument("--sources", type=positive_int)
    g.add_argument("--known", type=positive_int)
    g.add_argument("--unknown", type=nonneg_int, help="target-private classes")
    g.add_argument("--source-private", type=nonneg_int)
    g.add_argument("--samples", type=positive_int, help="samples per class per domain")
    g.add_argument("--dim", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")

    def run_options(sp):
        sp.add_argument("--config", help="run config JSON")
        sp.add_argument("--data", help="dataset directory (data.csv + metadata.json)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--alpha-m", type=float)
        sp.add_argument("--tau", type=float)
        sp.add_argument("--iters", type=positive_int, help="total iterations")
        sp.add_argument("--source-only-iters", type=nonneg_int)
        sp.add_argument("--breakpoint-period", type=positive_int)
        sp.add_argument("--mode", choices=["open-set", "closed-set", "universal"])
        for name in ABLATIONS:
            sp.add_argument("--" + name.replace("_", "-"), action="store_true", default=None)

    t = sub.add_parser("train", help="train one model and write checkpoint + log")
    run_options(t)

    e = sub.add_parser("eval", help="evaluate a trained run directory")
    e.add_argument("run", help="run directory produced by 'train'")
    e.add_argument("--mode", choices=["open-set", "closed-set", "universal"])
    e.add_argument("--dump-embeddings", action="store_true")
    e.add_argument("--out", help="write reports here instead of the run directory")

    s = sub.add_parser("sweep", help="seeds x axis-values grid, aggregated to sweep.csv")
    run_options(s)
    s.add_argument("--axis", choices=SWEEP_AXES)
    s.add_argument("--values", type=float, nargs="+")
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--parallel", type=positive_int, default=1)

    r = sub.add_parser("report", help="tabulate report.json files of finished runs")
    r.add_argument("runs", nargs="+", help="run directories or report.json paths")
    r.add_argument("--csv", help="also write the table to this file")
    return p


def merged_config(args) -> RunConfig:
    """Config file first, then command-line overrides."""
    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{args.config}: invalid JSON ({exc})") from None
    run = RunConfig.from_dict(base)
    train = dict(run.train)
    for flag, key in (("alpha_m", "alpha_m"), ("tau", "tau"), ("iters", "total_iters"),
                      ("source_only_iters", "source_only_iters"),
                      ("breakpoint_period", "breakpoint_period")):
        value = getattr(args, flag, None)
        if value is not None:
            train[key] = value
    run.train = train
    if getattr(args, "data", None):
        run.data = args.data
    if getattr(args, "mode", None):
        run.mode = args.mode
    for name in ABLATIONS:
        if getattr(args, name, None):
            run.ablations = dict(run.ablations, **{name: True})
    if getattr(args, "seed", None) is not None:
        run.seeds = [args.seed]
    if getattr(args, "seeds", None):
        run.seeds = list(args.seeds)
    if getattr(args, "out", None):
        run.output = args.out
    return run.validate()


def cmd_generate(args):
    d = {}
    if args.config:
        d = dict(RunConfig.load(args.config).scenario)
    for flag, key in (("sources", "num_sources"), ("known", "known_classes"), ("unknown", "target_private"),
                      ("source_private", "source_private"), ("samples", "samples_per_class"),
                      ("dim", "dim"), ("seed", "seed")):
        value = getattr(args, flag)
        if value is not None:
            d[key] = value
    if "style_scale" in d:
        d["style_scale"] = tuple(d["style_scale"])
    scenario = generate_scenario(ScenarioConfig(**d))
    out = Path(args.out) if args.out else default_output_root() / "scenario"
    save_scenario(out, scenario)
    print(f"wrote {out / 'data.csv'} (openness {scenario.metadata['openness']:.3f})")


def cmd_train(args):
    run = merged_config(args)
    seed = run.seeds[0]
    out = Path(run.output) if run.output else default_output_root() / f"train-seed{seed}"
    state, _, kind = train_to_dir(run, seed, out)
    bps = [r for r in state.log if r["event"] == "breakpoint"]
    print(f"trained {kind} model for {state.iteration} iterations, {len(bps)} break-points -> {out}")


def cmd_eval(args):
    report = eval_from_dir(args.run, args.mode, args.dump_embeddings, args.out)
    print(json.dumps(report.percent(), sort_keys=True))


def cmd_sweep(args):
    run = merged_config(args)
    out = Path(run.output) if run.output else default_output_root() / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    axis = args.axis
    if axis is None and len(run.sweep) == 1:
        axis = next(iter(run.sweep))
    values = args.values
    if values is not None and axis == "target_private":
        values = [int(v) for v in values]
    write_json(out / "config.json", dict(run.to_dict(), axis=axis, values=values))
    rows = run_sweep(run, out, axis, values, args.parallel)
    (out / "sweep.csv").write_text(reports_to_csv(rows, SWEEP_COLUMNS))
    print(f"{len(rows)} rows -> {out / 'sweep.csv'}")


def cmd_report(args):
    rows = []
    for item in args.runs:
        path = Path(item)
        if path.is_dir():
            path = path / "report.json"
        d = json.loads(path.read_text())
        row = {"run": str(path.parent), "mode": d["mode"]}
        row.update(d["percent"])
        rows.append(row)
    columns = ["run", "mode", "os_star", "unk", "os", "hos", "auroc"]
    text = reports_to_csv(rows, columns)
    if args.csv:
        Path(args.csv).write_text(text)
    sys.stdout.write(text)


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except InvalidConfig as exc:
        print(f"sphereda: config error: {exc}", file=sys.stderr)
        return 2
    except (SpheredaError, OSError, KeyError, ValueError) as exc:
        print(f"sphereda: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
