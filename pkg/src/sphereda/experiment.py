"""Run configuration and one-shot orchestration shared by the CLI and the acceptance suite."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .baseline import DEFAULT_PERCENTILE, ce_baseline_train, ce_evaluate, max_softmax
from .data import ScenarioConfig, generate_scenario, load_scenario, save_scenario
from .errors import InvalidConfig
from .metrics import MODES, build_report, embedding_dump, evaluate_embeddings, map_true_labels
from .sphere import classify_many
from .train import TrainConfig, embed, read_checkpoint, run_training, save_checkpoint, source_threshold

OUTPUT_ENV = "SPHEREDA_OUTPUT"
ABLATIONS = ("no_style_transfer", "no_source_balance", "no_self_training", "oracle_style_pool",
             "two_view_aug", "ce_baseline")
SWEEP_AXES = ("alpha_m", "tau", "target_private")


def default_output_root():
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


@dataclass
class RunConfig:
    scenario: dict = field(default_factory=dict)   # ScenarioConfig fields
    data: str | None = None                        # dataset directory; overrides ``scenario``
    train: dict = field(default_factory=dict)      # TrainConfig fields
    mode: str = "open-set"
    ablations: dict = field(default_factory=dict)
    ce_percentile: float = DEFAULT_PERCENTILE
    sweep: dict = field(default_factory=dict)      # axis name -> list of values
    seeds: list = field(default_factory=lambda: [0])
    output: str | None = None

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown config sections: {sorted(unknown)}")
        return cls(**d).validate()

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{path}: invalid JSON ({exc})") from None

    def validate(self):
        if not self.seeds:
            raise InvalidConfig("at least one seed is required")
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}")
        bad = set(self.ablations) - set(ABLATIONS)
        if bad:
            raise InvalidConfig(f"unknown ablations: {sorted(bad)}")
        bad = set(self.sweep) - set(SWEEP_AXES)
        if bad:
            raise InvalidConfig(f"unknown sweep axes: {sorted(bad)}")
        self.train_config(self.seeds[0]).validate()
        return self

    def to_dict(self):
        return asdict(self)

    def flag(self, name):
        return bool(self.ablations.get(name, False))

    def train_config(self, seed) -> TrainConfig:
        d = dict(self.train)
        d["seed"] = seed
        if self.flag("no_style_transfer"):
            d["style_transfer"] = False
        if self.flag("no_source_balance"):
            d["source_balance"] = False
        if self.flag("no_self_training"):
            d["self_training"] = False
        if self.flag("two_view_aug"):
            d["two_view_aug"] = True
        return TrainConfig.from_dict(d)

    def scenario_config(self, seed) -> ScenarioConfig:
        d = dict(self.scenario)
        d.setdefault("seed", seed)
        if "style_scale" in d:
            d["style_scale"] = tuple(d["style_scale"])
        known = {f.name for f in fields(ScenarioConfig)}
        bad = set(d) - known
        if bad:
            raise InvalidConfig(f"unknown scenario options: {sorted(bad)}")
        return ScenarioConfig(**d)

    def load_or_generate(self, seed):
        if self.data:
            return load_scenario(self.data)
        return generate_scenario(self.scenario_config(seed))


def _style_pool(run: RunConfig, scenario):
    if not run.flag("oracle_style_pool"):
        return None
    t = scenario.target
    return t.features[map_true_labels(t.labels, scenario.num_source_classes) >= 0]


def train_run(run: RunConfig, seed, scenario=None):
    """Train one model; returns ``(state, scenario, kind)`` with kind "supclr" or "ce"."""
    scenario = scenario or run.load_or_generate(seed)
    cfg = run.train_config(seed)
    pool = _style_pool(run, scenario)
    target = scenario.target.hide_labels()
    if run.flag("ce_baseline"):
        return ce_baseline_train(scenario.sources, target, cfg, run.ce_percentile, style_pool=pool), scenario, "ce"
    return run_training(scenario.sources, target, cfg, style_pool=pool), scenario, "supclr"


def evaluate_run(params, kind, scenario, mode="open-set", ce_percentile=DEFAULT_PERCENTILE, threshold=None):
    """MetricsReport for a trained model on the scenario's target."""
    if kind == "ce":
        return ce_evaluate(params, scenario.sources, scenario.target, ce_percentile, mode, threshold)
    num_known = scenario.num_source_classes
    protos, th = source_threshold(params, scenario.sources)
    z = embed(params, scenario.target.features)
    records = evaluate_embeddings(z, map_true_labels(scenario.target.labels, num_known), protos, th.alpha)
    return build_report(records, num_known, mode,
                        extra={"alpha": th.alpha, "theta": th.theta, "phi": th.phi})


def dump_embeddings(params, kind, scenario, ce_threshold=0.0):
    """Embedding CSV rows for every source and target sample."""
    rows = []
    num_known = scenario.num_source_classes
    if kind == "supclr":
        protos, th = source_threshold(params, scenario.sources)
    for split, datasets in (("source", scenario.sources), ("target", [scenario.target])):
        for ds in datasets:
            z = embed(params, ds.features)
            truth = map_true_labels(ds.labels, num_known)
            if kind == "supclr":
                pred, score, _ = classify_many(z, protos, th.alpha)
            else:
                pred, conf = max_softmax(params, ds.features)
                pred = np.where(conf < ce_threshold, -1, pred)
                score = 1.0 - conf
            rows.extend((split, d, t, p, s, v) for d, t, p, s, v in zip(ds.domains, truth, pred, score, z))
    return embedding_dump(rows)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_jsonl(path, records):
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def train_to_dir(run: RunConfig, seed, out_dir):
    """Train and persist: config.json, train_log.jsonl, checkpoint.ckpt (+ scenario/ if generated)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenario = run.load_or_generate(seed)
    if not run.data:
        save_scenario(out / "scenario", scenario)
    state, scenario, kind = train_run(run, seed, scenario)
    effective = run.to_dict()
    effective.pop("output")   # location only; keeps outputs byte-identical across directories
    effective["seed"] = seed
    effective["effective_train"] = run.train_config(seed).to_dict()
    # relative paths are resolved against the run directory
    effective["data_dir"] = str(Path(run.data).resolve()) if run.data else "scenario"
    write_json(out / "config.json", effective)
    write_jsonl(out / "train_log.jsonl", state.log)
    extra = {"kind": kind}
    if kind == "ce":
        from .baseline import calibrate
        extra["threshold"] = calibrate(state.params, scenario.sources, run.ce_percentile)
    save_checkpoint(state, out / "checkpoint.ckpt", config=effective, extra=extra)
    return state, scenario, kind


def eval_from_dir(run_dir, mode=None, dump=False, out_dir=None):
    """Evaluate a trained run directory; writes report.json (+ embeddings.csv)."""
    run_dir = Path(run_dir)
    state, header = read_checkpoint(run_dir / "checkpoint.ckpt")
    cfg = header["config"]
    scenario = load_scenario(run_dir / cfg["data_dir"])
    kind = header["extra"]["kind"]
    mode = mode or cfg.get("mode", "open-set")
    threshold = header["extra"].get("threshold")
    report = evaluate_run(state.params, kind, scenario, mode, cfg.get("ce_percentile", DEFAULT_PERCENTILE),
                          threshold)
    out = Path(out_dir) if out_dir else run_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    if dump:
        (out / "embeddings.csv").write_text(dump_embeddings(state.params, kind, scenario, threshold or 0.0))
    return report


def summary_row(report, **keys):
    row = dict(keys)
    row.update({"os_star": report.os_star, "unk": report.unk, "os": report.os, "hos": report.hos,
                "auroc": report.auroc, "alpha": report.extra.get("alpha")})
    return row


def _sweep_job(args):
    run_dict, axis, value, seed, out_dir = args
    run = RunConfig.from_dict(run_dict)
    if axis == "target_private":
        run.scenario = dict(run.scenario, target_private=int(value))
        run.data = None
    elif axis is not None:
        run.train = dict(run.train, **{axis: value})
    sub = Path(out_dir) / (f"{axis}={value}" if axis else "base") / f"seed={seed}"
    state, scenario, kind = train_to_dir(run, seed, sub)
    report = eval_from_dir(sub, run.mode)
    extra = {"openness": scenario.metadata.get("openness")}
    return summary_row(report, axis=axis or "", value=value, seed=seed, **extra)


SWEEP_COLUMNS = ["axis", "value", "seed", "openness", "os_star", "unk", "os", "hos", "hos_std", "auroc", "alpha"]


def run_sweep(run: RunConfig, out_dir, axis=None, values=None, parallel=1):
    """One run per (axis value, seed) plus a mean row per value; returns the rows."""
    if axis is not None and axis not in SWEEP_AXES:
        raise InvalidConfig(f"sweep axis must be one of {SWEEP_AXES}")
    if axis is not None and values is None:
        values = run.sweep.get(axis)
        if not values:
            raise InvalidConfig(f"no values for sweep axis {axis!r}")
    values = values if axis is not None else [None]
    jobs = [(run.to_dict(), axis, v, s, str(out_dir)) for v in values for s in run.seeds]
    if parallel > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(parallel) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    rows = []
    for v in values:
        group = [r for r in results if r["value"] == v]
        rows.extend(group)
        mean = {"axis": axis or "", "value": v, "seed": "mean", "openness": group[0]["openness"]}
        for key in ("os_star", "unk", "os", "hos", "auroc", "alpha"):
            vals = [r[key] for r in group if r[key] is not None]
            mean[key] = float(np.mean(vals)) if vals else None
        mean["hos_std"] = float(np.std([r["hos"] for r in group if r["hos"] is not None])) \
            if any(r["hos"] is not None for r in group) else None
        rows.append(mean)
    return rows
