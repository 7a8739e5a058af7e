"""Command-line pipeline: synth, split, train, eval, export-dag, sweep.

Every command reads one JSON experiment config (``--config``); ``--seed`` and
``--out`` override the corresponding config keys.  Artifacts land in the
output directory under fixed names so later commands find earlier outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import dag as dagmod
from .dag import DagHyper
from .data import load_encoded, load_raw, save_encoded
from .errors import DataError, NumericalError
from .metrics import EvalConfig, evaluate, metrics_csv
from .splits import SplitSpec, load_split, make_split, ratio_sweep, save_split
from .synthetic import SyntheticSpec, synth_generate, validate_graph
from .trainer import PRESETS, TrainConfig, load_model, preset, save_model, train

DATASET_FILE = "dataset.json"
TRUTH_FILE = "truth_edges.csv"
SPLIT_FILE = "split.json"


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    synthetic: dict | None = None
    raw: dict | None = None             # {"users", "items", "interactions", "schema"}
    dataset: str | None = None          # encoded dataset path; default <out>/dataset.json
    split: dict = field(default_factory=dict)
    dag_hyper: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    variants: list[str] = field(default_factory=lambda: ["causpref"])
    seeds: list[int] = field(default_factory=lambda: [0])
    sweep_ratios: list[list[float]] = field(default_factory=list)
    setting: str | None = None
    out: str = "out"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(**d)
        bad = [v for v in cfg.variants if v not in PRESETS]
        if bad:
            raise UsageError(f"unknown variants {bad}; expected some of {sorted(PRESETS)}")
        if not cfg.seeds:
            raise UsageError("seeds must list at least one seed")
        # validate nested sections early
        for build, section in ((DagHyper, cfg.dag_hyper), (EvalConfig, cfg.eval)):
            try:
                build(**section)
            except TypeError as e:
                raise UsageError(f"bad {build.__name__} section: {e}") from None
        try:
            SplitSpec.from_dict({**cfg.split, "seed": 0})
            TrainConfig.from_dict({**cfg.train, "seed": 0})
        except DataError as e:
            raise UsageError(str(e)) from None
        return cfg

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    # ---------------------------------------------------------------- builders
    def split_spec(self, seed: int) -> SplitSpec:
        return SplitSpec.from_dict({**self.split, "seed": seed})

    def hyper(self) -> DagHyper:
        return DagHyper(**self.dag_hyper)

    def train_config(self, variant: str, seed: int) -> TrainConfig:
        unknown = set(self.train) - {f.name for f in fields(TrainConfig)}
        if unknown:
            raise UsageError(f"unknown train keys {sorted(unknown)}")
        return preset(variant, **{**self.train, "seed": seed})

    def eval_config(self) -> EvalConfig:
        return EvalConfig(**self.eval)


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        return ExperimentConfig.from_dict(json.loads(p.read_text()))
    except json.JSONDecodeError as e:
        raise UsageError(f"config {p} is not valid JSON: {e}") from None


def _need(path: Path) -> Path:
    if not path.exists():
        raise DataError(f"missing upstream file: {path}")
    return path


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _echo(out: Path, cmd: str, cfg: ExperimentConfig, seed: int) -> None:
    resolved = {"command": cmd, "seed": seed, "config": cfg.to_dict()}
    _write(out / f"{cmd}.resolved.json", json.dumps(resolved, indent=2, sort_keys=True) + "\n")


def _dataset(cfg: ExperimentConfig, out: Path):
    return load_encoded(_need(Path(cfg.dataset) if cfg.dataset else out / DATASET_FILE))


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: ExperimentConfig, out: Path, seed: int) -> None:
    if cfg.raw:
        r = cfg.raw
        schema = r["schema"]
        if isinstance(schema, str):
            schema = json.loads(_need(Path(schema)).read_text())
        ds = load_raw(_need(Path(r["users"])), _need(Path(r["items"])),
                      _need(Path(r["interactions"])), schema, fit_region=r.get("fit_region"))
        save_encoded(ds, out / DATASET_FILE)
        return
    spec = SyntheticSpec(**{**(cfg.synthetic or {}), "seed": seed})
    ds, truth = synth_generate(spec)
    problems = validate_graph(truth.adjacency, truth.q_u)
    if problems:
        raise DataError(f"generated graph invalid: {problems}")
    out.mkdir(parents=True, exist_ok=True)
    save_encoded(ds, out / DATASET_FILE)
    names = ds.feature_names()
    rows = ["source,target,weight"] + [f"{names[k]},{names[d]},{truth.weights[k, d]!r}"
                                       for k, d in truth.edges()]
    _write(out / TRUTH_FILE, "\n".join(rows) + "\n")
    _write(out / "truth_adjacency.json", json.dumps(truth.adjacency.astype(int).tolist()) + "\n")


def cmd_split(cfg: ExperimentConfig, out: Path, seed: int) -> None:
    ds = _dataset(cfg, out)
    save_split(make_split(ds, cfg.split_spec(seed)), out / SPLIT_FILE)


def cmd_train(cfg: ExperimentConfig, out: Path, seed: int) -> None:
    ds = _dataset(cfg, out)
    split = load_split(_need(out / SPLIT_FILE))
    for variant in cfg.variants:
        model, history = train(ds, split, cfg.hyper(), cfg.train_config(variant, seed))
        save_model(model, out / f"model_{variant}.json")
        _write(out / f"trainlog_{variant}.csv", history.to_csv())


def _setting(cfg: ExperimentConfig, split) -> str:
    return cfg.setting or split.spec.kind


def cmd_eval(cfg: ExperimentConfig, out: Path, seed: int) -> None:
    ds = _dataset(cfg, out)
    split = load_split(_need(out / SPLIT_FILE))
    ecfg = cfg.eval_config()
    test = ds.interactions[split.test]
    rows = []
    for variant in cfg.variants:
        model = load_model(_need(out / f"model_{variant}.json"), ds)
        res = evaluate(model.scorer(ds), test, np.unique(test[:, 1]), ecfg,
                       regions=None if ds.regions is None else np.asarray(ds.regions)[split.test])
        rows += res.rows(_setting(cfg, split), variant, seed)
    _write(out / "metrics.csv", metrics_csv(rows))


def cmd_export_dag(cfg: ExperimentConfig, out: Path, seed: int, model_path: str | None = None,
                   threshold: float | None = None) -> None:
    ds = _dataset(cfg, out)
    variant = next((v for v in cfg.variants if PRESETS[v].get("use_preference_input", True)), "causpref")
    model = load_model(_need(Path(model_path) if model_path else out / f"model_{variant}.json"), ds)
    if model.dag is None:
        raise DataError("model has no preference DAG to export")
    thr = threshold if threshold is not None else model.hyper.edge_threshold
    names = ds.feature_names()
    edges = dagmod.export_graph(model.dag, thr, names)
    _write(out / "dag.dot", dagmod.edges_to_dot(edges, names))
    _write(out / "dag_edges.csv", dagmod.edges_to_csv(edges))


def cmd_sweep(cfg: ExperimentConfig, out: Path, seed: int) -> None:
    ds = _dataset(cfg, out)
    if not cfg.sweep_ratios:
        raise UsageError("sweep needs sweep_ratios in the config")
    ecfg = cfg.eval_config()
    rows = []
    for s in cfg.seeds:
        splits = ratio_sweep(ds, cfg.split_spec(s), cfg.sweep_ratios)
        for ratio, split in zip(cfg.sweep_ratios, splits):
            test = ds.interactions[split.test]
            setting = f"{_setting(cfg, split)}:{ratio[0]:g}-{ratio[1]:g}"
            for variant in cfg.variants:
                model, _ = train(ds, split, cfg.hyper(), cfg.train_config(variant, s))
                res = evaluate(model.scorer(ds), test, np.unique(test[:, 1]), ecfg)
                rows += res.rows(setting, variant, s)
    _write(out / "sweep_metrics.csv", metrics_csv(rows))


COMMANDS = {"synth": cmd_synth, "split": cmd_split, "train": cmd_train, "eval": cmd_eval,
            "export-dag": cmd_export_dag, "sweep": cmd_sweep}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # SUPPRESS keeps a subcommand's unset flag from clobbering a global one
    common.add_argument("--config", default=argparse.SUPPRESS, help="experiment config JSON")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="overrides the first config seed")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="output directory (overrides config 'out')")
    parser = _Parser(prog="causpref", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "export-dag":
            p.add_argument("--model", help="model file (default <out>/model_<variant>.json)")
            p.add_argument("--threshold", type=float, help="edge threshold (default from the model)")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        cfg = load_config(getattr(args, "config", None))
        if getattr(args, "out", None):
            cfg.out = args.out
        seed = getattr(args, "seed", None)
        seed = cfg.seeds[0] if seed is None else seed
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _echo(out, args.command.replace("-", "_"), cfg, seed)
        if args.command == "export-dag":
            cmd_export_dag(cfg, out, seed, getattr(args, "model", None), getattr(args, "threshold", None))
        else:
            COMMANDS[args.command](cfg, out, seed)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (DataError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
