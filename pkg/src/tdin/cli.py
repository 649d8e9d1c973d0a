"""Command-line entry point: ``tdin <command> [options]``.

Config files are key = value text. Keys before any section header belong to
``[run]``; ``[world]`` keys set WorldConfig fields and ``[model]`` keys set
ModelConfig fields, for example::

    split_year = 2013
    seed = 0

    [world]
    n_firms = 20
    peer_effect = 2.0

    [model]
    epochs = 200

Verbosity follows the TDIN_LOG environment variable (DEBUG, INFO, WARNING).
Exit codes: 0 success, 2 invalid input, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import os
import sys

from .baseline import evaluate_head_to_head, write_report
from .data import load_dataset, preprocess, save_dataset
from .errors import IoFailure, TDINError, ValidationError
from .graph import export_adjacency
from .model import ModelConfig, ModelParams, predict_next, prediction_record, train
from .synth import WorldConfig, synth_generate

log = logging.getLogger("tdin")

RUN_KEYS = {"seed": int, "split_year": int, "horizon": float}


def _coerce(field, text: str):
    kind = field.type if isinstance(field.type, type) else {"int": int, "float": float,
                                                            "str": str, "bool": bool}.get(str(field.type), str)
    if kind is bool:
        return text.strip().lower() in ("1", "true", "yes", "on")
    return kind(text)


def _fill(cls, section: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    out = {}
    for key, text in section.items():
        if key not in fields:
            raise ValidationError(f"unknown {cls.__name__} key {key!r}")
        try:
            out[key] = _coerce(fields[key], text)
        except ValueError:
            raise ValidationError(f"bad value for {key}: {text!r}") from None
    return cls(**out)


@dataclasses.dataclass
class RunConfig:
    world: WorldConfig
    model: ModelConfig
    seed: int = 0
    split_year: int | None = None
    horizon: float = 5.0


def load_config(path: str | None) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if path is not None:
        if not os.path.exists(path):
            raise ValidationError(f"config file {path} does not exist")
        with open(path) as fh:
            parser.read_string("[run]\n" + fh.read())
    sections = {name: dict(parser[name]) for name in parser.sections()}
    unknown = set(sections) - {"run", "world", "model"}
    if unknown:
        raise ValidationError(f"unknown config sections {sorted(unknown)}")
    run = {}
    for key, text in sections.get("run", {}).items():
        if key not in RUN_KEYS:
            raise ValidationError(f"unknown run key {key!r}")
        try:
            run[key] = RUN_KEYS[key](text)
        except ValueError:
            raise ValidationError(f"bad value for {key}: {text!r}") from None
    return RunConfig(_fill(WorldConfig, sections.get("world", {})),
                     _fill(ModelConfig, sections.get("model", {})), **run)


def _seed(args, cfg: RunConfig) -> int:
    return cfg.seed if args.seed is None else args.seed


def _split_year(args, cfg: RunConfig):
    return args.split_year if getattr(args, "split_year", None) is not None else cfg.split_year


def _out(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {path}: {exc}") from exc
    return path


def cmd_simulate(args) -> None:
    cfg = load_config(args.config)
    ds = synth_generate(cfg.world, _seed(args, cfg))
    save_dataset(ds, _out(args.out), processed=False)


def cmd_preprocess(args) -> None:
    preprocess(args.raw, _out(args.out))


def cmd_train(args) -> None:
    cfg = load_config(args.config)
    ds = load_dataset(args.data)
    split = _split_year(args, cfg)
    t_end = None if split is None else float(split - ds.start_year + 1)
    params = train(ds, cfg.model, seed=_seed(args, cfg), t_end=t_end)
    out = _out(args.out)
    with open(os.path.join(out, "checkpoint.json"), "w") as fh:
        fh.write(params.to_json() + "\n")
    with open(os.path.join(out, "loss_curve.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "timing", "choice", "total"])
        for row in params.loss_log:
            w.writerow([row["epoch"], repr(row["timing"]), repr(row["choice"]), repr(row["total"])])


def _checkpoint(path: str) -> ModelParams:
    if not os.path.exists(path):
        raise ValidationError(f"checkpoint {path} does not exist")
    with open(path) as fh:
        return ModelParams.from_json(fh.read())


def cmd_predict(args) -> None:
    cfg = load_config(args.config)
    params = _checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    horizon = args.t_c + (cfg.horizon if args.horizon is None else args.horizon)
    acquirers = [args.acquirer] if args.acquirer else ds.acquirers
    lines = []
    for d in acquirers:
        t_hat, ranked = predict_next(params, ds, d, args.t_c, horizon)
        lines.append(prediction_record(d, t_hat, ranked, args.top))
    with open(os.path.join(_out(args.out), "predictions.jsonl"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_evaluate(args) -> None:
    cfg = load_config(args.config)
    params = _checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    split = _split_year(args, cfg)
    if split is None:
        raise ValidationError("evaluate needs --split-year or split_year in the config")
    result = evaluate_head_to_head(ds, params, split, horizon=cfg.horizon)
    write_report(result, _out(args.out))


def cmd_export_graph(args) -> None:
    ds = load_dataset(args.data)
    snap = ds.graph.snapshot_at(args.year)
    export_adjacency(snap, os.path.join(_out(args.out), f"adjacency_{args.year}.csv"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tdin", description="Temporal dynamic industry network toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        p.add_argument("--out", required=True, help="output directory")
        return p

    p = command("simulate", cmd_simulate, "generate a synthetic raw dataset")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")

    p = command("preprocess", cmd_preprocess, "filter deals, pick acquirers, interpolate features")
    p.add_argument("--raw", required=True)

    p = command("train", cmd_train, "fit TDIN and write checkpoint.json and loss_curve.csv")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--split-year", type=int)

    p = command("predict", cmd_predict, "expected next deal time and ranked targets")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--acquirer")
    p.add_argument("--t-c", type=float, required=True, help="cut-off in years since window start")
    p.add_argument("--horizon", type=float, help="prediction horizon in years after t_c")
    p.add_argument("--top", type=int, help="keep only the top N targets")
    p.add_argument("--config")

    p = command("evaluate", cmd_evaluate, "head-to-head AUC against the logistic baseline")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split-year", type=int)
    p.add_argument("--config")

    p = command("export-graph", cmd_export_graph, "write one year's adjacency matrix")
    p.add_argument("--data", required=True)
    p.add_argument("--year", type=int, required=True)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TDIN_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except ValidationError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except TDINError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
