"""Command-line surface: synth, train-source, pseudo-label, adapt, eval,
schedule.

Exit codes: 0 success, 1 validation or contract error, 2 I/O error. Every
command is deterministic in (inputs, seed). The adapt and train-source report
paths also render PNG curve figures next to the delimited output.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import load_dataset, save_dataset, synth_domain_pair
from .errors import ContractViolation, FormatError, InvalidArgument, NumericError
from .figures import render_adapt_curves, render_source_curves
from .ftsp import export_pseudo_labels, ftsp_pipeline
from .model import load_checkpoint, save_checkpoint
from .pipeline import RunReport, adapt, evaluate, make_eval_hook, pseudo_label_metrics, train_source
from .tsal import tau_dis, tau_div


def _emit(payload: dict, as_json: bool, lines: list[str]) -> None:
    if as_json:
        print(json.dumps(payload))
    else:
        for line in lines:
            print(line)


def _settings(args) -> cfgmod.RunSettings:
    seed = getattr(args, "seed", None)
    config_path = getattr(args, "config", None)
    if config_path is not None:
        return cfgmod.load_settings(config_path, seed_override=seed)
    if seed is None:
        raise InvalidArgument("missing seed: pass --seed or a --config file with a top-level 'seed'")
    return cfgmod.default_settings(seed)


def cmd_synth(args) -> int:
    settings = _settings(args)
    source, target = synth_domain_pair(settings.synth)
    save_dataset(source, args.out_source)
    save_dataset(target, args.out_target)
    payload = {
        "source": {"path": str(args.out_source), "n": source.n, "d": source.dim, "c": source.num_classes},
        "target": {"path": str(args.out_target), "n": target.n, "d": target.dim, "c": target.num_classes},
    }
    _emit(
        payload,
        args.json,
        [
            f"source: N={source.n} d={source.dim} C={source.num_classes} -> {args.out_source}",
            f"target: N={target.n} d={target.dim} C={target.num_classes} -> {args.out_target}",
        ],
    )
    return 0


def cmd_train_source(args) -> int:
    settings = _settings(args)
    source = load_dataset(args.source)
    if not source.labeled:
        raise InvalidArgument(f"source dataset {args.source} is unlabeled")
    model, records = train_source(settings.source, source)
    save_checkpoint(model, args.out_model)
    report_path = Path(args.out_model).with_suffix(".report.json")
    report_path.write_text(json.dumps({"seed": settings.seed, "records": records}, indent=2) + "\n")
    if not args.no_figures:
        render_source_curves(records, Path(args.out_model).with_suffix(".curves.png"))
    best = max(r["val_accuracy"] for r in records)
    payload = {"checkpoint": str(args.out_model), "report": str(report_path), "best_val_accuracy": best}
    _emit(payload, args.json, [f"best validation accuracy: {best:.4f}", f"checkpoint -> {args.out_model}"])
    return 0


def cmd_pseudo_label(args) -> int:
    settings = _settings(args)
    model = load_checkpoint(args.model)
    target = load_dataset(args.target)
    pls = ftsp_pipeline(model, target.features, settings.adapt.ftsp)
    export_pseudo_labels(pls, args.out_csv)
    payload = {"csv": str(args.out_csv), "n": int(pls.labels.shape[0])}
    lines = [f"pseudo-labels for {pls.labels.shape[0]} samples -> {args.out_csv}"]
    if target.labeled:
        metrics = pseudo_label_metrics(pls, target.labels)
        payload["metrics"] = metrics
        lines += [f"{key}: {value:.4f}" for key, value in metrics.items()]
    _emit(payload, args.json, lines)
    return 0


def cmd_adapt(args) -> int:
    settings = _settings(args)
    model = load_checkpoint(args.model)
    target = load_dataset(args.target)
    model.classifier_frozen = True
    hook = make_eval_hook(target) if target.labeled else None
    adapted, report = adapt(settings.adapt, model, target.features, eval_hook=hook)
    save_checkpoint(adapted, args.out_model)

    report_path = Path(args.out_report)
    report.write_json(report_path)
    csv_path = report_path.with_suffix(".csv")
    report.write_csv(csv_path)
    if not args.no_figures:
        render_adapt_curves(report.records, report_path.with_name(report_path.stem + "_curves.png"))

    payload = {"checkpoint": str(args.out_model), "report": str(report_path), "final": report.final_metrics}
    lines = [f"adapted checkpoint -> {args.out_model}", f"report -> {report_path} (+ .csv)"]
    if "target_accuracy" in report.final_metrics:
        lines.append(f"final target accuracy: {report.final_metrics['target_accuracy']:.4f}")
    _emit(payload, args.json, lines)
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    ds = load_dataset(args.dataset)
    if not ds.labeled:
        raise InvalidArgument(f"dataset {args.dataset} is unlabeled")
    metrics = evaluate(model, ds)
    payload = {
        "accuracy": metrics.accuracy,
        "per_class_accuracy": metrics.per_class_accuracy.tolist(),
        "confusion": metrics.confusion.tolist(),
    }
    lines = [f"accuracy: {metrics.accuracy:.4f}"] + [
        f"class {c}: {acc:.4f}" for c, acc in enumerate(metrics.per_class_accuracy)
    ]
    _emit(payload, args.json, lines)
    return 0


def cmd_schedule(args) -> int:
    seed = getattr(args, "seed", None)
    config_path = getattr(args, "config", None)
    if config_path is not None:
        settings = cfgmod.load_settings(config_path, seed_override=seed)
    else:
        settings = cfgmod.default_settings(seed if seed is not None else 0)
    tsal_cfg = settings.adapt.tsal
    rows = [(t, tau_dis(t, tsal_cfg), tau_div(t, tsal_cfg)) for t in range(tsal_cfg.epochs)]
    with Path(args.out_csv).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "tau_dis", "tau_div"])
        for row in rows:
            writer.writerow(row)
    _emit(
        {"csv": str(args.out_csv), "epochs": tsal_cfg.epochs},
        args.json,
        [f"{tsal_cfg.epochs} schedule rows -> {args.out_csv}"],
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps subcommand-position flags from clobbering ones given
    # before the subcommand.
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="run config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed (overrides the config file)")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable stdout")

    parser = argparse.ArgumentParser(prog="featadapt", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic source/target dataset pair")
    p.add_argument("out_source", type=Path)
    p.add_argument("out_target", type=Path)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-source", parents=[common], help="stage 1: supervised source training")
    p.add_argument("source", type=Path)
    p.add_argument("out_model", type=Path)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train_source)

    p = sub.add_parser("pseudo-label", parents=[common], help="one pseudo-labeling pass with a saved model")
    p.add_argument("model", type=Path)
    p.add_argument("target", type=Path)
    p.add_argument("out_csv", type=Path)
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("adapt", parents=[common], help="stage 2: source-free target adaptation")
    p.add_argument("model", type=Path)
    p.add_argument("target", type=Path)
    p.add_argument("out_model", type=Path)
    p.add_argument("out_report", type=Path)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", parents=[common], help="accuracy of a saved model on a labeled dataset")
    p.add_argument("model", type=Path)
    p.add_argument("dataset", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("schedule", parents=[common], help="emit the per-epoch temperature schedule as CSV")
    p.add_argument("out_csv", type=Path)
    p.set_defaults(func=cmd_schedule)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "json"):
        args.json = False
    try:
        return args.func(args)
    except (InvalidArgument, ContractViolation, NumericError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
