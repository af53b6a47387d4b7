"""Command-line surface: data generation, training, evaluation, sweeps.

Verbs: gen-data, train, eval, sweep. Common flags: --config <path>,
--out <dir>, --seed <n> (overrides every seed in the config). Exit codes:
0 success, 1 usage or config error, 2 data/checkpoint/IO error,
3 divergence during training.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from .config import (
    SWEEP_AXES,
    apply_seed_override,
    build_train_config,
    experiment_digest,
    load_config,
)
from .data import (
    build_csv_split,
    build_synthetic_split,
    gen_synthetic,
    subsample_unaligned,
    synthetic_schemas,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DivergenceError,
    SchemaError,
)
from .federation import Link, audit_transcript
from .metrics import slice_report
from .trainer import (
    load_checkpoint,
    predict,
    run_fedud,
    save_checkpoint,
    train_fedsplitnn,
    train_local_dnn,
)


class _Parser(argparse.ArgumentParser):
    # usage problems are exit code 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="fedud", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("gen-data", "write synthetic host/guest CSV files plus a manifest"),
        ("train", "train the configured method and write checkpoints"),
        ("eval", "evaluate a checkpoint and write a sliced metrics report"),
        ("sweep", "run train+eval across an axis of values and seeds"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", default=None, help="TOML config path (defaults apply)")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None,
                       help="override data/init/shuffle seeds with one value")
        if name == "eval":
            p.add_argument("checkpoint", help="checkpoint file to evaluate")
    return parser


def _resolve(args) -> tuple[dict, str]:
    cfg = apply_seed_override(load_config(args.config), args.seed)
    out_dir = args.out if args.out is not None else cfg["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    return cfg, out_dir


def _build_split(cfg: dict):
    d = cfg["data"]
    if d["mode"] == "synthetic":
        return build_synthetic_split(d["n_train"], d["n_val"], d["n_test"],
                                     d["aligned_fraction"], d["host_slots"],
                                     d["guest_slots"], d["vocab_size"],
                                     d["label_noise"], d["seed"])
    if d["mode"] == "csv":
        if not d["host_csv"] or not d["guest_csv"]:
            raise ConfigError("data.host_csv and data.guest_csv are required in csv mode")
        host_schema, guest_schema = synthetic_schemas(d["host_slots"],
                                                      d["guest_slots"], d["vocab_size"])
        return build_csv_split(d["host_csv"], d["guest_csv"], host_schema,
                               guest_schema, d["n_val"], d["n_test"], d["seed"])
    raise ConfigError(f"data.mode: unknown mode {d['mode']!r}")


def _seeds_of(cfg: dict) -> dict:
    return {"data": cfg["data"]["seed"], "init": cfg["training"]["init_seed"],
            "shuffle": cfg["training"]["shuffle_seed"]}


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg, out_dir = _resolve(args)
    d = cfg["data"]
    n_samples = d["n_train"] + d["n_val"] + d["n_test"]
    host_raw, guest_raw = gen_synthetic(n_samples, d["aligned_fraction"],
                                        d["host_slots"], d["guest_slots"],
                                        d["vocab_size"], d["label_noise"], d["seed"])
    host_path = os.path.join(out_dir, "host.csv")
    guest_path = os.path.join(out_dir, "guest.csv")
    host_raw.write_csv(host_path)
    guest_raw.write_csv(guest_path)
    manifest = {
        "seed": d["seed"],
        "n_samples": n_samples,
        "n_aligned_keys": guest_raw.n,
        "aligned_fraction": d["aligned_fraction"],
        "host_slots": d["host_slots"],
        "guest_slots": d["guest_slots"],
        "vocab_size": d["vocab_size"],
        "label_noise": d["label_noise"],
        "files": {"host": "host.csv", "guest": "guest.csv"},
        "config_digest": experiment_digest(cfg),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {host_path}, {guest_path} ({n_samples} host rows, "
          f"{guest_raw.n} aligned keys)")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _write_log(path, method: str, digest: str, phases: list, n_messages: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# method={method} config={digest}\n")
        for phase_name, history in phases:
            fh.write(f"# phase={phase_name}\n")
            if not history:
                continue
            keys = list(history[0].keys())
            fh.write(" ".join(keys) + "\n")
            for row in history:
                fh.write(" ".join(str(row[k]) for k in keys) + "\n")
        fh.write(f"federation_messages_total {n_messages}\n")


def _write_transcript(path, link: Link | None) -> None:
    lines = link.transcript.export_lines() if link is not None else []
    verdict = audit_transcript(link.transcript, link.rep_dim) if link is not None else None
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
        if verdict is None or verdict.passed:
            fh.write("# audit: PASS\n")
        else:
            fh.write("# audit: FAIL\n")
            for failure in verdict.failures:
                fh.write(f"# {failure}\n")


def _train_once(cfg: dict, data, out_dir: str, quiet: bool = False):
    """Train per the config; write checkpoints, log and transcript.

    Returns the checkpoint to evaluate.
    """
    tcfg = build_train_config(cfg)
    digest = experiment_digest(cfg)

    def enrich(ckpt):
        ckpt.config["experiment"] = cfg
        ckpt.config_digest = digest
        return ckpt

    if tcfg.method == "fedud":
        link = Link(tcfg.bottom_dims[-1])
        step1, step2 = run_fedud(data, tcfg, link=link)
        save_checkpoint(enrich(step1), os.path.join(out_dir, "step1.ckpt"))
        save_checkpoint(enrich(step2), os.path.join(out_dir, "step2.ckpt"))
        phases = [("step1", step1.history), ("step2", step2.history)]
        final = step2
    elif tcfg.method == "fedsplitnn":
        link = Link(tcfg.bottom_dims[-1])
        final = train_fedsplitnn(data, tcfg, link=link)
        save_checkpoint(enrich(final), os.path.join(out_dir, "model.ckpt"))
        phases = [("single", final.history)]
    elif tcfg.method == "local_dnn":
        link = None
        final = train_local_dnn(data, tcfg)
        save_checkpoint(enrich(final), os.path.join(out_dir, "model.ckpt"))
        phases = [("single", final.history)]
    else:
        raise ConfigError(f"training.method: unknown method {tcfg.method!r}")

    n_messages = len(link.transcript) if link is not None else 0
    _write_log(os.path.join(out_dir, "train_log.txt"), tcfg.method, digest,
               phases, n_messages)
    _write_transcript(os.path.join(out_dir, "transcript.txt"), link)
    if not quiet:
        for phase_name, history in phases:
            for row in history:
                fields = " ".join(f"{k}={row[k]}" for k in row)
                print(f"[{phase_name}] {fields}")
        print(f"federation messages: {n_messages}")
    return final


def cmd_train(args) -> int:
    cfg, out_dir = _resolve(args)
    data = _build_split(cfg)
    _train_once(cfg, data, out_dir)
    print(f"checkpoints and logs written to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _evaluate(ckpt, cfg: dict, data) -> tuple:
    preds = predict(ckpt, data, ckpt.method)
    report = slice_report(preds, method=ckpt.method, seeds=_seeds_of(cfg),
                          config_digest=experiment_digest(cfg))
    return preds, report


def cmd_eval(args) -> int:
    cfg, out_dir = _resolve(args)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.config_digest != experiment_digest(cfg):
        raise CheckpointError(
            f"{args.checkpoint}: trained under config digest {ckpt.config_digest[:12]}, "
            f"but this config digests to {experiment_digest(cfg)[:12]}")
    data = _build_split(cfg)
    preds, report = _evaluate(ckpt, cfg, data)
    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    preds.to_csv(os.path.join(out_dir, "predictions.csv"))
    for name, m in report.slices.items():
        print(f"{name}: auc={m.auc} logloss={m.logloss} n={m.n} n_pos={m.n_pos}")
    print(f"report written to {report_path}")
    return 0


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _apply_axis(cfg: dict, axis: str, value) -> dict:
    out = json.loads(json.dumps(cfg))  # deep copy
    if axis == "guest_slots":
        out["data"]["guest_slots"] = int(value)
    elif axis == "alpha":
        out["training"]["alpha"] = float(value)
    elif axis == "beta":
        out["training"]["beta"] = float(value)
    elif axis == "unaligned_samples":
        if not 0.0 <= float(value) <= 1.0:
            raise ConfigError(f"sweep.values: unaligned_samples fraction {value} "
                              "outside [0, 1]")
    else:
        raise ConfigError(f"sweep.axis: unknown axis {axis!r}")
    return out


def cmd_sweep(args) -> int:
    cfg, out_dir = _resolve(args)
    axis = cfg["sweep"]["axis"]
    values = cfg["sweep"]["values"]
    seeds = cfg["sweep"]["seeds"]
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep.axis: unknown axis {axis!r}")
    if not values:
        raise ConfigError("sweep.values: must be non-empty")
    table_path = os.path.join(out_dir, "sweep.csv")
    with open(table_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "seed", "method", "slice",
                         "auc", "logloss", "error"])
        for value in values:
            for seed in seeds:
                cell_cfg = apply_seed_override(_apply_axis(cfg, axis, value), seed)
                for method in ("fedud", "fedsplitnn", "local_dnn"):
                    cell_cfg["training"]["method"] = method
                    cell_dir = os.path.join(out_dir, f"{axis}_{value}_s{seed}_{method}")
                    try:
                        os.makedirs(cell_dir, exist_ok=True)
                        data = _build_split(cell_cfg)
                        if axis == "unaligned_samples":
                            data = subsample_unaligned(data, float(value),
                                                       cell_cfg["data"]["seed"])
                        ckpt = _train_once(cell_cfg, data, cell_dir, quiet=True)
                        _, report = _evaluate(ckpt, cell_cfg, data)
                        for slice_name, m in report.slices.items():
                            writer.writerow([axis, value, seed, method, slice_name,
                                             "" if m.auc is None else repr(m.auc),
                                             "" if m.logloss is None else repr(m.logloss),
                                             ""])
                    except Exception as exc:  # record the cell, keep sweeping
                        writer.writerow([axis, value, seed, method, "", "", "",
                                         f"{type(exc).__name__}: {exc}"])
                    fh.flush()
                    print(f"swept {axis}={value} seed={seed} method={method}")
    print(f"sweep table written to {table_path}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, SchemaError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
