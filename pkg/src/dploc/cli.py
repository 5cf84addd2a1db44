"""Batch commands: synth, train, generate, evaluate, locate.

Experiments are described by a JSON config (see ``ExperimentConfig``). Every
command is deterministic given the config and seed, so reruns reproduce
their output files byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from dploc import evaluation as ev
from dploc import gan
from dploc.data import FingerprintDataset, Schema, TestbedSpec, fmt_float, load_csv, synthesize_testbed, write_csv
from dploc.errors import ConfigError, DPLocError

log = logging.getLogger("dploc")

TASK_FOR_MODE = {"location_based": "regression_xy", "zone_based": "classification_zone"}


@dataclass
class ExperimentConfig:
    """Keys of the experiment config file.

    ``epsilons`` uses ``null`` (or ``"inf"``) for the non-private cell.
    ``gan`` holds overrides of GAN hyperparameters (any ``GanConfig`` field
    except variant, private, epsilon, delta and seed).
    """

    data_csv: str | None = None  # radiomap CSV; the simulated testbed when absent
    testbed: str | None = None  # testbed spec JSON (default geometry when absent)
    mode: str = "location_based"
    variants: list[str] = field(default_factory=lambda: ["wgan"])
    epsilons: list[float | None] = field(default_factory=lambda: [None, 15.0, 10.0, 5.0, 1.0])
    delta: float = 1e-5
    sample_counts: list[int] = field(default_factory=lambda: [384])
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str = "runs"
    protocol: str = "tsts"
    models: list[str] = field(default_factory=lambda: ["mlp", "knn"])
    folds: int = 5
    gan: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.epsilons = [None if e in (None, "inf") else float(e) for e in self.epsilons]
        if self.mode not in gan.MODES:
            raise ConfigError(f"mode must be one of {gan.MODES}")
        if not self.variants or any(v not in gan.VARIANTS for v in self.variants):
            raise ConfigError(f"variants must be drawn from {gan.VARIANTS}")
        if self.mode == "location_based" and "cgan" in self.variants:
            raise ConfigError("cgan conditions on zone labels and needs mode zone_based")
        if not self.epsilons or any(e is not None and not e > 0 for e in self.epsilons):
            raise ConfigError("epsilon grid values must be positive (null for non-private)")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if not self.sample_counts or any(int(n) < 1 for n in self.sample_counts):
            raise ConfigError("sample counts must be at least 1")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.protocol not in ev.PROTOCOLS:
            raise ConfigError(f"protocol must be one of {ev.PROTOCOLS}")
        if any(m not in ev.MODELS for m in self.models):
            raise ConfigError(f"models must be drawn from {ev.MODELS}")
        reserved = {"variant", "private", "epsilon", "delta", "seed"}
        known = {f.name for f in fields(gan.GanConfig)} - reserved
        unknown = set(self.gan) - known
        if unknown:
            raise ConfigError(f"unknown gan keys {sorted(unknown)}")

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path} must hold a JSON object")
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"{path} has unknown keys {sorted(unknown)}")
        return cls(**doc)

    def fingerprint(self) -> str:
        doc = asdict(self)
        del doc["out_dir"]  # where results land is not part of the experiment
        doc["epsilons"] = [eps_tag(e) for e in self.epsilons]
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def eps_tag(eps: float | None) -> str:
    return "inf" if eps is None or math.isinf(eps) else fmt_float(eps)


def cell_name(variant: str, eps: float | None, seed: int) -> str:
    return f"{variant}_eps-{eps_tag(eps)}_seed-{seed}"


def gan_config(cfg: ExperimentConfig, variant: str, eps: float | None, seed: int) -> gan.GanConfig:
    return gan.GanConfig(variant=variant, private=eps is not None, epsilon=eps, delta=cfg.delta, seed=seed, **cfg.gan)


def load_data(cfg: ExperimentConfig) -> FingerprintDataset:
    spec = TestbedSpec.load(cfg.testbed) if cfg.testbed else TestbedSpec()
    if cfg.data_csv:
        return load_csv(cfg.data_csv, Schema.for_testbed(spec))
    return synthesize_testbed(spec)


# --- commands ------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    spec = TestbedSpec.load(args.spec) if args.spec else TestbedSpec()
    if args.seed is not None:
        spec = TestbedSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    ds = synthesize_testbed(spec)
    out = Path(args.out)
    write_csv(ds, out)
    print(f"{out}: {len(ds)} records, {spec.n_zones} zones, {spec.n_aps} APs")
    return 0


def _experiment(args: argparse.Namespace) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = ExperimentConfig.load(args.config)
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if args.seed is not None:
        cfg.seeds = [args.seed]
    return cfg


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _experiment(args)
    data = load_data(cfg)
    ckpt_dir = Path(cfg.out_dir) / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    failed = []
    for variant in cfg.variants:
        for eps in cfg.epsilons:
            for seed in cfg.seeds:
                name = cell_name(variant, eps, seed)
                try:
                    model, trace = gan.train(data, gan_config(cfg, variant, eps, seed), cfg.mode)
                except DPLocError as exc:
                    failed.append(name)
                    print(f"{name}: failed: {exc}", file=sys.stderr)
                    continue
                gan.save_checkpoint(model, trace, ckpt_dir / f"{name}.json")
                gan.write_training_trace(trace, ckpt_dir / f"{name}_trace.csv")
                note = " (budget exhausted, stopped early)" if trace.budget_exhausted else ""
                print(f"{name}: epsilon {eps_tag(model.meta['epsilon'])}, {model.meta['generator_steps']} generator steps{note}")
    if failed:
        print(f"failed cells: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    if args.n < 1:
        raise ConfigError("n must be at least 1")
    model, _ = gan.load_checkpoint(args.checkpoint)
    ds = gan.generate(model, args.n, seed=0 if args.seed is None else args.seed)
    write_csv(ds, args.out)
    print(f"{args.out}: {len(ds)} records")
    return 0


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_matrix(path: Path, m: ev.CorrelationMatrix) -> None:
    _write_rows(path, ["column", *m.columns], [[c, *(fmt_float(v) for v in row)] for c, row in zip(m.columns, m.values)])


def _num(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _experiment(args)
    real = load_data(cfg).select(cfg.mode)
    task = TASK_FOR_MODE[cfg.mode]
    out = Path(cfg.out_dir)
    ckpt_dir, synth_dir, rep_dir = out / "checkpoints", out / "synthetic", out / "reports"
    synth_dir.mkdir(parents=True, exist_ok=True)
    rep_dir.mkdir(parents=True, exist_ok=True)
    fp = cfg.fingerprint()

    utility = []
    disclosure = []
    summary_cells = []
    missing = []
    orig_corr = ev.pearson_matrix(real)
    _write_matrix(rep_dir / "correlation_original.csv", orig_corr)
    for seed in cfg.seeds:
        for model_kind in cfg.models:
            e = ev.cross_validate(real, task, model_kind, cfg.folds, seed)
            utility.append(["original", "", seed, len(real), model_kind, e.protocol, e.metric, _num(e.mean), _num(e.std), e.n_folds])

    for variant in cfg.variants:
        for eps in cfg.epsilons:
            for seed in cfg.seeds:
                name = cell_name(variant, eps, seed)
                path = ckpt_dir / f"{name}.json"
                if not path.exists():
                    missing.append(str(path))
                    continue
                model, _ = gan.load_checkpoint(path)
                cell = {"variant": variant, "epsilon": eps_tag(eps), "seed": seed,
                        "epsilon_spent": _num(model.meta["epsilon"]), "samples": {}}
                for n in cfg.sample_counts:
                    synth = gan.generate(model, int(n), seed=seed)
                    write_csv(synth, synth_dir / f"{name}_n-{n}.csv")
                    cols = ",".join(synth.columns)
                    d_norm = ev.disclosure_min(real, synth, "normalized")
                    d_raw = ev.disclosure_min(real, synth, "raw")
                    disclosure.append([variant, eps_tag(eps), seed, n, _num(d_norm), _num(d_raw), cols])
                    corr = ev.pearson_matrix(synth)
                    _write_matrix(rep_dir / f"correlation_{name}_n-{n}.csv", corr)
                    entry = {"disclosure_normalized": d_norm, "disclosure_raw": d_raw,
                             "correlation_preservation": ev.corr_preservation(orig_corr, corr), "utility": {}}
                    for model_kind in cfg.models:
                        u = ev.cross_validate(synth, task, model_kind, cfg.folds, seed, cfg.protocol, real_test=real)
                        utility.append([variant, eps_tag(eps), seed, n, model_kind, u.protocol, u.metric, _num(u.mean), _num(u.std), u.n_folds])
                        entry["utility"][model_kind] = {"metric": u.metric, "mean": u.mean, "std": u.std}
                    cell["samples"][str(n)] = entry
                summary_cells.append(cell)

    _write_rows(rep_dir / "utility.csv",
                ["variant", "epsilon", "seed", "samples", "model", "protocol", "metric", "mean", "std", "folds"], utility)
    _write_rows(rep_dir / "disclosure.csv",
                ["variant", "epsilon", "seed", "samples", "disclosure_normalized", "disclosure_raw", "columns"], disclosure)
    summary = {
        "config_fingerprint": fp,
        "mode": cfg.mode,
        "protocol": cfg.protocol,
        "delta": cfg.delta,
        "cells": summary_cells,
        "disclosure_trend": _disclosure_trend(disclosure, cfg),
        "missing": missing,
    }
    (rep_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{rep_dir}: {len(utility)} utility rows, {len(disclosure)} disclosure rows")
    if missing:
        print("missing checkpoints:\n  " + "\n  ".join(missing), file=sys.stderr)
        return 1
    return 0


def _disclosure_trend(rows: list, cfg: ExperimentConfig) -> dict:
    """Per variant: is normalized disclosure non-decreasing as epsilon falls? Recorded, not enforced."""
    out = {}
    order = sorted(cfg.epsilons, key=lambda e: -math.inf if e is None else -e)
    for variant in cfg.variants:
        means = []
        for eps in order:
            vals = [float(r[4]) for r in rows if r[0] == variant and r[1] == eps_tag(eps)]
            if vals:
                means.append(float(np.mean(vals)))
        out[variant] = {"epsilons": [eps_tag(e) for e in order], "means": means,
                        "non_decreasing": bool(all(b >= a for a, b in zip(means, means[1:])))}
    return out


def cmd_locate(args: argparse.Namespace) -> int:
    if bool(args.data) == bool(args.checkpoint):
        raise ConfigError("give exactly one of --data or --checkpoint")
    if args.checkpoint:
        model, _ = gan.load_checkpoint(args.checkpoint)
        train_set = gan.generate(model, args.n, seed=0 if args.seed is None else args.seed)
        mode = model.mode
    else:
        train_set = load_csv(args.data)
        mode = "location_based" if train_set.coords is not None else "zone_based"
        train_set = train_set.select(mode)
    if len(args.rss) != train_set.ap_count:
        args.parser.error(f"expected {train_set.ap_count} RSS values, got {len(args.rss)}")
    pred = ev.train_downstream(train_set, TASK_FOR_MODE[mode], args.model, seed=0 if args.seed is None else args.seed, k=args.k)
    out = ev.locate(pred, args.rss)
    if isinstance(out, tuple):
        print(f"{out[0]!r} {out[1]!r}")
    else:
        print(out + 1)  # zones are 1-based outside the library
    return 0


# --- argument parsing ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the seed(s)")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="override the output directory")
    common.add_argument("--config", default=argparse.SUPPRESS, help="experiment config (JSON)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="dploc", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="simulate a testbed radiomap")
    p.add_argument("--spec", help="testbed spec JSON")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train one GAN per (variant, epsilon, seed)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="sample a synthetic radiomap from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-n", type=int, required=True, help="number of records")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=[common], help="utility, correlation and disclosure reports")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("locate", parents=[common], help="position a new user from RSS values")
    p.add_argument("--data", help="radiomap CSV to train the localizer on")
    p.add_argument("--checkpoint", help="GAN checkpoint whose samples train the localizer")
    p.add_argument("-n", type=int, default=384, help="synthetic records drawn from --checkpoint")
    p.add_argument("--model", choices=ev.MODELS, default="knn")
    p.add_argument("--k", type=int, default=3, help="neighbours for the kNN model")
    p.add_argument("rss", nargs="+", type=float, help="RSS values in dBm, one per AP")
    p.set_defaults(func=cmd_locate, parser=p)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("seed", "out_dir", "config"):
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DPLocError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
