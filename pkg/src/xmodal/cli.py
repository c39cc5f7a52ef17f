"""Command-line front end: gen-data, train, eval, gradcheck, ablate.

Every report path writes machine-readable output (JSON/CSV) and a
rendered figure next to it. Exit codes: 0 success, 2 config error,
3 numerical failure, 4 acceptance-property failure.
"""

from __future__ import annotations

import json
import statistics
import sys
from pathlib import Path

import click
import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import generate_dataset, load_dataset, save_dataset
from .evaluation import evaluate
from .network import ConfigError, Model
from .tensor import NumericsError
from .train import run_training

EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_PROPERTY = 4


def _load_config(path: str | None) -> RunConfig:
    try:
        return RunConfig.from_file(path) if path else RunConfig()
    except (ConfigError, OSError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


@click.group()
def main():
    """Cross-modality retrieval workbench."""


@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Run config file (key=value).")
@click.option("--seed", type=int, default=None, help="Override the dataset seed.")
@click.option("--out", "out_path", type=click.Path(), required=True,
              help="Output dataset file (.xmds).")
def gen_data(config_path, seed, out_path):
    """Generate a synthetic two-modality dataset and write it to disk."""
    cfg = _load_config(config_path)
    if seed is not None:
        cfg.data_seed = seed
    dataset = generate_dataset(cfg.dataset_spec())
    save_dataset(dataset, out_path)
    click.echo(f"wrote {len(dataset)} images "
               f"({cfg.num_identities} identities x 2 modalities) to {out_path}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=None, help="Override the training seed.")
@click.option("--data", "data_path", type=click.Path(exists=True), default=None,
              help="Dataset file; generated from the config when omitted.")
@click.option("--out", "out_path", type=click.Path(), required=True)
def train(config_path, seed, data_path, out_path):
    """Train a model; writes per-epoch checkpoints, loss curves, figures."""
    cfg = _load_config(config_path)
    if seed is not None:
        cfg.seed = seed
    out = _out_dir(out_path)
    dataset = load_dataset(data_path) if data_path else None
    try:
        result = run_training(cfg, out, dataset=dataset, log=click.echo)
    except NumericsError as exc:
        click.echo(f"numerical failure during training: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    from .plots import plot_loss_curves

    if result.history:
        plot_loss_curves(result.history, out / "loss_curves.png")
    click.echo(f"finished {cfg.epochs} epochs; outputs in {out}")


@main.command("eval")
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--data", "data_path", type=click.Path(exists=True), default=None)
@click.option("--mode", type=click.Choice(["single", "multi"]), default="single")
@click.option("--direction", type=click.Choice(["ir2rgb", "rgb2ir"]), default="ir2rgb")
@click.option("--shots", type=int, default=1, help="Gallery images per identity (multi mode).")
@click.option("--redraws", type=int, default=1, help="Independent gallery draws to average.")
@click.option("--seed", type=int, default=0, help="Gallery draw seed.")
@click.option("--out", "out_path", type=click.Path(), required=True)
def eval_cmd(ckpt_path, config_path, data_path, mode, direction, shots, redraws, seed, out_path):
    """Evaluate a checkpoint; writes JSON, CSV, and a CMC figure."""
    cfg = _load_config(config_path)
    out = _out_dir(out_path)
    dataset = load_dataset(data_path) if data_path else generate_dataset(cfg.dataset_spec())
    try:
        model = Model.initialize(cfg.net_config(), cfg.seed, cfg.switches())
        model.params.load_arrays(load_checkpoint(ckpt_path))
        result = evaluate(
            model, dataset,
            mode="single_shot" if mode == "single" else "multi_shot",
            shots=shots, redraws=redraws,
            rng=np.random.default_rng(seed), direction=direction,
        )
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except NumericsError as exc:
        click.echo(f"numerical failure during evaluation: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    result.seed = seed
    result.write_json(out / "result.json")
    result.write_csv(out / "result.csv")
    from .plots import plot_cmc

    plot_cmc(result.cmc, out / "cmc_curve.png", title=f"{direction} {mode}")
    click.echo(f"rank-1 {result.rank(1):.4f}  mAP {result.map:.4f}  -> {out}")


@main.command()
@click.option("--seed", type=int, default=0)
@click.option("--cases", type=int, default=20, help="Random cases per op.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Optional directory for the JSON report.")
def gradcheck(seed, cases, out_path):
    """Run the finite-difference suite over every op and the micro network."""
    from .gradcheck import run_full_suite

    report = run_full_suite(seed, cases)
    for op in report.ops:
        status = "PASS" if op.passed else "FAIL"
        click.echo(f"{status}  {op.op:28s} max rel err {op.max_rel_err:.3e} "
                   f"(tol {op.tol:g}, {op.cases} cases)")
    if out_path:
        out = _out_dir(out_path)
        with open(out / "gradcheck.json", "w", encoding="utf-8") as fh:
            json.dump([{"op": r.op, "max_rel_err": r.max_rel_err, "tol": r.tol,
                        "cases": r.cases, "passed": r.passed} for r in report.ops], fh, indent=2)
            fh.write("\n")
    if not report.passed:
        click.echo("gradient check FAILED", err=True)
        sys.exit(EXIT_NUMERIC)
    click.echo("all gradient checks passed")


ABLATION_VARIANTS = [
    ("baseline", {"use_appearance": True, "use_relation": False,
                  "use_multi_level": False, "use_parts": False, "loss": "ranking"}),
    ("multi_level", {"use_appearance": True, "use_relation": False,
                     "use_multi_level": True, "use_parts": False, "loss": "ranking"}),
    ("parts", {"use_appearance": True, "use_relation": False,
               "use_multi_level": False, "use_parts": True, "loss": "ranking"}),
    ("multi_level_parts", {"use_appearance": True, "use_relation": False,
                           "use_multi_level": True, "use_parts": True, "loss": "ranking"}),
    ("relation_only", {"use_appearance": False, "use_relation": True,
                       "use_multi_level": True, "use_parts": True, "loss": "ranking"}),
    ("relation", {"use_appearance": True, "use_relation": True,
                  "use_multi_level": True, "use_parts": True, "loss": "ranking"}),
    ("relation_quadruplet", {"use_appearance": True, "use_relation": True,
                             "use_multi_level": True, "use_parts": True, "loss": "quadruplet"}),
]


def run_ablation(cfg: RunConfig, seeds, variants=None, redraws: int = 3, log=None):
    """Train and evaluate each switch variant over the given seeds; returns
    one row per variant with median rank-1 and mAP."""
    from dataclasses import replace

    variants = variants if variants is not None else ABLATION_VARIANTS
    dataset = generate_dataset(cfg.dataset_spec())
    rows = []
    for name, switches in variants:
        r1s, maps = [], []
        for seed in seeds:
            var_cfg = replace(cfg, seed=seed, **switches)
            result = run_training(var_cfg, out_dir=None, dataset=dataset)
            ev = evaluate(result.model, dataset, mode="single_shot", redraws=redraws,
                          rng=np.random.default_rng(seed), direction="ir2rgb")
            r1s.append(ev.rank(1))
            maps.append(ev.map)
            if log is not None:
                log(f"  {name} seed {seed}: rank-1 {r1s[-1]:.4f} mAP {maps[-1]:.4f}")
        rows.append({
            "variant": name,
            "rank1": statistics.median(r1s),
            "map": statistics.median(maps),
            "rank1_per_seed": r1s,
            "map_per_seed": maps,
        })
        if log is not None:
            log(f"{name}: median rank-1 {rows[-1]['rank1']:.4f} median mAP {rows[-1]['map']:.4f}")
    return rows


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--seeds", type=int, default=5, help="Seeds per variant (>= 5).")
@click.option("--redraws", type=int, default=3)
@click.option("--out", "out_path", type=click.Path(), required=True)
def ablate(config_path, seeds, redraws, out_path):
    """Run the ablation switch matrix and emit a median rank-1/mAP table."""
    cfg = _load_config(config_path)
    out = _out_dir(out_path)
    try:
        rows = run_ablation(cfg, list(range(seeds)), redraws=redraws, log=click.echo)
    except NumericsError as exc:
        click.echo(f"numerical failure during ablation: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)
    with open(out / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")
    with open(out / "ablation.csv", "w", encoding="utf-8") as fh:
        fh.write("variant,rank1,map\n")
        for r in rows:
            fh.write(f"{r['variant']},{r['rank1']:.6f},{r['map']:.6f}\n")
    from .plots import plot_ablation

    plot_ablation(rows, out / "ablation.png")
    for r in rows:
        click.echo(f"{r['variant']:20s} rank-1 {r['rank1']:.4f}  mAP {r['map']:.4f}")


if __name__ == "__main__":
    main()
