"""Command-line entry point (``avsep``).

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .features import extract_features, save_features
from .estoi import estoi
from .losses import si_snr
from .model import Model
from .optim import NumericFailure
from .room.dataset import load_bundles
from .room.geometry import ArrayGeometry, angle_bin
from .wavio import WavFormatError, read_wav, write_wav
from .wpe import WpeConfig, WpeInputError, wpe_waveform
from .pipeline.config import PHASES, ConfigError, load_train_config
from .pipeline.evaluate import drr_bin, evaluate_examples, model_waveforms, oracle_mask_waveform, wpe_on
from .pipeline.report import lambda_table, markdown_table, read_metrics_csv, write_metrics_csv, write_report
from .pipeline.run import load_run_config, prepare_split, run_pipeline, simulate as simulate_dataset, \
    with_missing_frames

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _jobs(jobs):
    return jobs if jobs else None


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Audio-visual target speech separation and dereverberation toolkit."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Run/scene JSON config.")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Dataset directory.")
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=None, help="Render workers (default: $AVSEP_JOBS or 1).")
def simulate(config_path, out, seed, jobs):
    """Sample and render train/validation/test scenes."""
    cfg = load_run_config(config_path, seed=seed)
    manifest = simulate_dataset(cfg, out, _jobs(jobs))
    click.echo(f"{len(manifest['scenes'])} scenes -> {out} (manifest {manifest['hash']})")


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--no-angle", is_flag=True, help="Zero the angle-feature block.")
def extract(data, out, no_angle):
    """Write the (T, 1799) input feature block of every rendered scene."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    bundles = load_bundles(data)
    for b in bundles:
        meta = b.metadata
        array = ArrayGeometry.from_dict(meta["spec"]["array"])
        feats = extract_features(b.mixture, meta["target_doa"], array, use_angle=not no_angle)
        save_features(out / f"{meta['scene_id']}.f32", feats, {"scene_id": meta["scene_id"],
                                                              "use_angle": not no_angle})
    click.echo(f"features for {len(bundles)} scenes -> {out}")


@cli.command()
@click.option("--phase", required=True, type=click.Choice(PHASES))
@click.option("--lambda", "lam", type=float, default=None, help="Joint-objective weight.")
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--init", "init", type=click.Path(), default=None, help="Checkpoint to start from.")
@click.option("--out", required=True, type=click.Path(), help="Checkpoint path (no suffix).")
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=None)
def train(phase, lam, data, config_path, init, out, seed, jobs):
    """Run one training phase and write a checkpoint."""
    from .pipeline.train import train_phase

    cfg = load_train_config(config_path, lam=lam, seed=seed)
    if init is None and phase != "sep":
        raise ConfigError(f"phase {phase!r} needs --init with the previous phase's checkpoint")
    if init is not None:
        model, _ = load_checkpoint(init)
        if model.config.digest() != cfg.model.digest():
            cfg = replace(cfg, model=model.config)
    else:
        model = Model(replace(cfg.model, init_seed=cfg.seed))
    train_set = prepare_split(data, "train", cfg, _jobs(jobs))
    val_set = prepare_split(data, "validation", cfg, _jobs(jobs))
    result = train_phase(model, train_set, val_set, cfg, phase)
    save_checkpoint(out, model, {"phase": phase, "lambda": cfg.lam, "parent": init, "train_config": cfg.to_dict(),
                                 "result": result.to_dict()})
    click.echo(f"{phase}: best validation {result.best_validation:.4f} at step {result.best_step} -> {out}")


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--checkpoint", type=click.Path(), default=None)
@click.option("--system", type=click.Choice(["model", "oracle", "wpe-cascade"]), default="model")
@click.option("--missing", type=float, multiple=True, help="Visual frame-loss fraction (repeatable).")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--jobs", type=int, default=None)
@click.option("--seed", type=int, default=0, help="Seed of the frame-loss pattern.")
def evaluate(data, checkpoint, system, missing, out, config_path, jobs, seed):
    """Score a system on the test split and write metrics.csv plus tables."""
    cfg = load_train_config(config_path)
    model = None
    if system != "oracle":
        if checkpoint is None:
            raise ConfigError(f"system {system!r} needs --checkpoint")
        model, _ = load_checkpoint(checkpoint)
        cfg = replace(cfg, model=model.config)
    test = prepare_split(data, "test", cfg, _jobs(jobs))
    if system == "oracle":
        systems = {"oracle_mask": oracle_mask_waveform}
    elif system == "wpe-cascade":
        systems = {"wpe_cascade": wpe_on([w["sep"] for w in model_waveforms(model, test, ("sep",))])}
    else:
        systems = {"model": [w["full"] for w in model_waveforms(model, test)]}
    rows = evaluate_examples(test, systems, _jobs(jobs))
    if missing and model is None:
        raise ConfigError("--missing needs a model checkpoint")
    bundles = load_bundles(data, "test") if missing else []
    for k, frac in enumerate(missing):
        if not 0 <= frac < 1:
            raise ConfigError(f"missing fraction {frac} outside [0, 1)")
        damaged = with_missing_frames(test, bundles, cfg, frac, seed * 1000 + k)
        name = next(iter(systems))
        wav = model_waveforms(model, damaged)
        w = [x["sep"] for x in wav] if system == "wpe-cascade" else [x["full"] for x in wav]
        if system == "wpe-cascade":
            w = wpe_on(w)
        rows += evaluate_examples(damaged, {name: w}, _jobs(jobs), condition=f"missing{round(frac * 100)}",
                                  include_unprocessed=False)
    paths = write_report(rows, out)
    click.echo(markdown_table(rows, "si_snri", "angle_bin"))
    click.echo(f"-> {paths['csv']}")


@cli.command()
@click.option("--in", "inp", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--taps", type=int, default=WpeConfig.taps)
@click.option("--delay", type=int, default=WpeConfig.delay)
@click.option("--iters", type=int, default=WpeConfig.iterations)
def wpe(inp, out, taps, delay, iters):
    """Dereverberate a WAV file (each channel independently)."""
    try:
        cfg = WpeConfig(taps=taps, delay=delay, iterations=iters)
        x = read_wav(inp)
    except (ValueError, WavFormatError) as exc:
        raise ConfigError(str(exc)) from None
    chans = x[None] if x.ndim == 1 else x
    y = [wpe_waveform(c, cfg) for c in chans]
    write_wav(out, y[0] if x.ndim == 1 else np.stack(y))
    click.echo(f"-> {out}")


@cli.command()
@click.argument("inputs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(file_okay=False))
def report(inputs, out):
    """Tables and plot series from run directories or metric CSVs.

    Several run directories with different lambdas also yield a lambda-sweep table.
    """
    rows, sweep = [], []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            manifest = json.loads((p / "run_manifest.json").read_text())
            r = read_metrics_csv(p / "eval" / "metrics.csv")
            sweep.append((manifest["config"]["train"]["lam"], [x for x in r if x["system"] == "joint"
                                                               and not x["condition"]]))
        else:
            r = read_metrics_csv(p)
        rows += r
    paths = write_report(rows, out)
    if len(sweep) > 1:
        (Path(out) / "lambda_sweep.md").write_text(lambda_table(sweep) + "\n")
    click.echo(f"-> {paths['markdown']}")


@cli.command()
@click.option("--est", "est_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--ref", "ref_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--meta", "meta_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON {utterance: {num_speakers, min_angle (radians), drr_db}}.")
@click.option("--mix", "mix_dir", type=click.Path(exists=True, file_okay=False),
              help="Unprocessed mixtures for SI-SNRi.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def metrics(est_dir, ref_dir, meta_path, mix_dir, out):
    """SI-SNR(i) and ESTOI of estimated WAVs against same-named references."""
    meta = json.loads(Path(meta_path).read_text()) if meta_path else {}
    rows = []
    for est_path in sorted(Path(est_dir).glob("*.wav")):
        name = est_path.stem
        ref_path = Path(ref_dir) / est_path.name
        if not ref_path.exists():
            raise ConfigError(f"no reference for {est_path.name}")
        est, ref = _mono(read_wav(est_path)), _mono(read_wav(ref_path))
        n = min(len(est), len(ref))
        s = si_snr(est[:n], ref[:n])
        base = float("nan")
        if mix_dir:
            mix = _mono(read_wav(Path(mix_dir) / est_path.name))
            base = si_snr(mix[:n], ref[:n])
        m = meta.get(name, {})
        rows.append({
            "system": "estimate", "condition": "", "scene_id": name,
            "num_speakers": int(m.get("num_speakers", 0)),
            "angle_bin": angle_bin(m["min_angle"]) if m.get("min_angle") is not None else "none",
            "drr_db": float(m.get("drr_db", float("nan"))),
            "drr_bin": drr_bin(m["drr_db"]) if "drr_db" in m else "none",
            "si_snr": s, "si_snri": s - base, "estoi": estoi(est[:n], ref[:n]),
        })
    if not rows:
        raise ConfigError(f"no WAV files in {est_dir}")
    write_metrics_csv(rows, out)
    click.echo(f"{'utterance':<24} {'si_snr':>9} {'si_snri':>9} {'estoi':>7}")
    for r in rows:
        click.echo(f"{r['scene_id']:<24} {r['si_snr']:9.2f} {r['si_snri']:9.2f} {r['estoi']:7.3f}")
    click.echo(f"-> {out}")


def _mono(x):
    return x[0] if x.ndim == 2 else x


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=None)
@click.option("--data", type=click.Path(file_okay=False), default=None, help="Reuse a rendered dataset.")
def run(config_path, out, seed, jobs, data):
    """Simulate, train all phases, evaluate and report in one go."""
    cfg = load_run_config(config_path, seed=seed)
    manifest = run_pipeline(cfg, out, _jobs(jobs), data)
    click.echo(f"run {manifest.config_hash}: {manifest.status} -> {manifest.metrics['markdown']}")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="avsep", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_CONFIG
    except (NumericFailure, FloatingPointError) as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return EXIT_NUMERIC
    except WpeInputError as exc:
        click.echo(f"input error: {exc}", err=True)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
