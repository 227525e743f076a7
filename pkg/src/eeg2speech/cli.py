"""Command-line entry point covering the full experiment lifecycle."""
from __future__ import annotations

import csv
import json
import shutil
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import dsp, metrics
from .config import (
    CONFIG_NAMES,
    RunConfig,
    apply_overrides,
    load_config,
    save_config,
)
from .data import (
    Manifest,
    generate_synthetic,
    load_manifest,
    read_audio,
    read_eeg,
    save_manifest,
    write_audio,
    write_eeg,
)
from .errors import ConfigError, DataError, Eeg2SpeechError, NumericalError
from .trainer import (
    infer_waveform,
    pretrain_eeg,
    state_from_checkpoint,
    train as run_training,
)

EXIT_CODES = [(ConfigError, 2), (DataError, 3), (NumericalError, 4)]


def _resolve_config(config: str | None, overrides, seed: int | None) -> RunConfig:
    if config is None:
        cfg = RunConfig()
    elif config in CONFIG_NAMES:
        cfg = apply_overrides(RunConfig(), [f"train.config_name={config}"])
    else:
        cfg = load_config(config)
    if overrides:
        cfg = apply_overrides(cfg, list(overrides))
    if seed is not None:
        cfg = apply_overrides(cfg, [f"train.seed={seed}", f"data.synth_seed={seed}"])
    return cfg


def _echo_config(cfg: RunConfig, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.yaml")


config_opt = click.option("--config", default=None,
                          help="Config file path, or one of: " + ", ".join(CONFIG_NAMES))
set_opt = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                       help="Dotted-key config override, e.g. train.lr=1e-3")
seed_opt = click.option("--seed", type=int, default=None)


@click.group()
def cli():
    """EEG-to-speech reconstruction experiments."""


@cli.command("synth-data")
@click.option("--out-dir", required=True, type=click.Path())
@config_opt
@set_opt
@seed_opt
def synth_data(out_dir, config, overrides, seed):
    """Generate a paired synthetic EEG/audio corpus with split labels."""
    cfg = _resolve_config(config, overrides, seed)
    out_dir = Path(out_dir)
    manifest_path = generate_synthetic(cfg.data, out_dir)
    _echo_config(cfg, out_dir)
    click.echo(f"wrote {manifest_path}")


@cli.command("preprocess")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@config_opt
@set_opt
def preprocess(manifest_path, out_dir, config, overrides):
    """Run the EEG filtering/resampling chain; write a self-contained corpus."""
    cfg = _resolve_config(config, overrides, None)
    manifest = load_manifest(manifest_path)
    out_dir = Path(out_dir)
    (out_dir / "eeg").mkdir(parents=True, exist_ok=True)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    copied_audio = set()
    for row in manifest.rows:
        rec = dsp.preprocess_eeg(
            read_eeg(manifest.root / row.eeg_path),
            notch_hz=cfg.dsp.notch_hz, notch_q=cfg.dsp.notch_q,
            band_lo=cfg.dsp.band_lo, band_hi=cfg.dsp.band_hi,
            fs_out=cfg.dsp.eeg_fs,
        )
        write_eeg(out_dir / row.eeg_path, rec)
        if row.audio_path not in copied_audio:
            shutil.copy(manifest.root / row.audio_path, out_dir / row.audio_path)
            copied_audio.add(row.audio_path)
    save_manifest(Manifest(rows=manifest.rows, root=out_dir), out_dir / "manifest.csv")
    _echo_config(cfg, out_dir)
    click.echo(f"wrote {out_dir / 'manifest.csv'}")


@cli.command("pretrain-eeg")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--run-dir", required=True, type=click.Path())
@click.option("--steps", type=int, default=None, help="Defaults to train.max_iterations")
@config_opt
@set_opt
@seed_opt
def pretrain_eeg_cmd(manifest_path, run_dir, steps, config, overrides, seed):
    """Pretrain the EEG autoencoder alone with the cosine loss."""
    cfg = _resolve_config(config, overrides, seed)
    manifest = load_manifest(manifest_path)
    run_dir = Path(run_dir)
    _echo_config(cfg, run_dir)
    n_steps = cfg.train.max_iterations if steps is None else steps
    _, losses = pretrain_eeg(cfg, manifest, n_steps, run_dir=run_dir)
    click.echo(f"L_EEG {losses[0]:.4f} -> {losses[-1]:.4f} over {len(losses)} steps")
    click.echo(f"wrote {run_dir / 'eeg.pt'}")


@cli.command("train")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--run-dir", required=True, type=click.Path())
@config_opt
@set_opt
@seed_opt
def train_cmd(manifest_path, run_dir, config, overrides, seed):
    """Combined training in one of the five run configurations."""
    cfg = _resolve_config(config, overrides, seed)
    manifest = load_manifest(manifest_path)
    state = run_training(cfg, manifest, run_dir)
    last = state.history[-1]
    click.echo(f"finished {state.iteration} iterations; " +
               " ".join(f"{k}={v:.4f}" for k, v in last.items()))
    click.echo(f"wrote {Path(run_dir) / 'checkpoint.pt'}")


def _load_eeg_for_model(path, cfg, channels_subset):
    rec = read_eeg(path)
    if channels_subset:
        regions = {r.strip() for r in channels_subset.split(",") if r.strip()}
        rec = metrics.channel_subset(rec, regions)
    if rec.fs != cfg.dsp.eeg_fs:
        rec = dsp.preprocess_eeg(
            rec, notch_hz=cfg.dsp.notch_hz, notch_q=cfg.dsp.notch_q,
            band_lo=cfg.dsp.band_lo, band_hi=cfg.dsp.band_hi, fs_out=cfg.dsp.eeg_fs,
        )
    return rec


@cli.command("infer")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--eeg", "eeg_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--temperature", type=float, default=0.667)
@click.option("--channels-subset", default=None, metavar="REGIONS",
              help="Comma-separated region names, e.g. parietal,temporal")
@seed_opt
def infer_cmd(checkpoint, eeg_path, out_path, temperature, channels_subset, seed):
    """Reconstruct a waveform from one EEG recording."""
    state = state_from_checkpoint(checkpoint)
    if seed is not None:
        torch.manual_seed(seed)
    rec = _load_eeg_for_model(eeg_path, state.cfg, channels_subset)
    utt = infer_waveform(rec, state, temperature=temperature)
    write_audio(out_path, utt)
    click.echo(f"wrote {out_path} ({utt.duration:.2f} s)")


@cli.command("evaluate")
@click.option("--checkpoint", default=None, type=click.Path())
@click.option("--manifest", "manifest_path", default=None, type=click.Path())
@click.option("--run-dir", default=None, type=click.Path())
@click.option("--ref", "ref_path", default=None, type=click.Path(),
              help="Direct mode: reference WAV")
@click.option("--gen", "gen_path", default=None, type=click.Path(),
              help="Direct mode: generated WAV")
@click.option("--temperature", type=float, default=0.0)
@click.option("--n-mcc", type=int, default=dsp.N_MCC_DEFAULT)
@click.option("--channels-subset", default=None, metavar="REGIONS")
@seed_opt
def evaluate_cmd(checkpoint, manifest_path, run_dir, ref_path, gen_path,
                 temperature, n_mcc, channels_subset, seed):
    """MCD and Mel-Corr: either one WAV pair, or every evaluation split."""
    if ref_path and gen_path:
        ref, gen = read_audio(ref_path), read_audio(gen_path)
        click.echo(f"mcd_db={metrics.mcd(ref, gen, n_mcc=n_mcc):.4f} "
                   f"mel_corr={metrics.mel_corr(ref, gen):.4f}")
        return
    if not (checkpoint and manifest_path and run_dir):
        raise ConfigError(
            "evaluate needs either --ref/--gen or --checkpoint/--manifest/--run-dir"
        )
    state = state_from_checkpoint(checkpoint)
    if seed is not None:
        torch.manual_seed(seed)
    manifest = load_manifest(manifest_path)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    per_utt = []
    reports = []
    for split in ("unseen-audio", "unseen-subject", "unseen-both"):
        rows = manifest.subset(split)
        if not rows:
            continue
        report = metrics.MetricReport(split)
        for row in rows:
            rec = _load_eeg_for_model(manifest.root / row.eeg_path, state.cfg,
                                      channels_subset)
            gen = infer_waveform(rec, state, temperature=temperature)
            ref = read_audio(manifest.root / row.audio_path)
            m = metrics.mcd(ref, gen, n_mcc=n_mcc)
            c = metrics.mel_corr(ref, gen)
            report.mcd_values.append(m)
            report.mel_corr_values.append(c)
            per_utt.append({"split": split, "subject_id": row.subject_id,
                            "stimulus_id": row.stimulus_id,
                            "mcd_db": m, "mel_corr": c})
        reports.append(report.summary())

    with open(run_dir / "evaluation_utterances.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["split", "subject_id", "stimulus_id", "mcd_db", "mel_corr"]
        )
        writer.writeheader()
        writer.writerows(per_utt)
    with open(run_dir / "evaluation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["split", "n", "mcd_mean", "mcd_ci",
                            "mel_corr_mean", "mel_corr_ci"]
        )
        writer.writeheader()
        writer.writerows(reports)
    for rep in reports:
        click.echo(f"{rep['split']}: MCD {rep['mcd_mean']:.2f}±{rep['mcd_ci']:.2f} dB, "
                   f"Mel-Corr {rep['mel_corr_mean']:.2f}±{rep['mel_corr_ci']:.2f}%")
    click.echo(f"wrote {run_dir / 'evaluation.csv'}")


@cli.command("phoneme-report")
@click.option("--ref", "ref_path", required=True, type=click.Path())
@click.option("--gen", "gen_path", required=True, type=click.Path())
@click.option("--textgrid", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--n-mcc", type=int, default=dsp.N_MCC_DEFAULT)
def phoneme_report_cmd(ref_path, gen_path, textgrid, out_path, n_mcc):
    """Phoneme-group MCD/Mel-Corr from a forced-alignment TextGrid."""
    alignment = metrics.parse_textgrid(textgrid)
    report = metrics.phoneme_report(
        [(read_audio(ref_path), read_audio(gen_path), alignment)], n_mcc=n_mcc
    )
    with open(out_path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    click.echo(f"wrote {out_path}")


@cli.command("wordspot")
@click.option("--checkpoint", required=True, type=click.Path(),
              help="Full training checkpoint (uses its EEG encoder)")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--channels-subset", default=None, metavar="REGIONS")
def wordspot_cmd(checkpoint, manifest_path, out_path, channels_subset):
    """Keyword-presence probe over pooled EEG embeddings, F1 per split."""
    state = state_from_checkpoint(checkpoint)
    manifest = load_manifest(manifest_path)
    encoder = state.modules["eeg"].encoder.eval()
    embeddings: dict[str, list[np.ndarray]] = {}
    transcripts: dict[str, list[str]] = {}
    for row in manifest.rows:
        rec = _load_eeg_for_model(manifest.root / row.eeg_path, state.cfg,
                                  channels_subset)
        with torch.no_grad():
            emb = encoder(torch.tensor(rec.samples, dtype=torch.float32)[None])[0]
        embeddings.setdefault(row.split, []).append(emb.numpy())
        transcripts.setdefault(row.split, []).append(row.transcript)
    result = metrics.wordspot_probe(embeddings, transcripts)
    with open(out_path, "w") as fh:
        json.dump(result, fh, indent=1, sort_keys=True)
    for split, rep in sorted(result["splits"].items()):
        shown = "undefined" if rep["f1"] is None else f"{rep['f1']:.3f}"
        click.echo(f"{split}: F1 {shown} (n={rep['n']})")
    click.echo(f"wrote {out_path}")


@cli.command("plot")
@click.option("--report", "report_path", required=True, type=click.Path(),
              help="evaluation.csv or a phoneme-report JSON")
@click.option("--out", "out_path", required=True, type=click.Path())
def plot_cmd(report_path, out_path):
    """Bar chart of an evaluation CSV or phoneme-group JSON report."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    report_path = Path(report_path)
    if not report_path.exists():
        raise DataError(f"report not found: {report_path}")
    if report_path.suffix == ".json":
        with open(report_path) as fh:
            report = json.load(fh)
        axes = [a for a in metrics.GROUP_AXES if report.get(a)]
        if not axes:
            raise DataError(f"{report_path} contains no plottable groups")
        fig, subplots = plt.subplots(1, len(axes), figsize=(4 * len(axes), 3.5))
        subplots = np.atleast_1d(subplots)
        for ax, axis in zip(subplots, axes):
            groups = sorted(report[axis])
            ax.bar(groups, [report[axis][g]["mcd"] for g in groups])
            ax.set_title(axis)
            ax.set_ylabel("MCD (dB)")
            ax.tick_params(axis="x", rotation=45)
    else:
        with open(report_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise DataError(f"{report_path} has no data rows")
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
        splits = [r["split"] for r in rows]
        ax1.bar(splits, [float(r["mcd_mean"]) for r in rows],
                yerr=[float(r["mcd_ci"]) for r in rows])
        ax1.set_ylabel("MCD (dB)")
        ax2.bar(splits, [float(r["mel_corr_mean"]) for r in rows],
                yerr=[float(r["mel_corr_ci"]) for r in rows])
        ax2.set_ylabel("Mel-Corr (%)")
        for ax in (ax1, ax2):
            ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    click.echo(f"wrote {out_path}")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)
    except Eeg2SpeechError as exc:
        click.echo(f"error: {exc}", err=True)
        for kind, code in EXIT_CODES:
            if isinstance(exc, kind):
                sys.exit(code)
        sys.exit(1)
    sys.exit(0)


if __name__ == "__main__":
    main()
