"""Command-line front end: scenario simulation, inference, sweeps,
reconstruction, and the MCMC-correctness harness.

Artifacts are byte-identical under a fixed seed; timestamps and timing live
only in metadata sidecars (and the sweep CSV's wall_time column).
"""

from __future__ import annotations

import csv
import datetime
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .config import ExperimentConfig, apply_sweep_value, load_config
from .inference import choose_kappa, detect_order, reconstruct_from_trace, relabel, summarize
from .mcmc_check import joint_distribution_test, tiny_test_config
from .model import prepare_freq_data
from .sampler import ChainTrace, make_rng, run_chain
from .signals import synthesize_sources

FLOAT_FMT = "%.17g"


def _write_meta(path: Path, seed: int, extra: dict | None = None) -> None:
    meta = {"created": datetime.datetime.now().isoformat(), "seed": seed}
    if extra:
        meta.update(extra)
    path.write_text(json.dumps(meta, indent=2) + "\n")


def _write_data_csv(path: Path, received: np.ndarray) -> None:
    header = ",".join(f"sensor_{i}" for i in range(received.shape[0]))
    np.savetxt(path, received.T, delimiter=",", header=header, comments="", fmt=FLOAT_FMT)


def _read_data_csv(path: Path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    return np.atleast_2d(data).T


def simulate_scenario(cfg: ExperimentConfig, seed: int, stream: int = 0):
    """Draw one dataset from the scenario; returns (sources, received)."""
    rng = make_rng(seed, stream)
    return synthesize_sources(cfg.sources, cfg.noise_power, cfg.signal, cfg.geometry, rng)


def infer_report(y: np.ndarray, cfg: ExperimentConfig, seed: int, stream: int = 0):
    """Run one chain and produce the detection/summary report dict + trace."""
    scfg = replace(cfg.sampler, seed=seed)
    trace = run_chain(y, cfg.model, scfg, stream=stream)
    detection = detect_order(trace, cfg.model.k_max)
    kappa = choose_kappa(trace, cfg.model.k_max)
    labeling = relabel(trace, max(kappa, 1)) if kappa >= 1 else None
    report = {
        "k_hat": detection.k_hat,
        "loss": detection.loss,
        "pmf": [float(v) for v in detection.posterior_pmf],
        "kappa": kappa,
        "components": summarize(trace, labeling) if labeling else [],
        "outlier_weight": float(labeling.outlier_weight) if labeling else None,
        "seed": seed,
    }
    return trace, report


@click.group()
def main():
    """Bayesian wideband DoA detection, estimation, and reconstruction."""


_config_opt = click.option("--config", "config_path", required=True, type=click.Path(exists=True))
_seed_opt = click.option("--seed", default=0, show_default=True, type=int)
_out_opt = click.option("--out", "out_dir", default=None, type=click.Path())
_profile_opt = click.option("--profile", type=click.Choice(["desk", "paper"]), default=None)


@main.command()
@_config_opt
@_seed_opt
@_out_opt
@_profile_opt
def simulate(config_path, seed, out_dir, profile):
    """Generate scenario data: data CSV plus ground-truth JSON."""
    cfg = load_config(config_path, profile)
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    sources, received = simulate_scenario(cfg, seed)
    _write_data_csv(out / "data.csv", received)
    np.savetxt(out / "sources.csv", sources.T, delimiter=",",
               header=",".join(f"source_{j}" for j in range(len(cfg.sources))),
               comments="", fmt=FLOAT_FMT)
    truth = {
        "k": len(cfg.sources),
        "doas_deg": [float(np.degrees(s.doa)) for s in cfg.sources],
        "snr_db": [float(s.snr_db) for s in cfg.sources],
        "band_hz": [list(s.band) for s in cfg.sources],
        "noise_power": cfg.noise_power,
        "seed": seed,
    }
    (out / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    _write_meta(out / "meta.json", seed)
    click.echo(f"wrote {out}/data.csv ({received.shape[1]} samples x {received.shape[0]} sensors)")


@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@_config_opt
@_seed_opt
@_out_opt
@_profile_opt
def infer(data_path, config_path, seed, out_dir, profile):
    """Run the sampler on a dataset; write trace JSONL and report JSON."""
    cfg = load_config(config_path, profile)
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    y = _read_data_csv(Path(data_path))
    if y.shape != (cfg.model.num_sensors, cfg.model.n_samples):
        raise click.ClickException(
            f"data shape {y.shape} does not match config "
            f"({cfg.model.num_sensors}, {cfg.model.n_samples})"
        )
    trace, report = infer_report(y, cfg, seed)
    trace.to_jsonl(out / "trace.jsonl")
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    _write_meta(out / "meta.json", seed)
    click.echo(f"k_hat = {report['k_hat']} (pmf {np.round(report['pmf'], 3).tolist()})")


@main.command()
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True))
@_config_opt
@_out_opt
@_profile_opt
def report(trace_path, config_path, out_dir, profile):
    """Recompute the detection/summary report from an existing trace."""
    cfg = load_config(config_path, profile)
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace = ChainTrace.from_jsonl(trace_path)
    detection = detect_order(trace, cfg.model.k_max)
    kappa = choose_kappa(trace, cfg.model.k_max)
    labeling = relabel(trace, max(kappa, 1)) if kappa >= 1 else None
    rep = {
        "k_hat": detection.k_hat,
        "loss": detection.loss,
        "pmf": [float(v) for v in detection.posterior_pmf],
        "kappa": kappa,
        "components": summarize(trace, labeling) if labeling else [],
        "outlier_weight": float(labeling.outlier_weight) if labeling else None,
    }
    (out / "report.json").write_text(json.dumps(rep, indent=2) + "\n")
    click.echo(f"k_hat = {rep['k_hat']}")


def _sweep_cell(args):
    """One (axis value, replication) cell; module-level so it pickles."""
    config_path, profile, axis_index, value, rep, seed = args
    cfg = load_config(config_path, profile)
    cell_cfg = apply_sweep_value(cfg, value)
    stream = axis_index * 100_003 + rep
    start = time.perf_counter()
    _, received = simulate_scenario(cell_cfg, seed, stream=2 * stream)
    _, rep_dict = infer_report(received, cell_cfg, seed, stream=2 * stream + 1)
    wall = time.perf_counter() - start
    k_true = len(cell_cfg.sources)
    return {
        "axis": value,
        "replication": rep,
        "k_true": k_true,
        "k_hat": rep_dict["k_hat"],
        "correct": int(rep_dict["k_hat"] == k_true),
        "wall_time": round(wall, 3),
    }


@main.command()
@_config_opt
@_seed_opt
@_out_opt
@_profile_opt
@click.option("--jobs", default=1, show_default=True, type=int)
def sweep(config_path, seed, out_dir, profile, jobs):
    """Simulate + infer over a sweep axis; append tidy CSV rows.

    Completed (axis, replication) pairs found in the output CSV are skipped,
    so interrupted sweeps resume where they left off.
    """
    cfg = load_config(config_path, profile)
    if cfg.sweep_axis is None:
        raise click.ClickException("config has no [experiment.sweep] section")
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "sweep.csv"

    done = set()
    if csv_path.exists():
        with open(csv_path) as fh:
            for row in csv.DictReader(fh):
                done.add((str(row["axis"]), int(row["replication"])))

    cells = [
        (config_path, profile, ai, value, rep, seed)
        for ai, value in enumerate(cfg.sweep_values)
        for rep in range(cfg.replications)
        if (str(value), rep) not in done
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, cells))
    else:
        rows = [_sweep_cell(c) for c in cells]
    rows.sort(key=lambda r: (cfg.sweep_values.index(r["axis"]), r["replication"]))

    fields = ["axis", "replication", "k_true", "k_hat", "correct", "wall_time"]
    new_file = not csv_path.exists()
    with open(csv_path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        if new_file:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)
    _write_meta(out / "sweep_meta.json", seed, {"axis": cfg.sweep_axis, "new_rows": len(rows)})
    click.echo(f"{len(rows)} new rows -> {csv_path}")


@main.command()
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@_config_opt
@_seed_opt
@_out_opt
@_profile_opt
def reconstruct(trace_path, data_path, config_path, seed, out_dir, profile):
    """Posterior source-signal reconstruction: per-source mean and 95% band."""
    cfg = load_config(config_path, profile)
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    y = _read_data_csv(Path(data_path))
    trace = ChainTrace.from_jsonl(trace_path)
    data = prepare_freq_data(y, cfg.model)
    k_hat = detect_order(trace, cfg.model.k_max).k_hat
    if k_hat < 1:
        raise click.ClickException("k_hat = 0; nothing to reconstruct")

    try:
        recon = reconstruct_from_trace(data, trace, k_hat, cfg.model, make_rng(seed, 9))
    except ValueError as exc:
        raise click.ClickException(str(exc))
    lower, upper = recon.credible_band()

    csv_path = out / "reconstruction.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "n", "mean", "lower", "upper"])
        for j in range(k_hat):
            for n in range(cfg.model.period):
                writer.writerow([
                    j, n,
                    FLOAT_FMT % recon.posterior_mean[j, n],
                    FLOAT_FMT % lower[j, n],
                    FLOAT_FMT % upper[j, n],
                ])
    _write_meta(
        out / "reconstruction_meta.json", seed,
        {"n_draws": int(recon.draws.shape[0]), "k_hat": k_hat, "dof": recon.dof},
    )
    click.echo(
        f"reconstructed {k_hat} source(s) from {recon.draws.shape[0]} samples -> {csv_path}"
    )


@main.command(name="mcmc-test")
@_seed_opt
@_out_opt
@click.option("--draws", default=10_000, show_default=True, type=int)
@click.option("--kernel", type=click.Choice(["correct", "broken-death"]), default="correct",
              show_default=True, help="broken-death drops the reverse-proposal term (self-check)")
def mcmc_test(seed, out_dir, draws, kernel):
    """Joint-distribution correctness test of the transition kernel.

    Exits nonzero when any corrected marginal p-value falls below 0.01.
    """
    rep = joint_distribution_test(
        cfg=tiny_test_config(),
        n_draws=draws,
        seed=seed,
        death_proposal_term=(kernel == "correct"),
    )
    payload = {
        "kernel": kernel,
        "n_draws": rep.n_draws,
        "p_values": rep.p_values,
        "corrected_p_values": rep.corrected_p_values,
        "threshold": rep.threshold,
        "passed": rep.passed,
        "seed": seed,
    }
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "mcmc_test.json").write_text(json.dumps(payload, indent=2) + "\n")
    for name, p in rep.p_values.items():
        flag = "ok" if rep.corrected_p_values[name] > rep.threshold else "FAIL"
        click.echo(f"{name:>6}: p = {p:.4g} (corrected {rep.corrected_p_values[name]:.4g}) {flag}")
    click.echo("PASS" if rep.passed else "FAIL")
    if not rep.passed:
        raise SystemExit(1)


if __name__ == "__main__":
    main()
