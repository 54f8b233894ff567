"""Experiment configuration: TOML (primary) or JSON scenario files.

Physical units are explicit in key names (spacing_m, sample_rate_hz, snr_db,
doa_deg, band_hz). Profiles rescale the scenario between a fast desk setup and
the full paper-style setup.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

import numpy as np

from .model import ModelConfig
from .sampler import SamplerConfig
from .signals import ArrayGeometry, FilterConfig, SourceSpec

PROFILES = {
    "desk": {"num_sensors": 8, "n_samples": 128, "sampler_samples": 2**11, "sampler_burnin": 2**9},
    "paper": {"num_sensors": 20, "n_samples": 256, "sampler_samples": 2**12, "sampler_burnin": 2**10},
}

SWEEP_AXES = ("snr_db", "n_samples", "separation_deg")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs: scenario, model, sampler, sweep."""

    geometry: ArrayGeometry
    signal: FilterConfig
    sources: tuple[SourceSpec, ...]
    noise_power: float
    model: ModelConfig
    sampler: SamplerConfig
    replications: int = 1
    sweep_axis: Optional[str] = None
    sweep_values: tuple = ()
    output_dir: str = "out"

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.sweep_axis is not None:
            if self.sweep_axis not in SWEEP_AXES:
                raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")
            if not self.sweep_values:
                raise ValueError("sweep requires at least one value")
            if self.sweep_axis == "n_samples":
                for v in self.sweep_values:
                    if int(v) <= 0 or int(v) % 2:
                        raise ValueError("n_samples sweep values must be positive even ints")
            if self.sweep_axis == "separation_deg" and len(self.sources) != 2:
                raise ValueError("separation sweep requires exactly two sources")


def _read_raw(path: Path) -> dict:
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    return tomllib.loads(text.decode())


def load_config(path, profile: Optional[str] = None) -> ExperimentConfig:
    """Load a TOML or JSON experiment file, optionally applying a profile."""
    raw = _read_raw(Path(path))
    overrides = PROFILES[profile] if profile else {}

    g = dict(raw.get("geometry", {}))
    geometry = ArrayGeometry(
        num_sensors=int(overrides.get("num_sensors", g.get("num_sensors", 8))),
        spacing=float(g.get("spacing_m", 0.5)),
        wave_speed=float(g.get("wave_speed_mps", 1500.0)),
        sample_rate=float(g.get("sample_rate_hz", 3000.0)),
    )

    s = dict(raw.get("signal", {}))
    n_samples = int(overrides.get("n_samples", s.get("n_samples", 128)))
    signal = FilterConfig(
        n_samples=n_samples,
        filter_len=int(s["filter_len"]) if "filter_len" in s else None,
        transition_param=float(s.get("transition_param", 0.25)),
        window=s.get("window", "rectangular"),
    )

    scen = dict(raw.get("scenario", {}))
    sources = tuple(
        SourceSpec(
            doa=float(np.radians(src["doa_deg"])),
            snr_db=float(src["snr_db"]),
            band=(float(src["band_hz"][0]), float(src["band_hz"][1])),
        )
        for src in scen.get("sources", [])
    )
    noise_power = float(scen.get("noise_power", 1.0))

    m = dict(raw.get("model", {}))
    model = ModelConfig(
        geometry=geometry,
        signal=signal,
        alpha=float(m.get("alpha", 0.0)),
        beta=float(m.get("beta", 0.0)),
        alpha_lambda=float(m.get("alpha_lambda", 0.6)),
        beta_lambda=float(m.get("beta_lambda", 0.1)),
        alpha_gamma=float(m.get("alpha_gamma", 1e-2)),
        beta_gamma=float(m.get("beta_gamma", 1e-2)),
        k_max=int(m["k_max"]) if "k_max" in m else None,
    )

    sa = dict(raw.get("sampler", {}))
    sampler = SamplerConfig(
        n_samples=int(overrides.get("sampler_samples", sa.get("n_samples", 2**11))),
        n_burnin=int(overrides.get("sampler_burnin", sa.get("n_burnin", 2**9))),
        seed=int(sa.get("seed", 0)),
        update_prob=float(sa.get("update_prob", 0.1)),
        slice_width=float(sa.get("slice_width", 2.0)),
        birth_gamma_logmean=float(sa.get("birth_gamma_logmean", 0.0)),
        birth_gamma_logsd=float(sa.get("birth_gamma_logsd", 2.0)),
    )

    e = dict(raw.get("experiment", {}))
    sweep = dict(e.get("sweep", {}))
    return ExperimentConfig(
        geometry=geometry,
        signal=signal,
        sources=sources,
        noise_power=noise_power,
        model=model,
        sampler=sampler,
        replications=int(e.get("replications", 1)),
        sweep_axis=sweep.get("axis"),
        sweep_values=tuple(sweep.get("values", ())),
        output_dir=e.get("output_dir", "out"),
    )


def apply_sweep_value(cfg: ExperimentConfig, value) -> ExperimentConfig:
    """Specialize the experiment to one point on the sweep axis."""
    axis = cfg.sweep_axis
    if axis == "snr_db":
        sources = tuple(replace(src, snr_db=float(value)) for src in cfg.sources)
        return replace(cfg, sources=sources)
    if axis == "n_samples":
        signal = FilterConfig(
            n_samples=int(value),
            transition_param=cfg.signal.transition_param,
            window=cfg.signal.window,
        )
        model = replace(cfg.model, signal=signal)
        return replace(cfg, signal=signal, model=model)
    if axis == "separation_deg":
        half = float(np.radians(value)) / 2.0
        center = float(np.mean([s.doa for s in cfg.sources]))
        sources = (
            replace(cfg.sources[0], doa=center - half),
            replace(cfg.sources[1], doa=center + half),
        )
        return replace(cfg, sources=sources)
    raise ValueError(f"no sweep axis set ({axis!r})")
