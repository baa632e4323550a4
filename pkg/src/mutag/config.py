"""Run configuration: schema, defaults, YAML loading, canonical hashing.

A run is controlled by a single YAML file whose structure mirrors the
dataclasses below.  Unknown keys are rejected so typos cannot silently
fall back to defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import yaml

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for unknown keys, bad types, or invariant violations."""


@dataclass
class ShellConfig:
    """Hollow rectangular shell, attenuation-only (cryostat cans, chip box)."""

    material: str = "al"
    cavity_half_x_cm: float = 3.0
    cavity_half_y_cm: float = 3.0
    cavity_half_z_cm: float = 1.2
    wall_cm: float = 0.1


@dataclass
class GeometryConfig:
    si_half_thickness_cm: float = 0.02625  # 525 um wafers
    top_half_x_cm: float = 2.25
    top_half_y_cm: float = 2.25
    center_half_x_cm: float = 2.0
    center_half_y_cm: float = 1.0
    bottom_half_x_cm: float = 2.25
    bottom_half_y_cm: float = 2.25
    layer_gap_cm: float = 0.45  # vertical clearance between wafer faces
    center_offset_x_cm: float = 0.0
    center_offset_y_cm: float = 0.0
    box_lateral_wall_cm: float = 0.5
    # 0.42 cm: the thickest closed lid that still fits the 0.45 cm clearance
    box_vertical_wall_cm: float = 0.42
    box_clearance_xy_cm: float = 0.05
    box_cavity_half_z_cm: float = 0.055
    shield_shells: list[ShellConfig] = field(
        default_factory=lambda: [
            ShellConfig("al", 3.0, 3.0, 1.2, 0.10),
            ShellConfig("cu", 3.25, 3.25, 1.45, 0.05),
            ShellConfig("nife", 3.5, 3.5, 1.7, 0.05),
        ]
    )


@dataclass
class AngularConfig:
    """Zenith intensity model for sea-level muons.

    kind "cos2": I(theta) ~ cos^2(theta).
    kind "parametric": I(theta) ~ (1-f)*cos^n(theta) + f, an effective
    sea-level shape; the defaults are calibrated so a compact three-wafer
    stack reproduces reference tagging-efficiency and coincidence ratios.
    """

    kind: str = "parametric"
    zenith_exponent: float = 1.0
    isotropic_fraction: float = 0.15


@dataclass
class MuonEnergyConfig:
    """dN/dE ~ (E + e0)^-index above e_min; mean ~= e0/(index-2) ~ 4 GeV."""

    e0_gev: float = 2.8
    spectral_index: float = 2.7
    e_min_gev: float = 0.1


@dataclass
class GammaContinuumConfig:
    weight: float = 0.85
    slope_mev: float = 0.30  # exp(-E/slope)
    e_min_mev: float = 0.03
    e_max_mev: float = 2.615


@dataclass
class SourcesConfig:
    muon_flux_per_cm2_s: float = 0.01389  # ~0.83 /cm^2/min through a horizontal plane
    gamma_flux_per_cm2_s: float = 13.5  # isotropic fluence rate
    hemisphere_radius_cm: float = 6.0
    gamma_shell_radius_cm: float = 6.0
    angular: AngularConfig = field(default_factory=AngularConfig)
    muon_energy: MuonEnergyConfig = field(default_factory=MuonEnergyConfig)
    # line energy (MeV), weight pairs: K-40 and Tl-208
    gamma_lines_mev: list[list[float]] = field(
        default_factory=lambda: [[1.461, 0.10], [2.615, 0.05]]
    )
    gamma_continuum: GammaContinuumConfig = field(default_factory=GammaContinuumConfig)


@dataclass
class TransportConfig:
    detection_threshold_kev: float = 1.0
    landau_truncation_mev: float = 10.0
    reference_betagamma: float = 38.0  # ~4 GeV/c muon, MIP regime
    retrack_compton: bool = True
    max_scatter_generations: int = 3
    batch_rays: int = 1_000_000


@dataclass
class DaqConfig:
    sampling_rate_hz: float = 100_000.0
    record_samples: int = 2400  # 24 ms
    pre_trigger_fraction: float = 0.25
    tau_rise_us: float = 50.0
    tau_decay_us: float = 500.0
    gain_sigma_per_kev: float = 40.0 / 150.0  # 150 keV -> 40 sigma
    white_noise_rms: float = 1.0
    low_freq_knee_hz: float = 0.0  # 0 disables the 1/f component
    trigger_threshold_sigma: float = 5.0
    bandpass_low_hz: float = 20.0
    bandpass_high_hz: float = 2000.0
    noise_record_interval_s: float = 10.0
    template_samples: int = 2048
    chunk_samples: int = 1_048_576  # must be a multiple of the 65536-sample noise block


@dataclass
class AnalysisConfig:
    selection_threshold_sigma: float = 5.0
    coincidence_window_us: float = 170.0  # half-width; used when fit is off or fails
    fit_window: bool = True
    delay_bin_us: float = 20.0
    delay_half_range_us: float = 3000.0
    sideband_low_us: float = -2500.0
    sideband_high_us: float = -400.0
    veto_windows_ms: list[float] = field(default_factory=lambda: [1.0, 5.0, 25.0])
    min_noise_records: int = 20
    psd_veto_sigma: float = 5.0


@dataclass
class RunConfig:
    seed: int = 20260822
    workers: int = 1
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    sources: SourcesConfig = field(default_factory=SourcesConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    daq: DaqConfig = field(default_factory=DaqConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)


def paper_defaults() -> RunConfig:
    """Reference configuration with all documented defaults."""
    return RunConfig()


_LIST_ITEM_TYPES = {"shield_shells": ShellConfig}


def _coerce(value: Any, target: Any, path: str) -> Any:
    if isinstance(target, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected bool, got {type(value).__name__}")
        return value
    if isinstance(target, int) and not isinstance(target, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected int, got {type(value).__name__}")
        return value
    if isinstance(target, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {type(value).__name__}")
        return float(value)
    if isinstance(target, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {type(value).__name__}")
        return value
    raise ConfigError(f"{path}: unsupported value type")


def _merge_into(obj: Any, data: dict, path: str = "") -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in fields:
            raise ConfigError(f"unknown config key: {where}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _merge_into(current, value, where)
        elif isinstance(current, list):
            if not isinstance(value, list):
                raise ConfigError(f"{where}: expected a list")
            item_cls = _LIST_ITEM_TYPES.get(key)
            if item_cls is not None:
                items = []
                for i, entry in enumerate(value):
                    item = item_cls()
                    _merge_into(item, entry, f"{where}[{i}]")
                    items.append(item)
                setattr(obj, key, items)
            else:
                setattr(obj, key, _coerce_plain_list(value, current, where))
        else:
            setattr(obj, key, _coerce(value, current, where))
    return obj


def _coerce_plain_list(value: list, template: list, path: str) -> list:
    # numeric lists, possibly nested one level (gamma line pairs)
    out = []
    for i, entry in enumerate(value):
        if isinstance(entry, list):
            out.append([_coerce(x, 0.0, f"{path}[{i}][{j}]") for j, x in enumerate(entry)])
        else:
            out.append(_coerce(entry, 0.0, f"{path}[{i}]"))
    return out


def load_config(path: str | None) -> RunConfig:
    """Load a YAML config over the defaults; strict on unknown keys."""
    cfg = paper_defaults()
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        _merge_into(cfg, data)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    g, s, t, d, a = cfg.geometry, cfg.sources, cfg.transport, cfg.daq, cfg.analysis
    if g.si_half_thickness_cm <= 0:
        raise ConfigError("geometry.si_half_thickness_cm must be > 0")
    if g.layer_gap_cm <= 0:
        raise ConfigError("geometry.layer_gap_cm must be > 0")
    if s.muon_flux_per_cm2_s < 0 or s.gamma_flux_per_cm2_s < 0:
        raise ConfigError("sources fluxes must be >= 0")
    if s.angular.kind not in ("cos2", "parametric"):
        raise ConfigError("sources.angular.kind must be 'cos2' or 'parametric'")
    if not 0.0 <= s.angular.isotropic_fraction <= 1.0:
        raise ConfigError("sources.angular.isotropic_fraction must be in [0, 1]")
    if s.muon_energy.spectral_index <= 2.0:
        raise ConfigError("sources.muon_energy.spectral_index must be > 2")
    weights = [w for _, w in s.gamma_lines_mev] + [s.gamma_continuum.weight]
    if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
        raise ConfigError("gamma line weights plus continuum weight must sum to 1")
    if not s.gamma_continuum.e_min_mev < s.gamma_continuum.e_max_mev:
        raise ConfigError("gamma continuum energy bounds out of order")
    if s.gamma_continuum.e_min_mev < 0.02:
        raise ConfigError("gamma continuum floor below the 0.02 MeV attenuation domain")
    if t.detection_threshold_kev < 0:
        raise ConfigError("transport.detection_threshold_kev must be >= 0")
    if t.max_scatter_generations < 0:
        raise ConfigError("transport.max_scatter_generations must be >= 0")
    if not 0.0 < d.pre_trigger_fraction < 1.0:
        raise ConfigError("daq.pre_trigger_fraction must be in (0, 1)")
    if d.tau_rise_us >= d.tau_decay_us:
        raise ConfigError("daq.tau_rise_us must be < daq.tau_decay_us")
    if d.record_samples <= 0 or d.template_samples <= 0:
        raise ConfigError("daq record/template sample counts must be > 0")
    if d.chunk_samples % 65536 != 0 or d.chunk_samples <= 0:
        raise ConfigError("daq.chunk_samples must be a positive multiple of 65536")
    if not 0 < d.bandpass_low_hz < d.bandpass_high_hz < d.sampling_rate_hz / 2:
        raise ConfigError("daq band-pass corners must satisfy 0 < low < high < Nyquist")
    if a.sideband_low_us >= a.sideband_high_us:
        raise ConfigError("analysis sideband bounds out of order")
    if a.coincidence_window_us <= 0 or a.delay_bin_us <= 0:
        raise ConfigError("analysis window and bin width must be > 0")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")


def config_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def canonical_json(cfg: RunConfig) -> str:
    """Stable serialization used for hashing and the manifest."""
    payload = {"schema_version": SCHEMA_VERSION, "config": config_dict(cfg)}
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def write_reference_config(path: str) -> None:
    """Write the default configuration as a commented-free YAML file."""
    with open(path, "w") as fh:
        yaml.safe_dump(config_dict(paper_defaults()), fh, sort_keys=False)
