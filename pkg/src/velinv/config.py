"""Run configuration: presets, TOML config files and flag overrides.

Two presets resolve every parameter: ``paper`` (300x200 grid, 9 emitters,
2 s records, 1600 samples, 50 epochs) and ``desk`` (96x64 grid, 5
emitters, 1.2 s, 256 samples, 15 epochs, narrower network) sized so the
whole pipeline runs on a workstation CPU. Precedence: preset < config
file < command-line flags.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import DEFAULT_RHO0, GridSpec, NormalizationSpec
from .features import FeatureConfig
from .forward import AcquisitionSpec, SourceSpec
from .net import TrainConfig
from .scene import SceneParams

DATA_ROOT_ENV = "VELINV_DATA_ROOT"


class ConfigError(Exception):
    """Invalid or unresolvable run configuration."""


PRESETS = {
    "paper": {
        "seed": 20240101,
        "n_samples": 1600,
        "jobs": 1,
        "rho0": DEFAULT_RHO0,
        "solver_order": 1,
        "grid": {"nx": 300, "ny": 200, "dx": 10.0, "dy": 10.0},
        "acquisition": {"n_emitters": 9, "t_total": 2.0, "dt_record": 0.01, "cfl": 0.5},
        "source": {"f0": 15.0, "amplitude": 1.0e6},
        "scene": {
            "n_layers": [2, 5],
            "layer_velocity_range": [2500.0, 4000.0],
            "inclusion_velocity": 4500.0,
            "inclusion_area_fraction": [0.05, 0.25],
            "interface_undulation_amplitude": 60.0,
        },
        "features": {"use_fourier": False, "shot_subset": "all"},
        "net": {"base_width": 32, "depth": 4},
        "train": {"epochs_max": 50, "lr": 1e-4, "batch_size": 10, "reg_lambda": 0.0},
        "ablation": {"shots": [1, 3, 9], "bootstrap_count": 10},
        "render": {"profiles": [750.0, 1500.0, 2250.0]},
    },
    "desk": {
        "seed": 20240101,
        "n_samples": 256,
        "jobs": 1,
        "rho0": DEFAULT_RHO0,
        "solver_order": 1,
        "grid": {"nx": 96, "ny": 64, "dx": 10.0, "dy": 10.0},
        "acquisition": {"n_emitters": 5, "t_total": 1.2, "dt_record": 0.01, "cfl": 0.5},
        "source": {"f0": 15.0, "amplitude": 1.0e6},
        "scene": {
            "n_layers": [2, 5],
            "layer_velocity_range": [2500.0, 4000.0],
            "inclusion_velocity": 4500.0,
            "inclusion_area_fraction": [0.05, 0.25],
            "interface_undulation_amplitude": 60.0,
        },
        "features": {"use_fourier": False, "shot_subset": "all"},
        "net": {"base_width": 16, "depth": 4},
        # 15 epochs leave ~270 updates; 1e-4 cannot move a fresh net that far
        "train": {"epochs_max": 15, "lr": 2e-3, "batch_size": 10, "reg_lambda": 0.0},
        "ablation": {"shots": [1, 3], "bootstrap_count": 5},
        "render": {"profiles": [240.0, 480.0, 720.0]},
    },
}


def equidistant_columns(nx: int, n: int) -> tuple[int, ...]:
    """n columns spread over [0, nx-1] inclusive of both ends."""
    if n < 1 or n > nx:
        raise ConfigError(f"cannot place {n} emitters on {nx} columns")
    if n == 1:
        return (nx // 2,)
    cols = np.rint(np.linspace(0, nx - 1, n)).astype(int)
    return tuple(int(c) for c in cols)


@dataclass
class RunConfig:
    preset: str
    seed: int
    n_samples: int
    jobs: int
    rho0: float
    solver_order: int
    data_root: Path
    out_dir: Path
    grid: GridSpec
    acq: AcquisitionSpec
    scene: SceneParams
    source: SourceSpec
    features: FeatureConfig
    net_base_width: int
    net_depth: int
    train: TrainConfig
    ablation_shots: tuple
    bootstrap_count: int
    render_profiles: tuple
    norm: NormalizationSpec = NormalizationSpec()


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse config file {path}: {e}") from None


def resolve(preset: str = "desk", config_path=None, overrides: dict | None = None) -> RunConfig:
    """Materialize a RunConfig from preset, optional TOML file and overrides.

    ``overrides`` is a flat-or-nested dict following the preset schema;
    scalar keys (seed, n_samples, ...) may also arrive at top level from
    command-line flags.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    doc = dict(PRESETS[preset])
    if config_path:
        file_doc = load_config_file(config_path)
        preset_in_file = file_doc.pop("preset", None)
        if preset_in_file:
            if preset_in_file not in PRESETS:
                raise ConfigError(f"unknown preset {preset_in_file!r} in {config_path}")
            doc = dict(PRESETS[preset_in_file])
            preset = preset_in_file
        doc = _deep_merge(doc, file_doc)
    if overrides:
        doc = _deep_merge(doc, {k: v for k, v in overrides.items() if v is not None})

    try:
        grid = GridSpec(**{k: doc["grid"][k] for k in ("nx", "ny", "dx", "dy")})
        acq_doc = doc["acquisition"]
        emitters = acq_doc.get("emitter_columns") or equidistant_columns(
            grid.nx, int(acq_doc["n_emitters"])
        )
        receivers = acq_doc.get("receiver_columns") or tuple(range(grid.nx))
        acq = AcquisitionSpec(
            emitter_columns=tuple(emitters),
            receiver_columns=tuple(receivers),
            t_total=float(acq_doc["t_total"]),
            dt_record=float(acq_doc["dt_record"]),
            cfl=float(acq_doc.get("cfl", 0.5)),
        )
        acq.validate_against(grid)
        sc = doc["scene"]
        scene = SceneParams(
            n_layers=tuple(sc["n_layers"]),
            layer_velocity_range=tuple(sc["layer_velocity_range"]),
            inclusion_velocity=float(sc["inclusion_velocity"]),
            inclusion_area_fraction=tuple(sc["inclusion_area_fraction"]),
            interface_undulation_amplitude=float(sc["interface_undulation_amplitude"]),
            rng_seed=int(doc["seed"]),
        )
        src = SourceSpec(column_index=acq.emitter_columns[len(acq.emitter_columns) // 2],
                         f0=float(doc["source"]["f0"]),
                         amplitude=float(doc["source"]["amplitude"]))
        feats = FeatureConfig(
            resample_height=int(doc["features"].get("resample_height", grid.ny)),
            use_fourier=bool(doc["features"]["use_fourier"]),
            shot_subset=str(doc["features"]["shot_subset"]),
        )
        train = TrainConfig(
            epochs_max=int(doc["train"]["epochs_max"]),
            lr=float(doc["train"]["lr"]),
            batch_size=int(doc["train"]["batch_size"]),
            reg_lambda=float(doc["train"]["reg_lambda"]),
            seed=int(doc["seed"]),
        )
        data_root = Path(doc.get("data_root") or os.environ.get(DATA_ROOT_ENV) or "data")
        out_dir = Path(doc.get("out_dir") or "out")
        cfg = RunConfig(
            preset=preset,
            seed=int(doc["seed"]),
            n_samples=int(doc["n_samples"]),
            jobs=int(doc["jobs"]),
            rho0=float(doc["rho0"]),
            solver_order=int(doc["solver_order"]),
            data_root=data_root,
            out_dir=out_dir,
            grid=grid,
            acq=acq,
            scene=scene,
            source=src,
            features=feats,
            net_base_width=int(doc["net"]["base_width"]),
            net_depth=int(doc["net"]["depth"]),
            train=train,
            ablation_shots=tuple(int(s) for s in doc["ablation"]["shots"]),
            bootstrap_count=int(doc["ablation"]["bootstrap_count"]),
            render_profiles=tuple(float(x) for x in doc["render"]["profiles"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    if cfg.solver_order not in (1, 2):
        raise ConfigError(f"solver_order must be 1 or 2, got {cfg.solver_order}")
    return cfg
