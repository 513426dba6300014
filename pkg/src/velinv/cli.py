"""Command-line front end: gen, simulate, train, eval, ablate, render.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Errors also emit one machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import core, forward, lab, net, render, scene
from .config import DATA_ROOT_ENV, ConfigError, RunConfig, resolve
from .core import ContainerError
from .features import FeatureConfig, assemble_input, n_channels, subset_indices
from .forward import SimulationError
from .net import NetworkConfig, TrainingDivergenceError


class DataError(Exception):
    """Missing or unreadable input data."""


def _progress(label):
    def cb(done, total):
        print(f"\r{label}: {done}/{total}", end="" if done < total else "\n", flush=True)

    return cb


def _load_manifest(data_root: Path) -> scene.DatasetManifest:
    path = Path(data_root) / "manifest.json"
    if not path.exists():
        raise DataError(f"no dataset manifest at {path}; run 'velinv gen' first")
    return scene.DatasetManifest.load(path)


def _resolved(args) -> RunConfig:
    overrides = {}
    for key in ("seed", "n_samples", "jobs", "data_root", "out_dir"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "epochs", None) is not None:
        overrides.setdefault("train", {})["epochs_max"] = args.epochs
    if getattr(args, "lr", None) is not None:
        overrides.setdefault("train", {})["lr"] = args.lr
    if getattr(args, "reg_lambda", None) is not None:
        overrides.setdefault("train", {})["reg_lambda"] = args.reg_lambda
    if getattr(args, "fourier", False):
        overrides.setdefault("features", {})["use_fourier"] = True
    if getattr(args, "shot_subset", None) is not None:
        overrides.setdefault("features", {})["shot_subset"] = args.shot_subset
    if getattr(args, "bootstrap", None) is not None:
        overrides.setdefault("ablation", {})["bootstrap_count"] = args.bootstrap
    if getattr(args, "shots", None) is not None:
        overrides.setdefault("ablation", {})["shots"] = [int(s) for s in args.shots.split(",")]
    return resolve(args.preset, args.config, overrides)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _resolved(args)
    manifest = scene.gen_dataset(
        cfg.n_samples, cfg.scene, cfg.grid, cfg.acq, cfg.data_root,
        src=cfg.source, rho0=cfg.rho0, jobs=cfg.jobs, order=cfg.solver_order,
        progress=_progress("generating"),
    )
    counts = {s: len(manifest.ids_for_split(s)) for s in scene.SPLIT_NAMES}
    print(f"dataset at {cfg.data_root}: {len(manifest.samples)} samples, splits {counts}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _resolved(args)
    vm, _ = core.load_velocity_model(args.model)
    mat = core.build_material_fields(vm, cfg.rho0)
    grid = vm.grid
    emitter = args.emitter if args.emitter is not None else grid.nx // 2
    acq = forward.AcquisitionSpec(
        emitter_columns=(emitter,),
        receiver_columns=tuple(range(grid.nx)),
        t_total=cfg.acq.t_total,
        dt_record=cfg.acq.dt_record,
        cfl=cfg.acq.cfl,
    )
    snap_times = [float(t) for t in args.snapshots.split(",")] if args.snapshots else None
    src = cfg.source.moved_to(emitter)
    shot, snaps = forward.simulate_shot(vm, mat, src, acq, snapshot_times=snap_times,
                                        order=cfg.solver_order)
    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = core.SeismicRecord(shots=(shot,), model_id=Path(args.model).stem)
    sgr = out_dir / (Path(args.model).stem + "_shot.sgr")
    core.save_record(sgr, record)
    print(f"record: {sgr}")
    if snaps:
        snp = out_dir / (Path(args.model).stem + "_snapshots.snp")
        core.write_arrays(snp, {"vmag": np.stack([f for _, f in snaps])},
                          kind="snapshots",
                          meta={"times": [t for t, _ in snaps],
                                "grid": {"nx": grid.nx, "ny": grid.ny,
                                         "dx": grid.dx, "dy": grid.dy}})
        print(f"snapshots: {snp}")
    return 0


def _train_setup(cfg: RunConfig, manifest) -> tuple[FeatureConfig, NetworkConfig]:
    n_emitters = len(manifest.acquisition.get("emitter_columns", [])) or len(cfg.acq.emitter_columns)
    feature_cfg = FeatureConfig(
        resample_height=int(manifest.grid.get("ny", cfg.grid.ny)),
        use_fourier=cfg.features.use_fourier,
        shot_subset=cfg.features.shot_subset,
    )
    selected = len(subset_indices(n_emitters, feature_cfg.shot_subset))
    net_cfg = NetworkConfig(in_channels=n_channels(selected, feature_cfg.use_fourier),
                            base_width=cfg.net_base_width, depth=cfg.net_depth)
    return feature_cfg, net_cfg


def cmd_train(args) -> int:
    cfg = _resolved(args)
    manifest = _load_manifest(cfg.data_root)
    feature_cfg, net_cfg = _train_setup(cfg, manifest)
    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def log(epoch, loss_val, val_ssim):
        print(f"epoch {epoch:3d}: loss {loss_val:.6f}  val SSIM {val_ssim:.4f}", flush=True)

    if args.dump_features:
        dump_dir = out_dir / "features"
        dump_dir.mkdir(parents=True, exist_ok=True)
        ids = manifest.ids_for_split("train") + manifest.ids_for_split("val")
        for sid, (x, _) in net.load_dataset_arrays(manifest, ids, feature_cfg,
                                                   cfg.norm).items():
            core.write_arrays(dump_dir / f"{sid}.ten", {"tensor": x}, kind="input_tensor",
                              meta={"sample_id": sid,
                                    "shot_subset": feature_cfg.shot_subset,
                                    "use_fourier": feature_cfg.use_fourier})
        print(f"feature tensors dumped to {dump_dir}")

    weights, history = net.train(manifest, feature_cfg, net_cfg, cfg.train,
                                 norm=cfg.norm, log=log)
    ckpt = out_dir / "checkpoint.wts"
    net.save_weights(ckpt, weights, feature_cfg, cfg.norm,
                     extra={"selected_epoch": history.selected_epoch})
    net.save_history_csv(out_dir / "curves.csv", history)
    render.save_training_curves(out_dir / "curves.png", history)
    print(f"checkpoint: {ckpt} (best epoch {history.selected_epoch})")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolved(args)
    manifest = _load_manifest(cfg.data_root)
    weights, meta = net.load_weights(args.checkpoint)
    fc = meta.get("feature_config")
    if fc is None:
        raise DataError(f"checkpoint {args.checkpoint} lacks a feature_config entry")
    feature_cfg = FeatureConfig(resample_height=int(fc["resample_height"]),
                                use_fourier=bool(fc["use_fourier"]),
                                shot_subset=str(fc["shot_subset"]))
    ids = manifest.ids_for_split(args.split)
    if not ids:
        raise DataError(f"split {args.split!r} is empty")
    data = net.load_dataset_arrays(manifest, ids, feature_cfg, cfg.norm)
    mean_ssim, mean_mse = net.evaluate_split(weights, data, ids, cfg.train.batch_size)
    metrics = {"checkpoint": str(args.checkpoint), "split": args.split, "n_samples": len(ids),
               "mean_ssim": mean_ssim, "mean_mse": mean_mse}
    print(json.dumps(metrics, indent=1, sort_keys=True))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.json", "w") as f:
            json.dump(metrics, f, indent=1, sort_keys=True)
            f.write("\n")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolved(args)
    manifest = _load_manifest(cfg.data_root)
    setup = lab.TrainerParams(
        resample_height=int(manifest.grid.get("ny", cfg.grid.ny)),
        base_width=cfg.net_base_width,
        depth=cfg.net_depth,
        epochs_max=cfg.train.epochs_max,
        lr=cfg.train.lr,
        batch_size=cfg.train.batch_size,
        norm=cfg.norm,
    )
    matrix = lab.full_matrix(cfg.ablation_shots, cfg.bootstrap_count, cfg.seed)
    out_dir = Path(args.out_dir or cfg.out_dir)

    def log(msg):
        print(msg, flush=True)

    result = lab.run_ablation(matrix, manifest, setup, out_dir, log=log)
    n_valid = sum(p.valid for p in result.populations)
    print(f"report: {out_dir / 'report'} ({len(result.populations)} populations, "
          f"{n_valid} valid)")
    return 0


def _load_ensemble(ensemble_dir) -> list:
    paths = sorted(Path(ensemble_dir).glob("*.wts"))
    if not paths:
        raise DataError(f"no .wts checkpoints under {ensemble_dir}")
    return [net.load_weights(p)[0] for p in paths]


def cmd_render(args) -> int:
    cfg = _resolved(args)
    out_dir = Path(args.out_dir or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    made = []

    sample = None
    vm = None
    if args.model:
        vm, _ = core.load_velocity_model(args.model)
        made.append(render.save_velocity_png(out_dir / (Path(args.model).stem + "_model.png"),
                                             vm.cp, vm.grid))

    if args.snapshots:
        arrays, meta = core.read_arrays(args.snapshots, expect_kind="snapshots")
        g = meta["grid"]
        sgrid = core.GridSpec(nx=int(g["nx"]), ny=int(g["ny"]), dx=float(g["dx"]), dy=float(g["dy"]))
        snaps = list(zip(meta["times"], arrays["vmag"]))
        made.append(render.save_snapshot_panel(out_dir / "snapshots.png", snaps, sgrid))

    if args.report:
        with open(Path(args.report) / "summary.json") as f:
            summary = json.load(f)
        values = {}
        for pop in summary["populations"]:
            c = pop["config"]
            values[(c["shots"], c["fourier"], c["regularization"])] = pop["test_ssims"]
        shot_counts = sorted({k[0] for k in values})
        made.extend(render.save_ssim_histograms(out_dir, values, shot_counts))

    if args.profiles:
        if not args.model or not args.checkpoint:
            raise ConfigError("--profiles needs both --model and --checkpoint")
        xs = [float(x) for x in args.profiles.split(",")]
        sample = core.load_sample(Path(args.model).with_suffix(""))
        weights, meta = net.load_weights(args.checkpoint)
        fc = meta["feature_config"]
        feature_cfg = FeatureConfig(resample_height=int(fc["resample_height"]),
                                    use_fourier=bool(fc["use_fourier"]),
                                    shot_subset=str(fc["shot_subset"]))
        nm = meta.get("normalization", {})
        norm = core.NormalizationSpec(float(nm.get("vmin", cfg.norm.vmin)),
                                      float(nm.get("vmax", cfg.norm.vmax)))
        x_tensor = assemble_input(sample.record, feature_cfg)
        single = core.denormalize_velocity(net.forward_pass(weights, x_tensor), norm)
        made.append(render.save_velocity_png(out_dir / "prediction_single.png",
                                             single, sample.model.grid))
        ens_pred = None
        if args.ensemble_dir:
            members = _load_ensemble(args.ensemble_dir)
            ens_pred = core.denormalize_velocity(lab.ensemble_predict(members, x_tensor), norm)
            made.append(render.save_velocity_png(out_dir / "prediction_ensemble.png",
                                                 ens_pred, sample.model.grid))
        grid = sample.model.grid
        depth_m = np.arange(grid.ny) * grid.dy
        for x_m in xs:
            col = min(max(int(round(x_m / grid.dx)), 0), grid.nx - 1)
            csv_path, png_path = render.save_profile(
                out_dir / f"profile_x{int(round(x_m)):04d}",
                x_m, depth_m,
                truth=np.asarray(sample.model.cp[:, col], dtype=np.float64),
                single=np.asarray(single[:, col]),
                ensemble=None if ens_pred is None else np.asarray(ens_pred[:, col]),
            )
            made.extend([csv_path, png_path])

    if not made:
        raise ConfigError("render: nothing to do; pass --model, --snapshots, --report "
                          "or --profiles")
    for p in made:
        print(f"wrote {p}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", default="desk", choices=("paper", "desk"),
                   help="parameter preset (default: desk)")
    p.add_argument("--config", default=None, help="TOML config file overriding the preset")
    p.add_argument("--data", dest="data_root", default=None,
                   help=f"dataset root (default: ${DATA_ROOT_ENV} or ./data)")
    p.add_argument("--out", dest="out_dir", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--jobs", type=int, default=None, help="parallel worker cap")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="velinv",
        description="Acoustic forward modeling and convolutional velocity inversion workbench",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset with simulated records")
    _add_common(p)
    p.add_argument("--n", dest="n_samples", type=int, default=None, help="sample count override")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("simulate", help="forward-model one velocity model file")
    _add_common(p)
    p.add_argument("model", help="path to a .svm velocity model")
    p.add_argument("--emitter", type=int, default=None, help="emitter column (default: center)")
    p.add_argument("--snapshots", default=None,
                   help="comma-separated times (s) for |v| snapshot export")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a single network on the dataset")
    _add_common(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--reg-lambda", dest="reg_lambda", type=float, default=None,
                   help="Sobel smoothness weight (0 disables)")
    p.add_argument("--fourier", action="store_true", help="add Fourier channels")
    p.add_argument("--shot-subset", dest="shot_subset", default=None,
                   choices=("single", "triple", "all"))
    p.add_argument("--dump-features", dest="dump_features", action="store_true",
                   help="dump assembled input tensors for debugging")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _add_common(p)
    p.add_argument("checkpoint", help="path to a .wts checkpoint")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the bootstrap ablation matrix and report")
    _add_common(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--bootstrap", type=int, default=None, help="instances per population")
    p.add_argument("--shots", default=None, help="comma-separated shot counts, e.g. 1,3")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("render", help="render figures from models, snapshots and reports")
    _add_common(p)
    p.add_argument("--model", default=None, help=".svm file for a velocity heat map")
    p.add_argument("--snapshots", default=None, help=".snp file for a wavefield panel")
    p.add_argument("--report", default=None, help="report directory for SSIM histograms")
    p.add_argument("--checkpoint", default=None, help=".wts checkpoint for predictions")
    p.add_argument("--ensemble-dir", dest="ensemble_dir", default=None,
                   help="directory of .wts members for ensemble predictions")
    p.add_argument("--profiles", default=None,
                   help="comma-separated x positions (m) for vertical profiles")
    p.set_defaults(func=cmd_render)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        _fail("config", e)
        return 2
    except (DataError, FileNotFoundError, ContainerError, KeyError) as e:
        _fail("data", e)
        return 3
    except (SimulationError, TrainingDivergenceError, AssertionError) as e:
        _fail("numerical", e)
        return 4


def _fail(kind: str, err: Exception) -> None:
    print(json.dumps({"error": kind, "message": str(err)}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
