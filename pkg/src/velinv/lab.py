"""Experiment orchestration: bootstrap populations, ensembles, the ablation
matrix and its significance pipeline, and report emission.

A population is one ablation configuration trained ``bootstrap_count``
times, each instance on a with-replacement resample of the training fold
(validation and test folds stay fixed). Populations persist their
checkpoints and per-instance results incrementally, so an interrupted
matrix resumes without retraining completed instances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import net, render, stats
from .core import NormalizationSpec, derive_seed, load_sample, normalize_velocity
from .features import FeatureConfig, assemble_input, n_channels, subset_indices
from .net import NetworkConfig, TrainConfig, TrainingDivergenceError
from .scene import DatasetManifest

ALPHA = 0.05
MIN_SURVIVORS = 3
SHOT_SUBSET_BY_COUNT = {1: "single", 3: "triple", 9: "all"}


@dataclass(frozen=True)
class AblationConfig:
    shots: int
    use_fourier: bool
    use_reg: bool
    bootstrap_count: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.shots not in SHOT_SUBSET_BY_COUNT:
            raise ValueError(f"shots must be one of {sorted(SHOT_SUBSET_BY_COUNT)}, got {self.shots}")
        if self.bootstrap_count < 1:
            raise ValueError("bootstrap_count must be >= 1")

    @property
    def subset(self) -> str:
        return SHOT_SUBSET_BY_COUNT[self.shots]

    @property
    def key(self) -> str:
        return f"shots{self.shots}_fourier{int(self.use_fourier)}_reg{int(self.use_reg)}"


def full_matrix(shot_counts=(1, 3, 9), bootstrap_count: int = 10, seed: int = 0) -> list:
    """The ablation cross product, ordered (shots, fourier, regularization)."""
    rows = []
    for shots in shot_counts:
        for fourier, reg in ((False, False), (True, False), (False, True), (True, True)):
            rows.append(AblationConfig(shots, fourier, reg, bootstrap_count, seed))
    return rows


@dataclass(frozen=True)
class TrainerParams:
    """Everything a population needs besides its ablation switches."""

    resample_height: int
    base_width: int = 32
    depth: int = 4
    epochs_max: int = 50
    lr: float = 1e-4
    batch_size: int = 10
    reg_lambda_on: float = net.SOBEL_REG_DEFAULT
    norm: NormalizationSpec = NormalizationSpec()


@dataclass
class PopulationResult:
    config: AblationConfig
    test_ssims: list
    test_mses: list
    checkpoint_paths: list
    instance_seeds: list
    failures: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.test_ssims))

    @property
    def std(self) -> float:
        return float(np.std(self.test_ssims, ddof=1)) if len(self.test_ssims) > 1 else 0.0

    @property
    def valid(self) -> bool:
        return len(self.test_ssims) >= MIN_SURVIVORS


@dataclass
class EnsembleResult:
    config: AblationConfig
    member_paths: list
    ensemble_ssim: float
    ensemble_mse: float
    mean_member_mse: float


def bootstrap_resample(train_ids, seed: int) -> list:
    """Sample with replacement to the original training-fold size."""
    train_ids = list(train_ids)
    if not train_ids:
        raise ValueError("cannot resample an empty training fold")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(train_ids), size=len(train_ids))
    return [train_ids[i] for i in picks]


class FeatureStore:
    """Loads each sample once and assembles input tensors per feature config."""

    def __init__(self, manifest: DatasetManifest, resample_height: int,
                 norm: NormalizationSpec = NormalizationSpec()):
        self.manifest = manifest
        self.resample_height = resample_height
        self.norm = norm
        self._records = {}
        self._targets = {}
        self._tensors = {}

    def _sample(self, sid):
        if sid not in self._records:
            sample = load_sample(self.manifest.sample_base(sid))
            self._records[sid] = sample.record
            self._targets[sid] = normalize_velocity(sample.model, self.norm)
        return self._records[sid], self._targets[sid]

    def dataset_for(self, cfg: FeatureConfig, ids) -> dict:
        key = (cfg.shot_subset, cfg.use_fourier)
        cache = self._tensors.setdefault(key, {})
        out = {}
        for sid in set(ids):
            if sid not in cache:
                record, _ = self._sample(sid)
                cache[sid] = assemble_input(record, cfg).data
            out[sid] = (cache[sid], self._targets[sid])
        return out


def _feature_config(acfg: AblationConfig, setup: TrainerParams) -> FeatureConfig:
    return FeatureConfig(resample_height=setup.resample_height,
                         use_fourier=acfg.use_fourier, shot_subset=acfg.subset)


def _network_config(acfg: AblationConfig, setup: TrainerParams, n_emitters: int) -> NetworkConfig:
    selected = len(subset_indices(n_emitters, acfg.subset))
    return NetworkConfig(in_channels=n_channels(selected, acfg.use_fourier),
                         base_width=setup.base_width, depth=setup.depth)


def run_population(acfg: AblationConfig, manifest: DatasetManifest, setup: TrainerParams,
                   out_dir, store: FeatureStore | None = None, log=None) -> PopulationResult:
    """Train the bootstrap population for one configuration, resumably."""
    out_dir = Path(out_dir)
    pop_dir = out_dir / "populations" / acfg.key
    pop_dir.mkdir(parents=True, exist_ok=True)
    if store is None:
        store = FeatureStore(manifest, setup.resample_height, setup.norm)

    train_ids = manifest.ids_for_split("train")
    val_ids = manifest.ids_for_split("val")
    test_ids = manifest.ids_for_split("test")
    if not train_ids or not val_ids or not test_ids:
        raise ValueError("manifest must provide non-empty train/val/test folds")

    feature_cfg = _feature_config(acfg, setup)
    n_emitters = len(manifest.acquisition.get("emitter_columns", [])) or None
    if n_emitters is None:
        record, _ = store._sample(train_ids[0])
        n_emitters = record.n_shots
    net_cfg = _network_config(acfg, setup, n_emitters)
    reg_lambda = setup.reg_lambda_on if acfg.use_reg else 0.0

    result = PopulationResult(acfg, [], [], [], [])
    for inst in range(acfg.bootstrap_count):
        seed_inst = derive_seed(acfg.seed, acfg.key, inst)
        ckpt = pop_dir / f"inst{inst:02d}.wts"
        meta_path = pop_dir / f"inst{inst:02d}.json"
        rel_ckpt = str(ckpt.relative_to(out_dir))

        weights = None
        if ckpt.exists():
            try:
                weights, _ = net.load_weights(ckpt)
            except Exception:
                weights = None
        if weights is None:
            resampled = bootstrap_resample(train_ids, seed_inst)
            data = store.dataset_for(feature_cfg, set(resampled) | set(val_ids))
            tcfg = TrainConfig(epochs_max=setup.epochs_max, lr=setup.lr,
                               batch_size=setup.batch_size, reg_lambda=reg_lambda,
                               seed=seed_inst)
            try:
                weights, history = net.train(manifest, feature_cfg, net_cfg, tcfg,
                                             norm=setup.norm, train_ids=resampled,
                                             dataset=data)
            except TrainingDivergenceError as e:
                result.failures.append({"instance": inst, "seed": seed_inst, "reason": str(e)})
                if log:
                    log(f"{acfg.key} inst {inst}: diverged ({e})")
                continue
            net.save_weights(ckpt, weights, feature_cfg, setup.norm,
                             extra={"instance_seed": seed_inst,
                                    "selected_epoch": history.selected_epoch})
            meta_path.unlink(missing_ok=True)

        if meta_path.exists():
            with open(meta_path) as f:
                inst_meta = json.load(f)
            test_ssim, test_mse = inst_meta["test_ssim"], inst_meta["test_mse"]
        else:
            test_data = store.dataset_for(feature_cfg, test_ids)
            test_ssim, test_mse = net.evaluate_split(weights, test_data, test_ids,
                                                     setup.batch_size)
            with open(meta_path, "w") as f:
                json.dump({"instance": inst, "seed": seed_inst,
                           "test_ssim": test_ssim, "test_mse": test_mse}, f, sort_keys=True)
                f.write("\n")

        result.test_ssims.append(float(test_ssim))
        result.test_mses.append(float(test_mse))
        result.checkpoint_paths.append(rel_ckpt)
        result.instance_seeds.append(seed_inst)
        if log:
            log(f"{acfg.key} inst {inst}: test SSIM {test_ssim:.4f}")
    return result


def ensemble_predict(members, x) -> np.ndarray:
    """Arithmetic mean of member predictions for one input tensor."""
    if not members:
        raise ValueError("ensemble needs at least one member")
    cfg = members[0].config
    for m in members[1:]:
        if m.config != cfg:
            raise ValueError(f"ensemble members disagree on config: {m.config} vs {cfg}")
    acc = None
    for m in members:
        pred = net.forward_pass(m, x)
        acc = pred if acc is None else acc + pred
    return acc / len(members)


def evaluate_ensemble(pop: PopulationResult, manifest: DatasetManifest, setup: TrainerParams,
                      out_dir, store: FeatureStore | None = None) -> EnsembleResult:
    """Average the population's members and score the ensemble on the test fold.

    Asserts the Jensen inequality: ensemble MSE <= mean member MSE.
    """
    if not pop.valid:
        raise ValueError(f"population {pop.config.key} is invalid (fewer than "
                         f"{MIN_SURVIVORS} surviving instances)")
    out_dir = Path(out_dir)
    if store is None:
        store = FeatureStore(manifest, setup.resample_height, setup.norm)
    members = [net.load_weights(out_dir / rel)[0] for rel in pop.checkpoint_paths]
    feature_cfg = _feature_config(pop.config, setup)
    test_ids = manifest.ids_for_split("test")
    data = store.dataset_for(feature_cfg, test_ids)

    ssims, mses = [], []
    for sid in test_ids:
        x, y = data[sid]
        # member predictions batched once per sample, then averaged
        preds = [net.forward_pass(m, x) for m in members]
        ens = np.mean(preds, axis=0)
        ssims.append(stats.ssim(ens, y))
        mses.append(stats.mse(ens, y))
    ens_ssim = float(np.mean(ssims))
    ens_mse = float(np.mean(mses))
    mean_member_mse = float(np.mean(pop.test_mses))
    if not ens_mse <= mean_member_mse * (1.0 + 1e-12) + 1e-18:
        raise AssertionError(
            f"Jensen inequality violated for {pop.config.key}: ensemble MSE {ens_mse} "
            f"> mean member MSE {mean_member_mse}"
        )
    return EnsembleResult(config=pop.config, member_paths=list(pop.checkpoint_paths),
                          ensemble_ssim=ens_ssim, ensemble_mse=ens_mse,
                          mean_member_mse=mean_member_mse)


# ---------------------------------------------------------------------------
# significance pipeline
# ---------------------------------------------------------------------------


def significance_pipeline(populations) -> dict:
    """Shapiro-Wilk per population, Levene per shot count, ANOVA pairs for
    the Fourier and regularization switches. Invalid populations are skipped
    with a reason; all flags use alpha = 0.05.
    """
    pops = {(p.config.shots, p.config.use_fourier, p.config.use_reg): p for p in populations}
    skipped = [
        {"config": p.config.key, "reason": f"only {len(p.test_ssims)} surviving instances"}
        for p in populations if not p.valid
    ]
    valid = {k: p for k, p in pops.items() if p.valid}

    shapiro_rows = []
    for (shots, fourier, reg), p in sorted(valid.items()):
        try:
            r = stats.shapiro_wilk(p.test_ssims)
        except ValueError as e:
            skipped.append({"config": p.config.key, "reason": f"shapiro: {e}"})
            continue
        shapiro_rows.append({"shots": shots, "fourier": fourier, "regularization": reg,
                             "w_stat": r.statistic, "p_value": r.p_value,
                             "normal_at_0.05": r.p_value >= ALPHA})

    shot_counts = sorted({k[0] for k in valid})
    levene_rows = []
    for shots in shot_counts:
        groups = [p.test_ssims for k, p in sorted(valid.items()) if k[0] == shots]
        if len(groups) < 2:
            skipped.append({"config": f"shots{shots}", "reason": "levene needs >= 2 populations"})
            continue
        r = stats.levene(groups)
        levene_rows.append({"shots": shots, "statistic": r.statistic, "p_value": r.p_value,
                            "variances_equal_at_0.05": r.p_value >= ALPHA})

    anova_fourier_rows = []
    for shots in shot_counts:
        for reg in (False, True):
            a = valid.get((shots, False, reg))
            b = valid.get((shots, True, reg))
            if a is None or b is None:
                continue
            r = stats.anova_oneway([a.test_ssims, b.test_ssims])
            anova_fourier_rows.append({"shots": shots, "regularization": reg,
                                       "f_stat": r.statistic, "p_value": r.p_value,
                                       "significant_at_0.05": r.p_value < ALPHA})

    anova_reg_rows = []
    for shots in shot_counts:
        for fourier in (False, True):
            a = valid.get((shots, fourier, False))
            b = valid.get((shots, fourier, True))
            if a is None or b is None:
                continue
            r = stats.anova_oneway([a.test_ssims, b.test_ssims])
            anova_reg_rows.append({"shots": shots, "fourier": fourier,
                                   "f_stat": r.statistic, "p_value": r.p_value,
                                   "significant_at_0.05": r.p_value < ALPHA})

    return {"shapiro": shapiro_rows, "levene": levene_rows,
            "anova_fourier": anova_fourier_rows, "anova_reg": anova_reg_rows,
            "skipped": skipped}


# ---------------------------------------------------------------------------
# full run and report emission
# ---------------------------------------------------------------------------


@dataclass
class AblationRunResult:
    populations: list
    ensembles: list
    tables: dict
    master_seed: int


def run_ablation(matrix, manifest: DatasetManifest, setup: TrainerParams, out_dir,
                 log=None) -> AblationRunResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    store = FeatureStore(manifest, setup.resample_height, setup.norm)
    populations = []
    ensembles = []
    for acfg in matrix:
        pop = run_population(acfg, manifest, setup, out_dir, store=store, log=log)
        populations.append(pop)
        if pop.valid:
            ensembles.append(evaluate_ensemble(pop, manifest, setup, out_dir, store=store))
    tables = significance_pipeline(populations)
    seed = matrix[0].seed if matrix else 0
    result = AblationRunResult(populations=populations, ensembles=ensembles,
                               tables=tables, master_seed=seed)
    emit_report(result, out_dir / "report")
    return result


def _write_csv(path, header, rows) -> Path:
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_csv_cell(row[h]) for h in header) + "\n")
    return Path(path)


def _csv_cell(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(result: AblationRunResult, report_dir) -> list:
    """CSV tables, per-shot-count SSIM histogram PNGs and a JSON summary."""
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    written = []

    table1 = [
        {"shots": p.config.shots, "fourier": p.config.use_fourier,
         "regularization": p.config.use_reg, "mean_ssim": p.mean, "std_ssim": p.std}
        for p in result.populations if p.test_ssims
    ]
    written.append(_write_csv(report_dir / "table1.csv",
                              ["shots", "fourier", "regularization", "mean_ssim", "std_ssim"],
                              table1))
    t = result.tables
    written.append(_write_csv(report_dir / "shapiro.csv",
                              ["shots", "fourier", "regularization", "w_stat", "p_value",
                               "normal_at_0.05"], t["shapiro"]))
    written.append(_write_csv(report_dir / "levene.csv",
                              ["shots", "statistic", "p_value", "variances_equal_at_0.05"],
                              t["levene"]))
    written.append(_write_csv(report_dir / "anova_fourier.csv",
                              ["shots", "regularization", "f_stat", "p_value",
                               "significant_at_0.05"], t["anova_fourier"]))
    written.append(_write_csv(report_dir / "anova_reg.csv",
                              ["shots", "fourier", "f_stat", "p_value", "significant_at_0.05"],
                              t["anova_reg"]))
    written.append(_write_csv(report_dir / "ensembles.csv",
                              ["shots", "fourier", "regularization", "n_members",
                               "ensemble_ssim", "ensemble_mse", "mean_member_mse"],
                              [{"shots": e.config.shots, "fourier": e.config.use_fourier,
                                "regularization": e.config.use_reg,
                                "n_members": len(e.member_paths),
                                "ensemble_ssim": e.ensemble_ssim,
                                "ensemble_mse": e.ensemble_mse,
                                "mean_member_mse": e.mean_member_mse}
                               for e in result.ensembles]))

    values_by_config = {
        (p.config.shots, p.config.use_fourier, p.config.use_reg): list(p.test_ssims)
        for p in result.populations
    }
    shot_counts = sorted({p.config.shots for p in result.populations})
    written.extend(render.save_ssim_histograms(report_dir, values_by_config, shot_counts))

    summary = {
        "master_seed": result.master_seed,
        "populations": [
            {"config": {"shots": p.config.shots, "fourier": p.config.use_fourier,
                        "regularization": p.config.use_reg,
                        "bootstrap_count": p.config.bootstrap_count},
             "test_ssims": p.test_ssims, "test_mses": p.test_mses,
             "mean_ssim": p.mean if p.test_ssims else None,
             "std_ssim": p.std if p.test_ssims else None,
             "valid": p.valid, "checkpoints": p.checkpoint_paths,
             "instance_seeds": p.instance_seeds, "failures": p.failures}
            for p in result.populations
        ],
        "ensembles": [
            {"config": {"shots": e.config.shots, "fourier": e.config.use_fourier,
                        "regularization": e.config.use_reg},
             "ensemble_ssim": e.ensemble_ssim, "ensemble_mse": e.ensemble_mse,
             "mean_member_mse": e.mean_member_mse, "members": e.member_paths}
            for e in result.ensembles
        ],
        "tables": result.tables,
    }
    summary_path = report_dir / "summary.json"
    with open(summary_path, "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
        f.write("\n")
    written.append(summary_path)
    return written
