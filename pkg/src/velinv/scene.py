"""Procedural velocity models and dataset assembly.

Models are layered backgrounds (velocity non-decreasing with depth,
sinusoid-perturbed interfaces) with one acoustically hard polygonal
inclusion placed fully inside the domain. Generation is a pure function
of (seed, params, grid), so datasets are reproducible and resumable.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import core, forward
from .core import GridSpec, Sample, VelocityModel, derive_seed
from .forward import AcquisitionSpec, SourceSpec

SPLIT_NAMES = ("train", "val", "test")


class GenerationError(Exception):
    """Raised when no feasible inclusion geometry is found."""


@dataclass(frozen=True)
class SceneParams:
    n_layers: tuple[int, int] = (2, 5)
    layer_velocity_range: tuple[float, float] = (2500.0, 4000.0)
    inclusion_velocity: float = 4500.0
    inclusion_area_fraction: tuple[float, float] = (0.05, 0.25)
    interface_undulation_amplitude: float = 60.0
    rng_seed: int = 0

    def __post_init__(self):
        lo, hi = self.inclusion_area_fraction
        if not (0.0 < lo < hi < 1.0):
            raise ValueError(f"area fraction range must satisfy 0 < lo < hi < 1, got ({lo}, {hi})")
        v_lo, v_hi = self.layer_velocity_range
        for v in (v_lo, v_hi, self.inclusion_velocity):
            if not (core.VMIN_GLOBAL <= v <= core.VMAX_GLOBAL):
                raise ValueError(f"velocity {v} outside global range")
        if self.n_layers[0] < 1 or self.n_layers[1] < self.n_layers[0]:
            raise ValueError(f"bad layer count range {self.n_layers}")


@dataclass
class SampleEntry:
    sample_id: str
    svm: str
    sgr: str
    seed: int
    split: str = ""


@dataclass
class DatasetManifest:
    samples: list
    master_seed: int
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    params: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    acquisition: dict = field(default_factory=dict)
    root: str = ""

    def ids_for_split(self, split: str) -> list:
        return [s.sample_id for s in self.samples if s.split == split]

    def entry(self, sample_id: str) -> SampleEntry:
        for s in self.samples:
            if s.sample_id == sample_id:
                return s
        raise KeyError(f"sample {sample_id!r} not in manifest")

    def sample_base(self, sample_id: str) -> Path:
        e = self.entry(sample_id)
        return Path(self.root) / Path(e.svm).with_suffix("")

    def save(self, path) -> None:
        doc = {
            "samples": [asdict(s) for s in self.samples],
            "master_seed": self.master_seed,
            "ratios": list(self.ratios),
            "params": self.params,
            "grid": self.grid,
            "acquisition": self.acquisition,
        }
        with open(path, "w") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path) as f:
            doc = json.load(f)
        return cls(
            samples=[SampleEntry(**s) for s in doc["samples"]],
            master_seed=int(doc["master_seed"]),
            ratios=tuple(doc["ratios"]),
            params=doc.get("params", {}),
            grid=doc.get("grid", {}),
            acquisition=doc.get("acquisition", {}),
            root=str(Path(path).parent),
        )


def _fill_polygon(verts: np.ndarray, ny: int, nx: int) -> np.ndarray:
    """Even-odd scanline rasterization of a closed polygon onto cell centers."""
    mask = np.zeros((ny, nx), dtype=bool)
    xs, ys = verts[:, 0], verts[:, 1]
    j_lo = max(0, int(math.floor(ys.min())))
    j_hi = min(ny - 1, int(math.ceil(ys.max())))
    n = len(verts)
    for j in range(j_lo, j_hi + 1):
        y = float(j)
        crossings = []
        for k in range(n):
            x1, y1 = verts[k]
            x2, y2 = verts[(k + 1) % n]
            if (y1 <= y < y2) or (y2 <= y < y1):
                crossings.append(x1 + (y - y1) * (x2 - x1) / (y2 - y1))
        crossings.sort()
        for a, b in zip(crossings[0::2], crossings[1::2]):
            i0 = max(0, int(math.ceil(a)))
            i1 = min(nx - 1, int(math.floor(b)))
            if i1 >= i0:
                mask[j, i0 : i1 + 1] = True
    return mask


def _random_inclusion(rng: np.random.Generator, params: SceneParams, grid: GridSpec) -> np.ndarray:
    """Blob-like convex-ish polygon mask with area fraction in the target range."""
    frac_lo, frac_hi = params.inclusion_area_fraction
    total = grid.nx * grid.ny
    for _ in range(100):
        frac = rng.uniform(frac_lo, frac_hi)
        aspect = rng.uniform(0.5, 2.0)
        b = math.sqrt(frac * total / (math.pi * aspect))
        a = aspect * b
        n_verts = int(rng.integers(8, 17))
        theta = np.sort(rng.uniform(0.0, 2.0 * math.pi, n_verts))
        radial = rng.uniform(0.85, 1.15, n_verts)
        tilt = rng.uniform(0.0, math.pi)
        ex = a * radial * np.cos(theta)
        ey = b * radial * np.sin(theta)
        vx = ex * math.cos(tilt) - ey * math.sin(tilt)
        vy = ex * math.sin(tilt) + ey * math.cos(tilt)
        r_max = float(np.max(np.hypot(vx, vy)))
        margin = r_max + 2.0
        cy_lo = max(margin, 0.25 * grid.ny)
        if margin >= grid.nx - margin or cy_lo >= grid.ny - margin:
            continue
        cx = rng.uniform(margin, grid.nx - margin)
        cy = rng.uniform(cy_lo, grid.ny - margin)
        verts = np.column_stack([vx + cx, vy + cy])
        mask = _fill_polygon(verts, grid.ny, grid.nx)
        if frac_lo <= mask.sum() / total <= frac_hi:
            return mask
    raise GenerationError("no feasible inclusion geometry after 100 placement attempts")


def gen_velocity_model(params: SceneParams, grid: GridSpec) -> VelocityModel:
    """Layered background plus one hard inclusion, deterministic per seed."""
    rng = np.random.default_rng(params.rng_seed)
    lo, hi = params.n_layers
    n_layers = int(rng.integers(lo, hi + 1))
    v_lo, v_hi = params.layer_velocity_range
    velocities = np.sort(rng.uniform(v_lo, v_hi, n_layers))

    cp = np.full(grid.shape, velocities[0], dtype=np.float64)
    if n_layers > 1:
        depths = np.sort(rng.uniform(0.15, 0.92, n_layers - 1)) * grid.ny
        x_m = np.arange(grid.nx) * grid.dx
        rows = np.arange(grid.ny)[:, None]
        amp_cells = params.interface_undulation_amplitude / grid.dy
        for k, base in enumerate(depths):
            wavelength = rng.uniform(0.5, 2.0) * grid.width
            phase = rng.uniform(0.0, 2.0 * math.pi)
            boundary = base + amp_cells * np.sin(2.0 * math.pi * x_m / wavelength + phase)
            cp = np.where(rows >= boundary[None, :], velocities[k + 1], cp)

    mask = _random_inclusion(rng, params, grid)
    cp[mask] = params.inclusion_velocity
    np.clip(cp, core.VMIN_GLOBAL, core.VMAX_GLOBAL, out=cp)
    return VelocityModel(grid=grid, cp=cp.astype(np.float32))


def inclusion_mask(vm: VelocityModel, params: SceneParams) -> np.ndarray:
    return np.asarray(vm.cp) == np.float32(params.inclusion_velocity)


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------


def _sample_id(i: int) -> str:
    return f"sample_{i:04d}"


def _generate_one(args) -> dict:
    """Worker: generate, simulate and save one sample. Picklable for pools."""
    (i, seed, params_dict, grid_dict, acq_dict, src_dict, rho0, out_dir, order) = args
    grid = GridSpec(**grid_dict)
    params = SceneParams(**{**params_dict, "rng_seed": seed})
    acq = AcquisitionSpec(**acq_dict)
    src = SourceSpec(**src_dict)
    sid = _sample_id(i)
    vm = gen_velocity_model(params, grid)
    mat = core.build_material_fields(vm, rho0)
    record = forward.simulate_record(vm, acq, src, mat=mat, model_id=sid, order=order)
    core.save_sample(Path(out_dir) / sid, Sample(model=vm, record=record))
    return {"sample_id": sid, "svm": f"{sid}.svm", "sgr": f"{sid}.sgr", "seed": seed}


def _sample_complete(out_dir: Path, sid: str) -> bool:
    base = out_dir / sid
    for ext in (".svm", ".sgr"):
        p = base.with_suffix(ext)
        if not (p.exists() and Path(str(p) + ".json").exists()):
            return False
    try:
        core.load_sample(base)
    except (core.ContainerError, ValueError, KeyError):
        return False
    return True


def gen_dataset(n: int, params: SceneParams, grid: GridSpec, acq: AcquisitionSpec,
                out_dir, src: SourceSpec | None = None, rho0: float = core.DEFAULT_RHO0,
                jobs: int = 1, order: int = 1,
                progress=None) -> DatasetManifest:
    """Generate/simulate n samples under out_dir and write manifest.json.

    Already-complete samples (valid .svm + .sgr on disk) are skipped, so an
    interrupted run resumes where it left off.
    """
    if n < 10:
        raise ValueError(f"dataset needs at least 10 samples, got {n}")
    acq.validate_against(grid)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if src is None:
        src = SourceSpec(column_index=acq.emitter_columns[0])

    master = params.rng_seed
    seeds = [derive_seed(master, "sample", i) for i in range(n)]
    params_dict = {k: v for k, v in asdict(params).items() if k != "rng_seed"}
    grid_dict = {"nx": grid.nx, "ny": grid.ny, "dx": grid.dx, "dy": grid.dy}
    acq_dict = {
        "emitter_columns": list(acq.emitter_columns),
        "receiver_columns": list(acq.receiver_columns),
        "t_total": acq.t_total,
        "dt_record": acq.dt_record,
        "cfl": acq.cfl,
    }
    src_dict = {"column_index": src.column_index, "f0": src.f0,
                "amplitude": src.amplitude, "delay": src.delay}

    todo = [i for i in range(n) if not _sample_complete(out_dir, _sample_id(i))]
    tasks = [(i, seeds[i], params_dict, grid_dict, acq_dict, src_dict, rho0, str(out_dir), order)
             for i in todo]
    done = 0
    if jobs > 1 and tasks:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for _ in pool.map(_generate_one, tasks, chunksize=1):
                done += 1
                if progress:
                    progress(done, len(tasks))
    else:
        for t in tasks:
            _generate_one(t)
            done += 1
            if progress:
                progress(done, len(tasks))

    entries = [
        SampleEntry(sample_id=_sample_id(i), svm=f"{_sample_id(i)}.svm",
                    sgr=f"{_sample_id(i)}.sgr", seed=seeds[i])
        for i in range(n)
    ]
    manifest = DatasetManifest(
        samples=entries,
        master_seed=master,
        params=params_dict,
        grid=grid_dict,
        acquisition=acq_dict,
        root=str(out_dir),
    )
    manifest = split_dataset(manifest, seed=derive_seed(master, "split"))
    manifest.save(out_dir / "manifest.json")
    return manifest


def split_dataset(manifest: DatasetManifest, ratios=(0.70, 0.15, 0.15),
                  seed: int = 0) -> DatasetManifest:
    """Assign train/val/test splits by seeded random permutation.

    Fold sizes are floor-based with the remainder going to the training
    fold; every fold must end up non-empty.
    """
    ratios = tuple(float(r) for r in ratios)
    if any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(manifest.samples)
    # epsilon guards against 0.70 * 20 = 13.999... under binary floats
    n_val = int(n * ratios[1] + 1e-9)
    n_test = int(n * ratios[2] + 1e-9)
    n_train = n - n_val - n_test
    if n_train <= 0 or n_val <= 0 or n_test <= 0:
        raise ValueError(f"{n} samples cannot fill non-empty splits at ratios {ratios}")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    assignment = [""] * n
    for pos, idx in enumerate(perm):
        if pos < n_train:
            assignment[idx] = "train"
        elif pos < n_train + n_val:
            assignment[idx] = "val"
        else:
            assignment[idx] = "test"
    samples = [
        SampleEntry(s.sample_id, s.svm, s.sgr, s.seed, split=assignment[i])
        for i, s in enumerate(manifest.samples)
    ]
    return DatasetManifest(
        samples=samples,
        master_seed=manifest.master_seed,
        ratios=ratios,
        params=manifest.params,
        grid=manifest.grid,
        acquisition=manifest.acquisition,
        root=manifest.root,
    )
