"""Domain types, normalization conventions and the on-disk sample container.

Every other module builds on the types defined here: a velocity model is a
(ny, nx) grid of P-wave speeds, a seismic record stacks one shot gather per
emitter position, and a sample pairs the two.

On-disk format
--------------
Arrays are stored in a small binary container::

    magic (8 bytes) | version (1 byte) | crc32 of payload (4 bytes, LE) |
    payload: concatenated little-endian float32 arrays, row-major

Shapes, array names and all metadata live in a JSON sidecar next to the
binary file (``<name>.json`` for binary file ``<name>``). Velocity models
use the ``.svm`` extension, seismic records ``.sgr``; network checkpoints
and snapshot dumps reuse the same container.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

MAGIC = b"VELINV01"
CONTAINER_VERSION = 1

# Global normalization range, m/s. Encloses the 2500-4500 m/s span of the
# generated models with margin so targets stay stable across regenerations.
VMIN_GLOBAL = 2000.0
VMAX_GLOBAL = 5000.0

DEFAULT_RHO0 = 2300.0  # kg/m^3, uniform density everywhere


class ContainerError(Exception):
    """Base class for container read failures."""


class ContainerFormatError(ContainerError):
    """Bad magic bytes or malformed sidecar."""


class ContainerVersionError(ContainerError):
    """Container version not supported by this reader."""


class ContainerTruncatedError(ContainerError):
    """Payload shorter than the sidecar-declared shapes require."""


class ContainerChecksumError(ContainerError):
    """Payload CRC32 does not match the header."""


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class GridSpec:
    """Regular 2D grid: nx columns along OX, ny rows along OY (depth)."""

    nx: int
    ny: int
    dx: float
    dy: float

    def __post_init__(self):
        if self.nx < 16 or self.ny < 16:
            raise ValueError(f"grid must be at least 16x16, got {self.nx}x{self.ny}")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError(f"cell sizes must be positive, got dx={self.dx}, dy={self.dy}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def width(self) -> float:
        return self.nx * self.dx

    @property
    def depth(self) -> float:
        return self.ny * self.dy


@dataclass(frozen=True)
class NormalizationSpec:
    """Fixed global velocity range used for [0,1] targets and SSIM."""

    vmin: float = VMIN_GLOBAL
    vmax: float = VMAX_GLOBAL

    def __post_init__(self):
        if not self.vmax > self.vmin:
            raise ValueError(f"vmax must exceed vmin, got [{self.vmin}, {self.vmax}]")


@dataclass(frozen=True)
class VelocityModel:
    """P-wave speed map on a grid; the inversion target.

    ``cp`` has shape (ny, nx) in m/s, float32, read-only after construction.
    """

    grid: GridSpec
    cp: np.ndarray

    def __post_init__(self):
        cp = np.asarray(self.cp, dtype=np.float32)
        if cp.shape != self.grid.shape:
            raise ValueError(f"cp shape {cp.shape} does not match grid {self.grid.shape}")
        bad = ~np.isfinite(cp)
        if bad.any():
            j, i = np.argwhere(bad)[0]
            raise ValueError(f"non-finite velocity at cell (row={j}, col={i})")
        if cp.min() < VMIN_GLOBAL or cp.max() > VMAX_GLOBAL:
            raise ValueError(
                f"velocities [{cp.min():.1f}, {cp.max():.1f}] outside global range "
                f"[{VMIN_GLOBAL:.0f}, {VMAX_GLOBAL:.0f}] m/s"
            )
        object.__setattr__(self, "cp", _freeze(cp))


@dataclass(frozen=True)
class MaterialFields:
    """Density rho (kg/m^3) and bulk modulus K (Pa), cellwise K = rho*cp^2."""

    rho: np.ndarray
    bulk: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.float64)
        bulk = np.asarray(self.bulk, dtype=np.float64)
        if rho.shape != bulk.shape:
            raise ValueError(f"rho shape {rho.shape} != bulk shape {bulk.shape}")
        if not (rho > 0).all():
            raise ValueError("density must be positive everywhere")
        if not (bulk > 0).all():
            raise ValueError("bulk modulus must be positive everywhere")
        object.__setattr__(self, "rho", _freeze(rho))
        object.__setattr__(self, "bulk", _freeze(bulk))

    @cached_property
    def speed(self) -> np.ndarray:
        """P-wave speed sqrt(K/rho), m/s."""
        return _freeze(np.sqrt(self.bulk / self.rho))

    @cached_property
    def impedance(self) -> np.ndarray:
        """Acoustic impedance Z = rho*cp = sqrt(rho*K)."""
        return _freeze(np.sqrt(self.rho * self.bulk))


@dataclass(frozen=True)
class ShotGather:
    """Receiver x time record of surface vertical velocity for one emitter."""

    n_receivers: int
    n_samples: int
    dt_record: float
    data: np.ndarray
    emitter_index: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.shape != (self.n_receivers, self.n_samples):
            raise ValueError(
                f"gather shape {data.shape} != ({self.n_receivers}, {self.n_samples})"
            )
        if self.dt_record <= 0:
            raise ValueError(f"dt_record must be positive, got {self.dt_record}")
        if not np.isfinite(data).all():
            raise ValueError(f"non-finite samples in gather for emitter {self.emitter_index}")
        object.__setattr__(self, "data", _freeze(data))

    @classmethod
    def from_data(cls, data: np.ndarray, dt_record: float, emitter_index: int) -> "ShotGather":
        data = np.asarray(data, dtype=np.float32)
        return cls(data.shape[0], data.shape[1], dt_record, data, emitter_index)


@dataclass(frozen=True)
class SeismicRecord:
    """All shot gathers for one model, ordered by emitter column."""

    shots: tuple[ShotGather, ...]
    model_id: str = ""

    def __post_init__(self):
        shots = tuple(self.shots)
        if not shots:
            raise ValueError("record must contain at least one shot")
        first = shots[0]
        for g in shots[1:]:
            if (g.n_receivers, g.n_samples, g.dt_record) != (
                first.n_receivers,
                first.n_samples,
                first.dt_record,
            ):
                raise ValueError("all shots must share receiver count, sample count and dt")
        idx = [g.emitter_index for g in shots]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"emitter indices must be strictly increasing, got {idx}")
        object.__setattr__(self, "shots", shots)

    @property
    def n_shots(self) -> int:
        return len(self.shots)

    @property
    def emitter_columns(self) -> tuple[int, ...]:
        return tuple(g.emitter_index for g in self.shots)


@dataclass(frozen=True)
class Sample:
    """One training pair: velocity model and its simulated seismic record."""

    model: VelocityModel
    record: SeismicRecord

    def __post_init__(self):
        if self.record.shots[0].n_receivers != self.model.grid.nx:
            raise ValueError(
                f"record has {self.record.shots[0].n_receivers} receivers but the "
                f"model grid has {self.model.grid.nx} columns"
            )


def build_material_fields(vm: VelocityModel, rho0: float = DEFAULT_RHO0) -> MaterialFields:
    """Derive uniform-density material fields from a velocity model.

    The dataset carries only cp, so acoustic contrasts come entirely from
    velocity: rho = rho0 everywhere and K = rho0 * cp^2.
    """
    if rho0 <= 0:
        raise ValueError(f"rho0 must be positive, got {rho0}")
    cp = np.asarray(vm.cp, dtype=np.float64)
    bad = ~np.isfinite(cp)
    if bad.any():
        j, i = np.argwhere(bad)[0]
        raise ValueError(f"non-finite velocity at cell (row={j}, col={i})")
    rho = np.full(cp.shape, float(rho0))
    return MaterialFields(rho=rho, bulk=rho0 * cp * cp)


def normalize_velocity(vm: VelocityModel, spec: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    """Map velocities affinely onto [0, 1] using the fixed global range."""
    cp = np.asarray(vm.cp, dtype=np.float32)
    if cp.min() < spec.vmin or cp.max() > spec.vmax:
        raise ValueError(
            f"velocities [{cp.min():.1f}, {cp.max():.1f}] outside normalization "
            f"range [{spec.vmin}, {spec.vmax}]"
        )
    return ((cp - spec.vmin) / (spec.vmax - spec.vmin)).astype(np.float32)


def denormalize_velocity(arr: np.ndarray, spec: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    """Inverse of :func:`normalize_velocity`."""
    return np.asarray(arr, dtype=np.float64) * (spec.vmax - spec.vmin) + spec.vmin


def derive_seed(master: int, *labels: object) -> int:
    """Derive a child seed from a master seed and a label path.

    Counter-based hash so every sample / training instance gets a stable,
    independent stream from a single recorded master seed.
    """
    key = ":".join([str(int(master))] + [str(l) for l in labels])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


# ---------------------------------------------------------------------------
# container I/O
# ---------------------------------------------------------------------------


def write_arrays(path, arrays: dict[str, np.ndarray], kind: str, meta: dict | None = None) -> None:
    """Write named float32 arrays to ``path`` plus a ``<path>.json`` sidecar."""
    path = Path(path)
    order = []
    chunks = []
    for name, a in arrays.items():
        a32 = np.ascontiguousarray(np.asarray(a), dtype="<f4")
        order.append({"name": name, "shape": list(a32.shape)})
        chunks.append(a32.tobytes())
    payload = b"".join(chunks)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(bytes([CONTAINER_VERSION]))
        f.write(crc.to_bytes(4, "little"))
        f.write(payload)
    sidecar = {"kind": kind, "container_version": CONTAINER_VERSION, "arrays": order}
    if meta:
        sidecar.update(meta)
    with open(str(path) + ".json", "w") as f:
        json.dump(sidecar, f, indent=1, sort_keys=True)
        f.write("\n")


def read_arrays(path, expect_kind: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container written by :func:`write_arrays`.

    Returns (arrays, sidecar). Raises a distinct :class:`ContainerError`
    subclass for bad magic, unsupported version, truncation and CRC mismatch.
    """
    path = Path(path)
    sidecar_path = Path(str(path) + ".json")
    try:
        with open(sidecar_path) as f:
            sidecar = json.load(f)
    except json.JSONDecodeError as e:
        raise ContainerFormatError(f"malformed sidecar {sidecar_path}: {e}") from e
    if "arrays" not in sidecar:
        raise ContainerFormatError(f"sidecar {sidecar_path} lacks an 'arrays' section")
    if expect_kind is not None and sidecar.get("kind") != expect_kind:
        raise ContainerFormatError(
            f"{path} holds kind {sidecar.get('kind')!r}, expected {expect_kind!r}"
        )

    raw = path.read_bytes()
    if len(raw) < 13 or raw[:8] != MAGIC:
        raise ContainerFormatError(f"{path} is not a velinv container (bad magic)")
    version = raw[8]
    if version != CONTAINER_VERSION:
        raise ContainerVersionError(f"{path} has container version {version}, expected {CONTAINER_VERSION}")
    crc_stored = int.from_bytes(raw[9:13], "little")
    payload = raw[13:]

    n_expected = sum(int(np.prod(d["shape"])) for d in sidecar["arrays"])
    if len(payload) < 4 * n_expected:
        raise ContainerTruncatedError(
            f"{path} payload holds {len(payload)} bytes, sidecar declares {4 * n_expected}"
        )
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise ContainerChecksumError(f"{path} payload CRC mismatch")

    arrays = {}
    offset = 0
    flat = np.frombuffer(payload, dtype="<f4")
    for d in sidecar["arrays"]:
        size = int(np.prod(d["shape"]))
        arrays[d["name"]] = flat[offset : offset + size].reshape(d["shape"]).copy()
        offset += size
    return arrays, sidecar


def save_velocity_model(path, vm: VelocityModel, norm: NormalizationSpec = NormalizationSpec()) -> None:
    write_arrays(
        path,
        {"cp": vm.cp},
        kind="velocity_model",
        meta={
            "grid": {"nx": vm.grid.nx, "ny": vm.grid.ny, "dx": vm.grid.dx, "dy": vm.grid.dy},
            "normalization": {"vmin": norm.vmin, "vmax": norm.vmax},
        },
    )


def load_velocity_model(path) -> tuple[VelocityModel, NormalizationSpec]:
    arrays, meta = read_arrays(path, expect_kind="velocity_model")
    g = meta["grid"]
    grid = GridSpec(nx=int(g["nx"]), ny=int(g["ny"]), dx=float(g["dx"]), dy=float(g["dy"]))
    n = meta["normalization"]
    return VelocityModel(grid=grid, cp=arrays["cp"]), NormalizationSpec(float(n["vmin"]), float(n["vmax"]))


def save_record(path, record: SeismicRecord) -> None:
    stack = np.stack([g.data for g in record.shots])
    write_arrays(
        path,
        {"data": stack},
        kind="seismic_record",
        meta={
            "emitter_columns": list(record.emitter_columns),
            "dt_record": record.shots[0].dt_record,
            "model_id": record.model_id,
        },
    )


def load_record(path) -> SeismicRecord:
    arrays, meta = read_arrays(path, expect_kind="seismic_record")
    stack = arrays["data"]
    dt = float(meta["dt_record"])
    shots = tuple(
        ShotGather.from_data(stack[k], dt, int(col))
        for k, col in enumerate(meta["emitter_columns"])
    )
    return SeismicRecord(shots=shots, model_id=str(meta.get("model_id", "")))


def save_sample(base_path, sample: Sample, norm: NormalizationSpec = NormalizationSpec()) -> tuple[Path, Path]:
    """Write ``<base>.svm`` and ``<base>.sgr`` with sidecars; returns the two paths."""
    base = Path(base_path)
    svm = base.with_suffix(".svm")
    sgr = base.with_suffix(".sgr")
    save_velocity_model(svm, sample.model, norm)
    save_record(sgr, sample.record)
    return svm, sgr


def load_sample(base_path) -> Sample:
    base = Path(base_path)
    vm, _ = load_velocity_model(base.with_suffix(".svm"))
    record = load_record(base.with_suffix(".sgr"))
    return Sample(model=vm, record=record)
