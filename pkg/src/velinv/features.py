"""Network input assembly from seismic records.

Each selected shot contributes one raw channel: the gather is resampled
along time to the target height, transposed to (time, receiver) and
rescaled to [0, 1]. With Fourier channels enabled, the real and imaginary
parts of the unnormalized 2D DFT of the resampled raw gather are appended
(each rescaled to [0, 1]) after all raw channels, ordered per shot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SeismicRecord

SHOT_SUBSETS = ("single", "triple", "all")


@dataclass(frozen=True)
class FeatureConfig:
    resample_height: int
    use_fourier: bool = False
    shot_subset: str = "all"

    def __post_init__(self):
        if self.shot_subset not in SHOT_SUBSETS:
            raise ValueError(f"shot_subset must be one of {SHOT_SUBSETS}, got {self.shot_subset!r}")
        if self.resample_height < 1:
            raise ValueError(f"resample_height must be positive, got {self.resample_height}")


@dataclass(frozen=True)
class InputTensor:
    """(channels, height, width) float array with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3:
            raise ValueError(f"tensor must be 3D, got shape {d.shape}")
        if d.min() < -1e-6 or d.max() > 1.0 + 1e-6:
            raise ValueError(f"tensor values [{d.min()}, {d.max()}] escape [0, 1]")
        d = np.clip(d, 0.0, 1.0)
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def rescale01(a: np.ndarray) -> np.ndarray:
    """Affine map onto [0, 1]; a constant array maps to all 0.5."""
    a = np.asarray(a, dtype=np.float64)
    if not np.isfinite(a).all():
        raise ValueError("cannot rescale an array with non-finite values")
    lo, hi = float(a.min()), float(a.max())
    if hi == lo:
        return np.full(a.shape, 0.5)
    return (a - lo) / (hi - lo)


def fourier_channels(gather: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary parts of the unnormalized 2D DFT of a raw gather."""
    g = np.asarray(gather, dtype=np.float64)
    if not np.isfinite(g).all():
        raise ValueError("cannot transform an array with non-finite values")
    spec = np.fft.fft2(g)
    return spec.real, spec.imag


def subset_indices(n_shots: int, subset: str) -> list[int]:
    """Shot ordinals for a subset: center, {first, center, last}, or all."""
    if subset == "single":
        return [n_shots // 2]
    if subset == "triple":
        if n_shots < 3:
            raise ValueError(f"triple subset needs >= 3 shots, record has {n_shots}")
        return sorted({0, n_shots // 2, n_shots - 1})
    return list(range(n_shots))


def resample_time(data: np.ndarray, height: int) -> np.ndarray:
    """Linear interpolation of each receiver trace onto ``height`` samples."""
    data = np.asarray(data, dtype=np.float64)
    n_samp = data.shape[1]
    if n_samp == height:
        return data.copy()
    t_new = np.linspace(0.0, n_samp - 1.0, height)
    t_old = np.arange(n_samp, dtype=np.float64)
    out = np.empty((data.shape[0], height))
    for r in range(data.shape[0]):
        out[r] = np.interp(t_new, t_old, data[r])
    return out


def assemble_input(record: SeismicRecord, cfg: FeatureConfig) -> InputTensor:
    """Stack selected shots (and optional Fourier pairs) into one tensor.

    Channel order: [shot0_raw, shot1_raw, ..., shot0_re, shot0_im,
    shot1_re, shot1_im, ...].
    """
    idx = subset_indices(record.n_shots, cfg.shot_subset)
    raw_planes = []
    fourier_planes = []
    for i in idx:
        plane = resample_time(record.shots[i].data, cfg.resample_height).T
        raw_planes.append(rescale01(plane))
        if cfg.use_fourier:
            re, im = fourier_channels(plane)
            fourier_planes.append(rescale01(re))
            fourier_planes.append(rescale01(im))
    data = np.stack(raw_planes + fourier_planes).astype(np.float32)
    return InputTensor(data=data)


def n_channels(n_shots_selected: int, use_fourier: bool) -> int:
    return n_shots_selected * (3 if use_fourier else 1)
