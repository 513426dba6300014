"""velinv: acoustic forward modeling and convolutional velocity inversion.

Synthetic layered velocity models with hard inclusions are forward-modeled
with a characteristic upwind acoustic solver into multi-shot surface
records; a from-scratch convolutional encoder-decoder inverts the records
back to velocity maps, and an ablation harness measures which input and
loss modifications matter, with significance testing.
"""

from .core import (
    GridSpec,
    MaterialFields,
    NormalizationSpec,
    Sample,
    SeismicRecord,
    ShotGather,
    VelocityModel,
    build_material_fields,
    denormalize_velocity,
    load_sample,
    normalize_velocity,
    save_sample,
)
from .forward import AcquisitionSpec, SourceSpec, WaveState, ricker, simulate_record, simulate_shot
from .scene import DatasetManifest, SceneParams, gen_dataset, gen_velocity_model, split_dataset
from .features import FeatureConfig, InputTensor, assemble_input, fourier_channels, rescale01
from .stats import SsimParams, TestResult, anova_oneway, f_cdf, levene, shapiro_wilk, ssim

__version__ = "0.1.0"
