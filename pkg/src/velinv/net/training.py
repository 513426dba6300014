"""Loss, Adam optimizer, training loop and checkpoint I/O.

Training minimizes MSE on [0,1]-normalized velocity targets, optionally
plus a smoothness penalty: reg_lambda times the Euclidean norm of the
stacked Sobel gradients of the prediction, divided by the interior pixel
count. Model selection keeps the weights of the epoch with the best mean
validation SSIM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import stats
from ..core import NormalizationSpec, load_sample, normalize_velocity
from ..features import FeatureConfig, assemble_input
from . import ops
from .model import NetworkConfig, NetworkWeights, backward_batch, forward_batch, init_weights

SOBEL_REG_DEFAULT = 1e-3


class TrainingDivergenceError(Exception):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    epochs_max: int = 50
    lr: float = 1e-4
    batch_size: int = 10
    reg_lambda: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.reg_lambda < 0:
            raise ValueError(f"reg_lambda must be >= 0, got {self.reg_lambda}")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_ssim: list = field(default_factory=list)

    @property
    def selected_epoch(self) -> int:
        if not self.val_ssim:
            raise ValueError("no epochs recorded")
        return int(np.argmax(self.val_ssim))


def loss(pred: np.ndarray, target: np.ndarray, reg_lambda: float = 0.0) -> float:
    """MSE plus reg_lambda * ||(gx, gy)||_2 / interior pixel count."""
    value, _ = loss_and_grad(np.asarray(pred)[None, ...], np.asarray(target)[None, ...],
                             reg_lambda)
    return value


def loss_and_grad(pred: np.ndarray, target: np.ndarray, reg_lambda: float):
    """Batched loss and its gradient wrt pred; shapes (B, H, W)."""
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    b = pred.shape[0]
    diff = (pred - target).astype(np.float64)
    mse_val = float(np.mean(diff * diff))
    dpred = (2.0 / diff.size) * diff

    reg_val = 0.0
    if reg_lambda > 0.0:
        gx, gy = ops.sobel_filter(pred.astype(np.float64))
        n_int = gx.shape[-2] * gx.shape[-1]
        s = np.sqrt(np.sum(gx * gx, axis=(-2, -1)) + np.sum(gy * gy, axis=(-2, -1)))
        reg_val = reg_lambda * float(np.mean(s)) / n_int
        # subgradient 0 where the Sobel norm vanishes
        scale = np.where(s > 0.0, reg_lambda / (b * n_int * np.where(s > 0.0, s, 1.0)), 0.0)
        dpred = dpred + ops.sobel_adjoint(gx * scale[:, None, None], gy * scale[:, None, None],
                                          pred.shape)
    return mse_val + reg_val, dpred.astype(pred.dtype)


@dataclass
class AdamState:
    m: dict
    v: dict

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, t: int, cfg: TrainConfig):
    """Standard bias-corrected Adam update, in place; returns (params, state)."""
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.eps_adam
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for key, p in params.items():
        g = grads[key]
        if not np.isfinite(g).all():
            raise TrainingDivergenceError(f"non-finite gradient for parameter {key!r}")
        m = state.m[key]
        v = state.v[key]
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= (cfg.lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
    return params, state


# ---------------------------------------------------------------------------
# data access
# ---------------------------------------------------------------------------


def load_dataset_arrays(manifest, ids, feature_cfg: FeatureConfig,
                        norm: NormalizationSpec = NormalizationSpec()) -> dict:
    """{sample_id: (input (C,H,W) float32, target (H,W) float32)} from disk."""
    out = {}
    for sid in ids:
        sample = load_sample(manifest.sample_base(sid))
        x = assemble_input(sample.record, feature_cfg).data
        y = normalize_velocity(sample.model, norm)
        out[sid] = (x, y)
    return out


def evaluate_split(weights: NetworkWeights, data: dict, ids,
                   batch_size: int = 10) -> tuple[float, float]:
    """(mean SSIM, mean MSE) of predictions over the given sample ids."""
    preds = predict_many(weights, [data[i][0] for i in ids], batch_size)
    ssims = [stats.ssim(p, data[i][1]) for p, i in zip(preds, ids)]
    mses = [stats.mse(p, data[i][1]) for p, i in zip(preds, ids)]
    return float(np.mean(ssims)), float(np.mean(mses))


def predict_many(weights: NetworkWeights, inputs, batch_size: int = 10) -> list:
    """Forward passes in batches; returns per-sample (H, W) predictions."""
    h, w = inputs[0].shape[1], inputs[0].shape[2]
    outs = []
    for start in range(0, len(inputs), batch_size):
        xb = np.stack(inputs[start : start + batch_size]).astype(np.float32)
        xb, _ = ops.pad_to_multiple(xb, weights.config.divisor)
        yb, _ = forward_batch(weights, xb)
        outs.extend(yb[k, 0, :h, :w] for k in range(yb.shape[0]))
    return outs


def train(manifest, feature_cfg: FeatureConfig, net_cfg: NetworkConfig,
          train_cfg: TrainConfig, norm: NormalizationSpec = NormalizationSpec(),
          train_ids=None, dataset: dict | None = None, log=None):
    """Train on the manifest's folds; returns (best-epoch weights, history).

    ``train_ids`` overrides the manifest's training fold (bootstrap
    resamples may repeat ids); validation always uses the manifest's fold.
    ``dataset`` may supply preloaded arrays keyed by sample id.
    """
    val_ids = manifest.ids_for_split("val")
    if train_ids is None:
        train_ids = manifest.ids_for_split("train")
    train_ids = list(train_ids)
    if not train_ids or not val_ids:
        raise ValueError("training requires non-empty train and val folds")

    if dataset is None:
        dataset = load_dataset_arrays(manifest, sorted(set(train_ids) | set(val_ids)),
                                      feature_cfg, norm)
    rng = np.random.default_rng(train_cfg.seed)
    weights = init_weights(net_cfg, seed=train_cfg.seed)
    state = AdamState.zeros_like(weights.params)
    history = TrainHistory()
    best = (-math.inf, None)
    t = 0
    for epoch in range(train_cfg.epochs_max):
        order = rng.permutation(len(train_ids))
        epoch_losses = []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [train_ids[k] for k in order[start : start + train_cfg.batch_size]]
            xb = np.stack([dataset[i][0] for i in batch]).astype(np.float32)
            yb = np.stack([dataset[i][1] for i in batch]).astype(np.float32)
            xb, (h, w) = ops.pad_to_multiple(xb, net_cfg.divisor)
            out, cache = forward_batch(weights, xb, want_cache=True)
            pred = out[:, 0, :h, :w]
            loss_val, dpred = loss_and_grad(pred, yb, train_cfg.reg_lambda)
            if not math.isfinite(loss_val):
                raise TrainingDivergenceError(
                    f"loss diverged at epoch {epoch}, batch {start // train_cfg.batch_size}"
                )
            dy = np.zeros_like(out)
            dy[:, 0, :h, :w] = dpred
            grads = backward_batch(weights, cache, dy)
            t += 1
            adam_step(weights.params, grads, state, t, train_cfg)
            epoch_losses.append(loss_val)
        val_ssim, _ = evaluate_split(weights, dataset, val_ids, train_cfg.batch_size)
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_ssim.append(val_ssim)
        if val_ssim > best[0]:
            best = (val_ssim, weights.copy())
        if log:
            log(epoch, history.train_loss[-1], val_ssim)
    return best[1], history


# ---------------------------------------------------------------------------
# checkpoint and curve files
# ---------------------------------------------------------------------------


def save_weights(path, weights: NetworkWeights, feature_cfg: FeatureConfig | None = None,
                 norm: NormalizationSpec = NormalizationSpec(), extra: dict | None = None) -> None:
    from ..core import write_arrays

    meta = {
        "net_config": {
            "in_channels": weights.config.in_channels,
            "base_width": weights.config.base_width,
            "depth": weights.config.depth,
            "out_channels": weights.config.out_channels,
            "kernel_size": weights.config.kernel_size,
        },
        "init_seed": weights.init_seed,
        "normalization": {"vmin": norm.vmin, "vmax": norm.vmax},
    }
    if feature_cfg is not None:
        meta["feature_config"] = {
            "resample_height": feature_cfg.resample_height,
            "use_fourier": feature_cfg.use_fourier,
            "shot_subset": feature_cfg.shot_subset,
        }
    if extra:
        meta.update(extra)
    write_arrays(path, weights.params, kind="network_weights", meta=meta)


def load_weights(path) -> tuple[NetworkWeights, dict]:
    from ..core import read_arrays

    arrays, meta = read_arrays(path, expect_kind="network_weights")
    cfg = NetworkConfig(**meta["net_config"])
    return NetworkWeights(config=cfg, params=arrays, init_seed=int(meta.get("init_seed", 0))), meta


def save_history_csv(path, history: TrainHistory) -> None:
    with open(path, "w") as f:
        f.write("epoch,loss,val_ssim\n")
        for e, (lo, ss) in enumerate(zip(history.train_loss, history.val_ssim)):
            f.write(f"{e},{lo!r},{ss!r}\n")
