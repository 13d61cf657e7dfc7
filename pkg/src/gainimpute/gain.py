"""Adversarial imputer over learner images.

A generator sees (observed-values-with-noise, mask, noise) channels of one
learner's question x attempt matrix and proposes probabilities for every
cell; observed cells are merged back in unchanged.  A discriminator sees
the merged matrix plus a partially revealed hint of the mask and predicts,
per cell, whether it was observed.  The generator is additionally pulled
toward the observed values by an RMSE reconstruction term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DataError
from .tensors import (
    DenseTensor,
    LearnerSlice,
    MaskMatrix,
    PerformanceTensor,
    assemble,
    learner_slice,
)

PROB_FLOOR = 1e-7


@dataclass(frozen=True)
class GainConfig:
    hint_rate: float = 0.9
    noise_scale: float = 0.01
    alpha: float = 10.0
    learning_rate: float = 1e-4
    epochs: int = 100
    dropout_rate: float = 0.2
    seed: int = 0
    conv_channels: int = 16
    kernel_size: int = 3
    early_stop_delta: float = 1e-5
    early_stop_patience: int = 10

    def __post_init__(self):
        if not 0.0 < self.hint_rate <= 1.0:
            raise ValueError(f"hint_rate must be in (0, 1], got {self.hint_rate}")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


@dataclass
class GainModel:
    generator: nn.Network
    discriminator: nn.Network
    config: GainConfig


@dataclass
class EpochStats:
    epoch: int
    d_loss: float
    g_loss: float
    observed_rmse: float


def _hidden_blocks(channels: int, kernel: int, dropout: float, first_in: int):
    layers = []
    in_c = first_in
    for _ in range(5):
        layers += [nn.Conv2d(in_c, channels, kernel), nn.BatchNorm(channels), nn.Relu()]
        if dropout > 0:
            layers.append(nn.Dropout(dropout))
        in_c = channels
    return layers


def build_generator(n_questions: int, n_attempts: int, cfg: GainConfig, seed: int) -> nn.Network:
    layers = _hidden_blocks(cfg.conv_channels, cfg.kernel_size, cfg.dropout_rate, first_in=3)
    layers += [
        nn.Conv2d(cfg.conv_channels, 1, cfg.kernel_size),
        nn.Sigmoid(),
        nn.Reshape((1, n_questions, n_attempts)),
    ]
    return nn.Network(layers, seed=seed)


def build_discriminator(n_questions: int, n_attempts: int, cfg: GainConfig, seed: int) -> nn.Network:
    layers = _hidden_blocks(cfg.conv_channels, cfg.kernel_size, cfg.dropout_rate, first_in=2)
    layers += [
        nn.Conv2d(cfg.conv_channels, 1, cfg.kernel_size),
        nn.Sigmoid(),
        nn.Reshape((1, n_questions, n_attempts)),
    ]
    return nn.Network(layers, seed=seed)


def make_noise(dims: tuple[int, int], noise_scale: float, seed) -> np.ndarray:
    """I.i.d. uniform [0, noise_scale] matrix, deterministic per seed."""
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.uniform(0.0, noise_scale, dims) if noise_scale > 0 else np.zeros(dims)


def make_hint(mask: MaskMatrix | np.ndarray, hint_rate: float, seed) -> np.ndarray:
    """Reveal each mask entry with probability hint_rate; 0.5 elsewhere."""
    if not 0.0 < hint_rate <= 1.0:
        raise ValueError(f"hint_rate must be in (0, 1], got {hint_rate}")
    mask = np.asarray(getattr(mask, "values", mask), dtype=np.float64)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    reveal = (rng.random(mask.shape) < hint_rate).astype(np.float64)
    return reveal * mask + 0.5 * (1.0 - reveal)


def merge(slice_: LearnerSlice | np.ndarray, mask: MaskMatrix | np.ndarray,
          generated: np.ndarray) -> np.ndarray:
    """Observed cells from the slice, generated values elsewhere."""
    values = np.asarray(getattr(slice_, "values", slice_), dtype=np.float64)
    mask = np.asarray(getattr(mask, "values", mask), dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    if generated.ndim == 3 and generated.shape[0] == 1:
        generated = generated[0]
    if values.shape != mask.shape or values.shape != generated.shape:
        raise ValueError(
            f"shape mismatch: slice {values.shape}, mask {mask.shape}, "
            f"generated {generated.shape}"
        )
    return np.where(mask == 1.0, values, generated)


def discriminator_loss(d_out: np.ndarray, mask: MaskMatrix | np.ndarray) -> float:
    """Mean negative log-likelihood of the discriminator predicting the mask."""
    loss, _ = _discriminator_loss_grad(d_out, mask)
    return loss


def _discriminator_loss_grad(d_out, mask):
    mask = np.asarray(getattr(mask, "values", mask), dtype=np.float64)
    d = np.clip(np.asarray(d_out, dtype=np.float64), PROB_FLOOR, 1.0 - PROB_FLOOR)
    n = d.size
    loss = -float((mask * np.log(d) + (1.0 - mask) * np.log(1.0 - d)).sum()) / n
    grad = -(mask / d - (1.0 - mask) / (1.0 - d)) / n
    return loss, grad


def generator_loss(d_out, mask, generated, slice_, alpha: float) -> float:
    """Adversarial fooling term plus alpha-weighted observed-cell RMSE."""
    loss, _, _ = _generator_loss_grads(d_out, mask, generated, slice_, alpha)
    return loss


def _generator_loss_grads(d_out, mask, generated, slice_, alpha):
    mask = np.asarray(getattr(mask, "values", mask), dtype=np.float64)
    values = np.asarray(getattr(slice_, "values", slice_), dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    if generated.ndim == 3 and generated.shape[0] == 1:
        generated = generated[0]
    d = np.clip(np.asarray(d_out, dtype=np.float64), PROB_FLOOR, 1.0 - PROB_FLOOR)
    if d.ndim == 3 and d.shape[0] == 1:
        d = d[0]

    n_missing = float((1.0 - mask).sum())
    if n_missing > 0:
        adv = -float(((1.0 - mask) * np.log(d)).sum()) / n_missing
        grad_d = -(1.0 - mask) / d / n_missing
    else:
        adv = 0.0
        grad_d = np.zeros_like(d)

    n_obs = float(mask.sum())
    if n_obs > 0:
        err = np.where(mask == 1.0, generated - values, 0.0)
        rmse = float(np.sqrt((err * err).sum() / n_obs))
        if rmse > 1e-12:
            grad_gen = alpha * err / (n_obs * rmse)
        else:
            grad_gen = np.zeros_like(generated)
    else:
        rmse = 0.0
        grad_gen = np.zeros_like(generated)

    return adv + alpha * rmse, grad_d, grad_gen


def _generator_input(values, mask, noise):
    filled = np.where(mask == 1.0, values, noise)
    return np.stack([filled, mask, noise])


def train(t: PerformanceTensor, cfg: GainConfig) -> tuple[GainModel, list[EpochStats]]:
    """Alternate one discriminator and one generator step per learner image.

    Stops early when the epoch-level observed-cell RMSE has improved by less
    than cfg.early_stop_delta for cfg.early_stop_patience consecutive epochs.
    """
    if t.observed_count() == 0:
        raise DataError("cannot train on an all-missing tensor")
    n, m = t.num_questions, t.max_attempts
    rng = np.random.default_rng(cfg.seed)
    g_seed, d_seed = rng.integers(2**31, size=2)
    generator = build_generator(n, m, cfg, seed=int(g_seed))
    discriminator = build_discriminator(n, m, cfg, seed=int(d_seed))
    g_state = nn.AdamState.for_params(generator.params, lr=cfg.learning_rate)
    d_state = nn.AdamState.for_params(discriminator.params, lr=cfg.learning_rate)
    model = GainModel(generator, discriminator, cfg)

    slices = [learner_slice(t, u) for u in range(t.num_learners)]
    history: list[EpochStats] = []
    best_rmse = np.inf
    stall = 0
    for epoch in range(cfg.epochs):
        d_losses = []
        g_losses = []
        for slice_u, mask_u in slices:
            values = slice_u.values
            mask = mask_u.values
            noise = make_noise((n, m), cfg.noise_scale, rng)
            g_in = _generator_input(values, mask, noise)
            hint = make_hint(mask, cfg.hint_rate, rng)

            g_out, g_tape = nn.forward(generator, g_in, training=True, rng=rng)
            imputed = merge(values, mask, g_out)

            # discriminator step (generator output treated as constant)
            d_in = np.stack([imputed, hint])
            d_out, d_tape = nn.forward(discriminator, d_in, training=True, rng=rng)
            d_loss, d_grad = _discriminator_loss_grad(d_out[0], mask)
            d_grads, _ = nn.backward(discriminator, d_tape, d_grad[None])
            nn.adam_step(discriminator.params, d_grads, d_state)

            # generator step against the updated discriminator
            d_out2, d_tape2 = nn.forward(discriminator, d_in, training=True, rng=rng)
            g_loss, grad_d, grad_direct = _generator_loss_grads(
                d_out2[0], mask, g_out[0], values, cfg.alpha
            )
            _, d_input_grad = nn.backward(discriminator, d_tape2, grad_d[None])
            grad_gen = d_input_grad[0] * (1.0 - mask) + grad_direct
            g_grads, _ = nn.backward(generator, g_tape, grad_gen[None])
            nn.adam_step(generator.params, g_grads, g_state)

            d_losses.append(d_loss)
            g_losses.append(g_loss)

        rmse = _observed_rmse(model, slices)
        history.append(
            EpochStats(epoch, float(np.mean(d_losses)), float(np.mean(g_losses)), rmse)
        )
        if best_rmse - rmse > cfg.early_stop_delta:
            best_rmse = rmse
            stall = 0
        else:
            best_rmse = min(best_rmse, rmse)
            stall += 1
            if stall >= cfg.early_stop_patience:
                break
    return model, history


def _observed_rmse(model: GainModel, slices) -> float:
    sq_sum = 0.0
    count = 0.0
    for slice_u, mask_u in slices:
        g_out = _generate(model, slice_u.values, mask_u.values)
        err = np.where(mask_u.values == 1.0, g_out - slice_u.values, 0.0)
        sq_sum += float((err * err).sum())
        count += float(mask_u.values.sum())
    return float(np.sqrt(sq_sum / count)) if count else 0.0


def _generate(model: GainModel, values, mask) -> np.ndarray:
    """Eval-mode generator pass with zero noise."""
    zero = np.zeros_like(mask)
    g_in = _generator_input(values, mask, zero)
    out, _ = nn.forward(model.generator, g_in, training=False)
    return out[0]


def impute(model: GainModel, t: PerformanceTensor) -> DenseTensor:
    """Deterministically fill every missing cell; observed cells pass through."""
    expected = model.generator.layers[-1].shape
    if (t.num_questions, t.max_attempts) != expected[1:]:
        raise ValueError(
            f"tensor shape {t.shape[1:]} does not match model image shape {expected[1:]}"
        )
    filled = []
    for u in range(t.num_learners):
        slice_u, mask_u = learner_slice(t, u)
        g_out = _generate(model, slice_u.values, mask_u.values)
        filled.append(merge(slice_u.values, mask_u.values, g_out))
    return assemble(filled)


def save(model: GainModel, path) -> None:
    nn.save_checkpoint(model.generator, str(path) + ".generator.json",
                       extra={"config": vars(model.config) | {"role": "generator"}})
    nn.save_checkpoint(model.discriminator, str(path) + ".discriminator.json",
                       extra={"config": vars(model.config) | {"role": "discriminator"}})


def load(path) -> GainModel:
    generator, g_extra = nn.load_checkpoint(str(path) + ".generator.json")
    discriminator, _ = nn.load_checkpoint(str(path) + ".discriminator.json")
    cfg_fields = {k: v for k, v in g_extra["config"].items() if k != "role"}
    return GainModel(generator, discriminator, GainConfig(**cfg_fields))
