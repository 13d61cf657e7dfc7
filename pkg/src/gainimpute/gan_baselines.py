"""GAN, InfoGAN, and AmbientGAN imputation baselines.

All three are unconditional generators over learner images trained with
least-squares adversarial losses.  Because they do not condition on the
observed cells, imputing a specific learner requires inverting the
generator: a latent vector is fitted per learner by gradient descent on
the observed-cell RMSE, and the result is merged with the observations.

InfoGAN appends two structured latent codes and an auxiliary network that
reconstructs them from generated images; AmbientGAN passes both real and
generated images through a Gaussian-blur measurement whose width decays
linearly over training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DataError
from .gain import merge
from .tensors import DenseTensor, PerformanceTensor, assemble, learner_slice

NEUTRAL_FILL = 0.5  # stands in for unobserved cells in "real" images


@dataclass(frozen=True)
class GanConfig:
    latent_dim: int = 16
    learning_rate: float = 1e-4
    epochs: int = 100
    seed: int = 0
    dropout_rate: float = 0.2
    conv_channels: int = 16
    kernel_size: int = 3
    base_channels: int = 4
    # InfoGAN
    code_dims: int = 2
    mi_weight: float = 1.0
    # AmbientGAN
    sigma_start: float = 1.0
    sigma_end: float = 0.0
    # latent inversion at imputation time
    latent_steps: int = 200
    latent_lr: float = 0.05

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.mi_weight < 0:
            raise ValueError("mi_weight must be >= 0")
        if self.sigma_end < 0 or self.sigma_start < self.sigma_end:
            raise ValueError("blur schedule must be non-increasing and >= 0")


@dataclass
class GanModel:
    kind: str  # gan | infogan | ambientgan
    generator: nn.Network
    discriminator: nn.Network
    config: GanConfig
    q_net: nn.Network | None = None

    @property
    def latent_size(self) -> int:
        return self.config.latent_dim + (
            self.config.code_dims if self.kind == "infogan" else 0
        )


def gaussian_blur(grid: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over the last two axes with edge replication.

    The kernel is truncated at +-3 sigma and additionally capped so it never
    exceeds the axis it runs along; sigma = 0 is the identity.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    grid = np.asarray(grid, dtype=np.float64)
    if sigma == 0:
        return grid.copy()
    out = _apply_axis(grid, _blur_matrix(grid.shape[-2], sigma), axis=-2)
    return _apply_axis(out, _blur_matrix(grid.shape[-1], sigma), axis=-1)


def gaussian_blur_adjoint(grid: np.ndarray, sigma: float) -> np.ndarray:
    """Transpose of gaussian_blur as a linear operator (for backprop)."""
    grid = np.asarray(grid, dtype=np.float64)
    if sigma == 0:
        return grid.copy()
    out = _apply_axis(grid, _blur_matrix(grid.shape[-1], sigma).T, axis=-1)
    return _apply_axis(out, _blur_matrix(grid.shape[-2], sigma).T, axis=-2)


def _blur_matrix(length: int, sigma: float) -> np.ndarray:
    radius = min(int(np.ceil(3.0 * sigma)), (length - 1) // 2)
    offsets = np.arange(-radius, radius + 1)
    weights = np.exp(-(offsets.astype(float) ** 2) / (2.0 * sigma**2))
    weights /= weights.sum()
    k = np.zeros((length, length))
    for d, w in zip(offsets, weights):
        idx = np.clip(np.arange(length) + d, 0, length - 1)
        np.add.at(k, (np.arange(length), idx), w)
    return k


def _apply_axis(x: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(x, axis, -1)
    return np.moveaxis(moved @ k.T, -1, axis)


def lsgan_d_loss(d_real: float, d_fake: float) -> float:
    """Least-squares discriminator objective with targets 1 (real), 0 (fake)."""
    return 0.5 * ((d_real - 1.0) ** 2 + d_fake**2)


def lsgan_g_loss(d_fake: float) -> float:
    """Least-squares generator objective with target 1."""
    return 0.5 * (d_fake - 1.0) ** 2


def infogan_g_loss(d_fake: float, codes: np.ndarray, q_out: np.ndarray,
                   mi_weight: float) -> float:
    """Generator objective plus the mutual-information surrogate."""
    return lsgan_g_loss(d_fake) + mi_weight * float(np.mean((q_out - codes) ** 2))


def _hidden_blocks(in_c: int, cfg: GanConfig):
    layers = []
    for _ in range(5):
        layers += [
            nn.Conv2d(in_c, cfg.conv_channels, cfg.kernel_size),
            nn.BatchNorm(cfg.conv_channels),
            nn.Relu(),
        ]
        if cfg.dropout_rate > 0:
            layers.append(nn.Dropout(cfg.dropout_rate))
        in_c = cfg.conv_channels
    return layers


def build_gan_generator(n: int, m: int, cfg: GanConfig, latent_size: int,
                        seed: int) -> nn.Network:
    layers = [
        nn.Dense(latent_size, cfg.base_channels * n * m),
        nn.Reshape((cfg.base_channels, n, m)),
    ]
    layers += _hidden_blocks(cfg.base_channels, cfg)
    layers += [
        nn.Conv2d(cfg.conv_channels, 1, cfg.kernel_size),
        nn.Sigmoid(),
        nn.Reshape((1, n, m)),
    ]
    return nn.Network(layers, seed=seed)


def build_gan_discriminator(n: int, m: int, cfg: GanConfig, seed: int) -> nn.Network:
    layers = _hidden_blocks(1, cfg)
    layers.append(nn.Dense(cfg.conv_channels * n * m, 1))
    return nn.Network(layers, seed=seed)


def build_q_network(n: int, m: int, cfg: GanConfig, seed: int) -> nn.Network:
    layers = [
        nn.Conv2d(1, cfg.conv_channels, cfg.kernel_size),
        nn.BatchNorm(cfg.conv_channels),
        nn.Relu(),
        nn.Conv2d(cfg.conv_channels, cfg.conv_channels, cfg.kernel_size),
        nn.Relu(),
        nn.Dense(cfg.conv_channels * n * m, cfg.code_dims),
    ]
    return nn.Network(layers, seed=seed)


def _blur_sigma(cfg: GanConfig, epoch: int) -> float:
    if cfg.epochs <= 1:
        return cfg.sigma_start
    frac = epoch / (cfg.epochs - 1)
    return cfg.sigma_start + (cfg.sigma_end - cfg.sigma_start) * frac


def _train(t: PerformanceTensor, cfg: GanConfig, kind: str) -> GanModel:
    if t.observed_count() == 0:
        raise DataError("cannot train on an all-missing tensor")
    n, m = t.num_questions, t.max_attempts
    rng = np.random.default_rng(cfg.seed)
    seeds = rng.integers(2**31, size=3)
    latent_size = cfg.latent_dim + (cfg.code_dims if kind == "infogan" else 0)
    generator = build_gan_generator(n, m, cfg, latent_size, seed=int(seeds[0]))
    discriminator = build_gan_discriminator(n, m, cfg, seed=int(seeds[1]))
    q_net = build_q_network(n, m, cfg, seed=int(seeds[2])) if kind == "infogan" else None
    g_state = nn.AdamState.for_params(generator.params, lr=cfg.learning_rate)
    d_state = nn.AdamState.for_params(discriminator.params, lr=cfg.learning_rate)
    q_state = nn.AdamState.for_params(q_net.params, lr=cfg.learning_rate) if q_net else None

    reals = []
    for u in range(t.num_learners):
        slice_u, mask_u = learner_slice(t, u)
        reals.append(np.where(mask_u.values == 1.0, slice_u.values, NEUTRAL_FILL)[None])

    for epoch in range(cfg.epochs):
        sigma = _blur_sigma(cfg, epoch) if kind == "ambientgan" else 0.0
        for real in reals:
            z = rng.standard_normal(latent_size)
            if kind == "infogan":
                z[cfg.latent_dim :] = rng.uniform(-1.0, 1.0, cfg.code_dims)
            z_grid = z.reshape(latent_size, 1, 1)

            fake, g_tape = nn.forward(generator, z_grid, training=True, rng=rng)
            real_m = gaussian_blur(real, sigma) if sigma > 0 else real
            fake_m = gaussian_blur(fake, sigma) if sigma > 0 else fake

            # discriminator step
            d_real, tape_r = nn.forward(discriminator, real_m, training=True, rng=rng)
            d_fake, tape_f = nn.forward(discriminator, fake_m, training=True, rng=rng)
            grads_r, _ = nn.backward(discriminator, tape_r,
                                     np.full_like(d_real, d_real.item() - 1.0))
            grads_f, _ = nn.backward(discriminator, tape_f,
                                     np.full_like(d_fake, d_fake.item()))
            d_grads = {k: grads_r.get(k, 0) + grads_f.get(k, 0) for k in discriminator.params}
            nn.adam_step(discriminator.params, d_grads, d_state)

            # generator step against the updated discriminator
            d_fake2, tape_f2 = nn.forward(discriminator, fake_m, training=True, rng=rng)
            _, fake_m_grad = nn.backward(discriminator, tape_f2,
                                         np.full_like(d_fake2, d_fake2.item() - 1.0))
            fake_grad = gaussian_blur_adjoint(fake_m_grad, sigma) if sigma > 0 else fake_m_grad
            if kind == "infogan":
                codes = z[cfg.latent_dim :]
                q_out, q_tape = nn.forward(q_net, fake, training=True, rng=rng)
                q_err = 2.0 * cfg.mi_weight * (q_out.reshape(-1) - codes) / cfg.code_dims
                q_grads, q_input_grad = nn.backward(q_net, q_tape,
                                                    q_err.reshape(q_out.shape))
                nn.adam_step(q_net.params, q_grads, q_state)
                fake_grad = fake_grad + q_input_grad
            g_grads, _ = nn.backward(generator, g_tape, fake_grad)
            nn.adam_step(generator.params, g_grads, g_state)

    return GanModel(kind, generator, discriminator, cfg, q_net=q_net)


def _invert_latent(model: GanModel, values: np.ndarray, mask: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    """Fit a latent vector to the observed cells by RMSE gradient descent."""
    cfg = model.config
    z = {"z": rng.standard_normal(model.latent_size)}
    state = nn.AdamState.for_params(z, lr=cfg.latent_lr)
    n_obs = float(mask.sum())
    for _ in range(cfg.latent_steps):
        out, tape = nn.forward(model.generator, z["z"].reshape(-1, 1, 1), training=False)
        if n_obs == 0:
            break
        err = np.where(mask == 1.0, out[0] - values, 0.0)
        rmse = float(np.sqrt((err * err).sum() / n_obs))
        if rmse <= 1e-12:
            break
        out_grad = (err / (n_obs * rmse))[None]
        _, z_grad = nn.backward(model.generator, tape, out_grad)
        nn.adam_step(z, {"z": z_grad.reshape(-1)}, state)
    out, _ = nn.forward(model.generator, z["z"].reshape(-1, 1, 1), training=False)
    return out[0]


def _impute(model: GanModel, t: PerformanceTensor) -> DenseTensor:
    expected = model.generator.layers[-1].shape
    if (t.num_questions, t.max_attempts) != expected[1:]:
        raise ValueError(
            f"tensor shape {t.shape[1:]} does not match model image shape {expected[1:]}"
        )
    rng = np.random.default_rng(model.config.seed + 1)
    filled = []
    for u in range(t.num_learners):
        slice_u, mask_u = learner_slice(t, u)
        generated = _invert_latent(model, slice_u.values, mask_u.values, rng)
        filled.append(merge(slice_u.values, mask_u.values, generated))
    return assemble(filled)


def gan_train(t: PerformanceTensor, cfg: GanConfig) -> GanModel:
    return _train(t, cfg, "gan")


def gan_impute(model: GanModel, t: PerformanceTensor) -> DenseTensor:
    return _impute(model, t)


def infogan_train(t: PerformanceTensor, cfg: GanConfig) -> GanModel:
    return _train(t, cfg, "infogan")


def infogan_impute(model: GanModel, t: PerformanceTensor) -> DenseTensor:
    return _impute(model, t)


def ambientgan_train(t: PerformanceTensor, cfg: GanConfig) -> GanModel:
    return _train(t, cfg, "ambientgan")


def ambientgan_impute(model: GanModel, t: PerformanceTensor) -> DenseTensor:
    return _impute(model, t)


def code_reconstruction_error(model: GanModel, n_samples: int, seed: int) -> float:
    """Mean squared error of the auxiliary network recovering sampled codes."""
    if model.q_net is None:
        raise ValueError("model has no auxiliary code network")
    cfg = model.config
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(n_samples):
        z = rng.standard_normal(model.latent_size)
        z[cfg.latent_dim :] = rng.uniform(-1.0, 1.0, cfg.code_dims)
        fake, _ = nn.forward(model.generator, z.reshape(-1, 1, 1), training=False)
        q_out, _ = nn.forward(model.q_net, fake, training=False)
        total += float(np.mean((q_out.reshape(-1) - z[cfg.latent_dim :]) ** 2))
    return total / n_samples
