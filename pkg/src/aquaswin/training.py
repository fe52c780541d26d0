"""Adversarial training: losses, Adam, and the alternating update loop.

One step updates the discriminator on (real, detached fake) pairs, then
updates the generator with the non-saturating adversarial term plus a heavily
weighted L1 term toward the reference.  With the discriminator disabled the
generator trains on the weighted L1 term alone and the adversarial losses are
reported as zero.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .discriminator import DiscriminatorParams, build_discriminator, discriminator_forward
from .errors import ContractError, ShapeError
from .generator import GeneratorParams, ModelConfig, build_generator, generator_forward
from .tensor import Tensor


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    lambda_l1: float = 100.0
    batch_size: int = 4
    epochs: int = 1
    seed: int = 0

    def validate(self) -> None:
        from .errors import ConfigError

        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.lambda_l1 < 0:
            raise ConfigError(f"lambda_l1 must be non-negative, got {self.lambda_l1}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# losses


def _check_probs(d: Tensor, caller: str) -> None:
    if d.data.size == 0:
        raise ContractError(f"{caller}: empty probability map")
    if d.data.min() < 0.0 or d.data.max() > 1.0:
        raise ContractError(f"{caller}: probabilities outside [0, 1]")


def l1_loss(fake: Tensor, target: Tensor) -> Tensor:
    if fake.shape != target.shape:
        raise ShapeError(f"l1_loss shape mismatch: {fake.shape} vs {target.shape}")
    return (fake - target).abs_mean()


def gan_generator_loss(d_fake: Tensor) -> Tensor:
    """Non-saturating generator objective: -mean(log D(fake))."""
    _check_probs(d_fake, "gan_generator_loss")
    return -T.log(d_fake).mean()


def generator_loss(d_fake: Tensor, fake: Tensor, target: Tensor, lam: float) -> Tensor:
    return gan_generator_loss(d_fake) + float(lam) * l1_loss(fake, target)


def discriminator_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """-mean(log D(real)) - mean(log(1 - D(fake))); logs are floored at 1e-12."""
    _check_probs(d_real, "discriminator_loss")
    _check_probs(d_fake, "discriminator_loss")
    one = Tensor(np.ones((), dtype=d_fake.data.dtype))
    return -T.log(d_real).mean() - T.log(one - d_fake).mean()


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name, plus a step count."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(
    state: AdamState,
    named_params,
    lr: float = 2e-4,
    beta1: float = 0.5,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update; consumes and clears every gradient."""
    params = list(named_params)
    for name, p in params:
        if p.grad is None:
            raise ContractError(f"adam_step: parameter {name!r} has no gradient")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params:
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = v
        else:
            v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.grad = None


# ---------------------------------------------------------------------------
# training state and steps


@dataclass
class TrainingState:
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    gen: GeneratorParams
    disc: DiscriminatorParams
    adam_g: AdamState
    adam_d: AdamState
    epoch: int
    rng: np.random.Generator


def init_training(model_cfg: ModelConfig, train_cfg: TrainConfig) -> TrainingState:
    model_cfg.validate()
    train_cfg.validate()
    return TrainingState(
        model_cfg=model_cfg,
        train_cfg=train_cfg,
        gen=build_generator(model_cfg, seed=model_cfg.seed),
        disc=build_discriminator(seed=model_cfg.seed + 1),
        adam_g=AdamState(),
        adam_d=AdamState(),
        epoch=0,
        rng=np.random.default_rng(train_cfg.seed),
    )


def _zero_all(state: TrainingState) -> None:
    for _, p in state.gen.named():
        p.grad = None
    for _, p in state.disc.named():
        p.grad = None


def train_step(state: TrainingState, x: Tensor, y: Tensor) -> dict:
    """One alternating update on a batch (x degraded, y reference).

    Returns the step's scalar losses.  The discriminator sees the fake
    detached for its own update; the generator's adversarial term then uses
    the already-updated discriminator.
    """
    tc = state.train_cfg
    T.reset_tape()
    _zero_all(state)

    fake = generator_forward(state.gen, x, train=True)

    if state.model_cfg.use_discriminator:
        real_pair = T.concat([x, y], axis=1)
        fake_pair = T.concat([x, fake.detach()], axis=1)
        d_real = discriminator_forward(state.disc, real_pair, train=True)
        d_fake = discriminator_forward(state.disc, fake_pair, train=True)
        loss_d = discriminator_loss(d_real, d_fake)
        loss_d.backward()
        adam_step(state.adam_d, state.disc.named(), tc.lr, tc.beta1, tc.beta2)

        d_fake2 = discriminator_forward(state.disc, T.concat([x, fake], axis=1), train=True)
        l1 = l1_loss(fake, y)
        adv = gan_generator_loss(d_fake2)
        loss_g = adv + float(tc.lambda_l1) * l1
        loss_g.backward()
        adam_step(state.adam_g, state.gen.named(), tc.lr, tc.beta1, tc.beta2)
        # the generator's backward also deposited grads into the
        # discriminator; drop them so the next step starts clean
        for _, p in state.disc.named():
            p.grad = None
        out = {"loss_d": loss_d.item(), "loss_g": loss_g.item(), "l1": l1.item()}
    else:
        l1 = l1_loss(fake, y)
        loss_g = float(tc.lambda_l1) * l1
        loss_g.backward()
        adam_step(state.adam_g, state.gen.named(), tc.lr, tc.beta1, tc.beta2)
        out = {"loss_d": 0.0, "loss_g": loss_g.item(), "l1": l1.item()}

    T.reset_tape()
    for key, value in out.items():
        if not np.isfinite(value):
            raise ContractError(f"train_step: {key} became non-finite ({value})")
    return out


def stack_batch(pairs) -> tuple:
    """List of image pairs -> (degraded, reference) float32 batch tensors."""
    x = np.stack([p.degraded for p in pairs]).astype(T.DTYPE)
    y = np.stack([p.reference for p in pairs]).astype(T.DTYPE)
    return Tensor(x), Tensor(y)


def train_epoch(state: TrainingState, pairs, augment: bool = True) -> dict:
    """Shuffle, (optionally) flip-augment, and run batched steps over the set."""
    from .data import augment_hflip

    if not pairs:
        raise ContractError("train_epoch: empty dataset")
    order = state.rng.permutation(len(pairs))
    bs = state.train_cfg.batch_size
    sums = {"loss_d": 0.0, "loss_g": 0.0, "l1": 0.0}
    steps = 0
    for start in range(0, len(order), bs):
        chosen = [pairs[i] for i in order[start : start + bs]]
        if augment:
            chosen = [augment_hflip(p, state.rng) for p in chosen]
        x, y = stack_batch(chosen)
        losses = train_step(state, x, y)
        for k in sums:
            sums[k] += losses[k]
        steps += 1
    state.epoch += 1
    means = {k: v / steps for k, v in sums.items()}
    means["epoch"] = state.epoch
    means["steps"] = steps
    return means
