"""Underwater image enhancement with windowed attention, self-contained.

A small differentiable tensor core (numpy arrays plus a gradient tape), a
U-shaped window-attention generator, a patch discriminator, adversarial + L1
training, image quality metrics, and a physics-based degradation simulator,
with a CLI tying them together.
"""

__version__ = "0.1.0"

from .tensor import Tensor, no_grad, reset_tape  # noqa: F401
from .errors import (  # noqa: F401
    AquaswinError,
    CheckpointError,
    ConfigError,
    ContractError,
    PairingError,
    PpmError,
    ShapeError,
)
from .generator import ModelConfig, build_generator, generator_forward  # noqa: F401
from .discriminator import build_discriminator, discriminator_forward  # noqa: F401
from .training import (  # noqa: F401
    TrainConfig,
    TrainingState,
    adam_step,
    discriminator_loss,
    gan_generator_loss,
    generator_loss,
    init_training,
    l1_loss,
    train_epoch,
    train_step,
)
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: F401
from .metrics import MetricReport, evaluate_pairs, hist_equalize, psnr, ssim, uiqm  # noqa: F401
from .data import (  # noqa: F401
    DegradationParams,
    ImagePair,
    degrade,
    generate_pairs,
    load_paired_dir,
    read_ppm,
    write_ppm,
)
