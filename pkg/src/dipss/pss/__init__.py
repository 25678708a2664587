from .estimator import PseudoScannerStandardizer, apply_pss, volume_slices
from .losses import (
    adversarial_loss,
    cycle_loss,
    generator_adversarial_loss,
    identity_loss,
    total_pss_loss,
)
from .networks import Discriminator, Generator, discriminator_forward, generator_forward
from .training import PssParams, PssTrainConfig, train_pss

__all__ = [
    "Discriminator",
    "Generator",
    "PseudoScannerStandardizer",
    "PssParams",
    "PssTrainConfig",
    "adversarial_loss",
    "apply_pss",
    "cycle_loss",
    "discriminator_forward",
    "generator_adversarial_loss",
    "generator_forward",
    "identity_loss",
    "total_pss_loss",
    "train_pss",
    "volume_slices",
]
