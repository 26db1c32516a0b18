"""Adversarial video generator: networks, losses and training loops."""
from .crop import mouth_crop, mouth_rect
from .flow import block_flow, dense_flow
from .losses import LossWeights, hinge_losses, matching_loss
from .networks import (ADAIN, INSTANCE, Embedder, FeatureStack, Generator, ImageDiscriminator,
                       MouthDiscriminator, TemporalDiscriminator, scale_lengths)
from .training import (Networks, PersonClip, TrainConfig, Trainer, embed_average, finetune_init,
                       finetune_train, generate_frame, load_networks, realism_score, rollout,
                       save_networks, synthesize, temporal_score, train_init_stage)

__all__ = [
    "mouth_crop",
    "mouth_rect",
    "block_flow",
    "dense_flow",
    "LossWeights",
    "hinge_losses",
    "matching_loss",
    "ADAIN",
    "INSTANCE",
    "Embedder",
    "FeatureStack",
    "Generator",
    "ImageDiscriminator",
    "MouthDiscriminator",
    "TemporalDiscriminator",
    "scale_lengths",
    "Networks",
    "PersonClip",
    "TrainConfig",
    "Trainer",
    "embed_average",
    "finetune_init",
    "finetune_train",
    "generate_frame",
    "load_networks",
    "realism_score",
    "rollout",
    "save_networks",
    "synthesize",
    "temporal_score",
    "train_init_stage",
]
