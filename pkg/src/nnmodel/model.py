from typing import Optional, Tuple

import torch
from torch import nn

from src.nnmodel.backbones import build_backbone
from src.nnmodel.schemas import BackboneSpec

N_PROGRESSION_CLASSES = 3
N_KL_CLASSES = 5


class MultiTaskModel(nn.Module):
    """Shared conv block, global average pooling, and two dropout + linear heads."""

    def __init__(self, conv_block: nn.Module, feature_channels: int, in_channels: int = 1, dropout: float = 0.5):
        super().__init__()
        self.in_channels = in_channels
        self.conv_block = conv_block
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head_prog = nn.Sequential(nn.Dropout(dropout), nn.Linear(feature_channels, N_PROGRESSION_CLASSES))
        self.head_kl = nn.Sequential(nn.Dropout(dropout), nn.Linear(feature_channels, N_KL_CLASSES))

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] == 1 and self.in_channels != 1:
            x = x.expand(-1, self.in_channels, -1, -1)
        return self.conv_block(x)

    def heads(self, feature_maps: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        pooled = torch.flatten(self.pool(feature_maps), 1)
        return self.head_prog(pooled), self.head_kl(pooled)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.heads(self.features(x))

    def set_conv_trainable(self, trainable: bool) -> None:
        for param in self.conv_block.parameters():
            param.requires_grad_(trainable)


def build_multitask_model(spec: BackboneSpec, seed: Optional[int] = None) -> MultiTaskModel:
    """Heads start from random noise; a seed makes that noise reproducible."""
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        conv_block, in_channels = build_backbone(spec)
        feature_channels = 512 if spec.name == "resnet18" else spec.feature_channels
        return MultiTaskModel(conv_block, feature_channels, in_channels)
