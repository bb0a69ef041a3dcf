"""
Convolutional feature extractors.

Every backbone maps a B x in_channels x H x W batch to B x C x h x w feature
maps; pooling and heads live in MultiTaskModel.
"""
import logging
from typing import Tuple

import torch
from torch import nn
from torchvision import models

from src.core.errors import ModelLoadError
from src.nnmodel.schemas import BackboneSpec

logger = logging.getLogger(__name__)


def _conv_bn_relu(cin: int, cout: int, kernel: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


def tiny_backbone(feature_channels: int) -> nn.Sequential:
    """Desk-scale extractor: four stride-2 stages, 300 px -> 19 px."""
    width = max(feature_channels // 4, 4)
    return nn.Sequential(
        _conv_bn_relu(1, width, 5, 2),
        _conv_bn_relu(width, width * 2, 3, 2),
        _conv_bn_relu(width * 2, width * 4, 3, 2),
        _conv_bn_relu(width * 4, feature_channels, 3, 2),
    )


def resnet18_backbone() -> nn.Sequential:
    net = models.resnet18(weights=None)
    # drop global pooling and the classifier
    return nn.Sequential(*list(net.children())[:-2])


def build_backbone(spec: BackboneSpec) -> Tuple[nn.Module, int]:
    """Returns (conv_block, expected input channels)."""
    if spec.name == "tiny":
        conv_block, in_channels = tiny_backbone(spec.feature_channels), 1
    elif spec.name == "resnet18":
        conv_block, in_channels = resnet18_backbone(), 3
    else:
        raise ValueError(f"unknown backbone {spec.name!r}")

    if spec.pretrained_weights is not None:
        try:
            state = torch.load(spec.pretrained_weights, map_location="cpu", weights_only=True)
            conv_block.load_state_dict(state, strict=True)
        except (RuntimeError, KeyError, FileNotFoundError) as exc:
            raise ModelLoadError(f"cannot load {spec.pretrained_weights} into {spec.name}: {exc}") from exc
        logger.info(f"Loaded backbone weights from {spec.pretrained_weights}")
    return conv_block, in_channels
