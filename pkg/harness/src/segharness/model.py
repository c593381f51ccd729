"""UNet-style decoder over a 50-layer residual encoder."""

from __future__ import annotations

import warnings

import torch
import torch.nn as nn
import torch.nn.functional as F
import torchvision


def _conv_block(in_ch, out_ch):
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class UNetResNet50(nn.Module):
    """Encoder-decoder segmentation net: ResNet-50 features with skip
    connections to a light convolutional decoder.

    Grayscale input is replicated to three channels so pretrained encoder
    weights stay applicable. Input sides must be divisible by 32.
    """

    def __init__(self, n_classes: int = 3, pretrained: bool = True):
        super().__init__()
        weights = None
        if pretrained:
            try:
                weights = torchvision.models.ResNet50_Weights.IMAGENET1K_V2
                backbone = torchvision.models.resnet50(weights=weights)
            except Exception as exc:
                warnings.warn(f"pretrained weights unavailable ({exc}); "
                              "falling back to random initialization")
                backbone = torchvision.models.resnet50(weights=None)
        else:
            backbone = torchvision.models.resnet50(weights=None)

        self.stem = nn.Sequential(backbone.conv1, backbone.bn1, backbone.relu)
        self.pool = backbone.maxpool
        self.layer1 = backbone.layer1
        self.layer2 = backbone.layer2
        self.layer3 = backbone.layer3
        self.layer4 = backbone.layer4

        self.up4 = _conv_block(2048 + 1024, 512)
        self.up3 = _conv_block(512 + 512, 256)
        self.up2 = _conv_block(256 + 256, 128)
        self.up1 = _conv_block(128 + 64, 64)
        self.head = nn.Conv2d(64, n_classes, 1)

    def forward(self, x):
        if x.shape[1] == 1:
            x = x.repeat(1, 3, 1, 1)
        s0 = self.stem(x)            # 64, /2
        s1 = self.layer1(self.pool(s0))   # 256, /4
        s2 = self.layer2(s1)         # 512, /8
        s3 = self.layer3(s2)         # 1024, /16
        s4 = self.layer4(s3)         # 2048, /32

        d4 = self.up4(torch.cat([F.interpolate(s4, scale_factor=2, mode="nearest"),
                                 s3], dim=1))
        d3 = self.up3(torch.cat([F.interpolate(d4, scale_factor=2, mode="nearest"),
                                 s2], dim=1))
        d2 = self.up2(torch.cat([F.interpolate(d3, scale_factor=2, mode="nearest"),
                                 s1], dim=1))
        d1 = self.up1(torch.cat([F.interpolate(d2, scale_factor=2, mode="nearest"),
                                 s0], dim=1))
        return self.head(F.interpolate(d1, scale_factor=2, mode="nearest"))
