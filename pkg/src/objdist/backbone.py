"""Dense image features: a small convolutional trunk with FPN-style merging.

The trunk downsamples in three stride-2 stages; lateral 1x1 projections and a
nearest-neighbor top-down pass merge the stages into one feature map at the
configured output stride. The first convolution always takes 4 channels: RGB
plus the box-centers heatmap (zeros when the heatmap is disabled, leaving the
extra weights unused).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class FeatureMap:
    """Dense features (channels, H', W') at ``stride`` w.r.t. the input image."""

    values: torch.Tensor
    stride: int
    image_hw: tuple[int, int]

    def __post_init__(self):
        H, W = self.image_hw
        expect = (-(-H // self.stride), -(-W // self.stride))
        got = tuple(self.values.shape[-2:])
        if got != expect:
            raise ValueError(f"feature map {got} inconsistent with stride {self.stride} on {self.image_hw}")


def _stage(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=2, padding=1),
        nn.GELU(),
        nn.Conv2d(out_ch, out_ch, kernel_size=3, stride=1, padding=1),
        nn.GELU(),
    )


class ContextEncoder(nn.Module):
    """Image (+ optional centers heatmap) -> FeatureMap at a fixed stride."""

    def __init__(
        self,
        stage_widths: tuple[int, ...] = (32, 64, 128),
        fpn_width: int = 64,
        out_stride: int = 4,
        fpn_merge: str = "add",
    ):
        super().__init__()
        if fpn_merge not in ("add", "concat"):
            raise ValueError(f"fpn_merge must be 'add' or 'concat', got {fpn_merge!r}")
        strides = [2 ** (i + 1) for i in range(len(stage_widths))]
        if out_stride not in strides:
            raise ValueError(f"out_stride {out_stride} not among stage strides {strides}")
        self.out_stride = out_stride
        self.fpn_width = fpn_width
        self.fpn_merge = fpn_merge
        self.stage_strides = strides

        widths = (4,) + tuple(stage_widths)
        self.stages = nn.ModuleList(_stage(widths[i], widths[i + 1]) for i in range(len(stage_widths)))

        # Lateral projections only for pyramid levels at or above out_stride.
        self.fpn_levels = [i for i, s in enumerate(strides) if s >= out_stride]
        self.laterals = nn.ModuleDict(
            {str(i): nn.Conv2d(stage_widths[i], fpn_width, kernel_size=1) for i in self.fpn_levels}
        )
        if fpn_merge == "concat":
            self.merge_projs = nn.ModuleDict(
                {str(i): nn.Conv2d(2 * fpn_width, fpn_width, kernel_size=1) for i in self.fpn_levels[:-1]}
            )

    def forward(self, image: torch.Tensor, heatmap: torch.Tensor | None = None) -> FeatureMap:
        if image.ndim != 3 or image.shape[0] != 3:
            raise ValueError(f"image must be (3, H, W), got {tuple(image.shape)}")
        H, W = image.shape[1:]
        if H < self.out_stride or W < self.out_stride:
            raise ValueError(f"image {H}x{W} smaller than output stride {self.out_stride}")
        if float(image.min()) < 0.0 or float(image.max()) > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        if heatmap is None:
            heatmap = image.new_zeros((1, H, W))
        if heatmap.shape[-2:] != (H, W):
            raise ValueError(
                f"heatmap {tuple(heatmap.shape[-2:])} does not match image {H}x{W}"
            )

        x = torch.cat([image, heatmap.reshape(1, H, W)], dim=0).unsqueeze(0)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)

        # Top-down accumulation from the coarsest level to out_stride.
        top: torch.Tensor | None = None
        for i in reversed(self.fpn_levels):
            lateral = self.laterals[str(i)](feats[i])
            if top is None:
                top = lateral
            else:
                up = F.interpolate(top, size=lateral.shape[-2:], mode="nearest")
                if self.fpn_merge == "add":
                    top = lateral + up
                else:
                    top = self.merge_projs[str(i)](torch.cat([lateral, up], dim=1))
            if self.stage_strides[i] == self.out_stride:
                break
        assert top is not None
        return FeatureMap(values=top.squeeze(0), stride=self.out_stride, image_hw=(int(H), int(W)))


def encode_context(
    encoder: ContextEncoder, image: torch.Tensor, heatmap: torch.Tensor | None = None
) -> FeatureMap:
    return encoder(image, heatmap)
