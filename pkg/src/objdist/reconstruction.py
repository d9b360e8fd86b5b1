"""Masked reconstruction over per-object token grids.

Only kept tokens pass through the local encoder; the decoder re-assembles the
full-length sequence with a learned mask token (plus positional embedding) at
masked slots and regresses raw RGB patches of the box crop. One learned
positional table per grid cell is shared by the encoder and decoder pathways.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .attention import TransformerStack
from .data import BoundingBox, clamp_box
from .roi import MaskPlan, TokenSet


@dataclass
class EncodedTokens:
    """Encoder output restricted to kept tokens, in kept-position order."""

    tokens: torch.Tensor
    kept_positions: list[tuple[int, int]]
    grid_hw: tuple[int, int]


@dataclass
class PatchTarget:
    """Per-token RGB targets: (n_tokens, patch_px * patch_px * 3) in [0, 1]."""

    patches: torch.Tensor
    patch_px: int
    grid_hw: tuple[int, int]


class MaskedTokenAutoencoder(nn.Module):
    def __init__(
        self,
        in_channels: int,
        d_model: int = 64,
        encoder_depth: int = 2,
        encoder_heads: int = 4,
        decoder_depth: int = 2,
        decoder_heads: int = 8,
        patch_px: int = 4,
        grid_hw: tuple[int, int] = (8, 8),
    ):
        super().__init__()
        self.grid_hw = grid_hw
        self.patch_px = patch_px
        n_tokens = grid_hw[0] * grid_hw[1]
        self.token_proj = nn.Linear(in_channels, d_model)
        self.pos_embed = nn.Parameter(torch.zeros(n_tokens, d_model))
        self.encoder = TransformerStack(d_model, encoder_depth, encoder_heads)
        self.mask_token = nn.Parameter(torch.zeros(d_model))
        self.decoder = TransformerStack(d_model, decoder_depth, decoder_heads)
        self.out_proj = nn.Linear(d_model, patch_px * patch_px * 3)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.mask_token, std=0.02)

    def encode(self, tokens: torch.Tensor, kept_idx: torch.Tensor) -> torch.Tensor:
        x = self.token_proj(tokens[kept_idx]) + self.pos_embed[kept_idx]
        return self.encoder(x.unsqueeze(0)).squeeze(0)

    def decode(self, encoded: torch.Tensor, kept_idx: torch.Tensor, masked_idx: torch.Tensor) -> torch.Tensor:
        n_tokens = self.pos_embed.shape[0]
        seq = self.pos_embed.new_zeros((n_tokens, encoded.shape[1]))
        seq = seq.index_copy(0, kept_idx, encoded)
        if masked_idx.numel():
            fill = self.mask_token.unsqueeze(0) + self.pos_embed[masked_idx]
            seq = seq.index_copy(0, masked_idx, fill)
        out = self.decoder(seq.unsqueeze(0)).squeeze(0)
        return self.out_proj(out)


def _indices(plan: MaskPlan, device: torch.device) -> tuple[torch.Tensor, torch.Tensor]:
    kept = torch.from_numpy(plan.kept_indices).to(device)
    masked = torch.from_numpy(plan.masked_indices).to(device)
    return kept, masked


def local_encode(model: MaskedTokenAutoencoder, tokens: TokenSet, plan: MaskPlan) -> EncodedTokens:
    """Run the encoder over kept tokens only; masked values never enter."""
    if plan.n_tokens != tokens.tokens.shape[0]:
        raise ValueError(
            f"plan over {plan.n_tokens} tokens does not match {tokens.tokens.shape[0]} tokens"
        )
    kept_idx, _ = _indices(plan, tokens.tokens.device)
    if kept_idx.numel() == 0:
        raise ValueError("mask plan keeps zero tokens")
    encoded = model.encode(tokens.tokens, kept_idx)
    kept_positions = [tokens.grid_positions[i] for i in plan.kept_indices]
    return EncodedTokens(tokens=encoded, kept_positions=kept_positions, grid_hw=tokens.grid_hw)


def reconstruct(model: MaskedTokenAutoencoder, encoded: EncodedTokens, plan: MaskPlan) -> torch.Tensor:
    """Predict the full (n_tokens, patch_px^2 * 3) patch grid."""
    if plan.n_tokens != model.pos_embed.shape[0]:
        raise ValueError("plan size does not match the model's token grid")
    if len(encoded.kept_positions) != int(np.count_nonzero(plan.kept)):
        raise ValueError("encoded tokens do not match the plan's kept set")
    kept_idx, masked_idx = _indices(plan, encoded.tokens.device)
    return model.decode(encoded.tokens, kept_idx, masked_idx)


def _resample_crop(image: np.ndarray, box: BoundingBox, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinearly resample the box crop to out_hw (half-pixel centers, clamped)."""
    _, H, W = image.shape
    oh, ow = out_hw
    sx = box.x + (np.arange(ow, dtype=np.float64) + 0.5) * (box.w / ow) - 0.5
    sy = box.y + (np.arange(oh, dtype=np.float64) + 0.5) * (box.h / oh) - 0.5
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    tx = sx - x0
    ty = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x0c, x1c = np.clip(x0, 0, W - 1), np.clip(x0 + 1, 0, W - 1)
    y0c, y1c = np.clip(y0, 0, H - 1), np.clip(y0 + 1, 0, H - 1)
    tx = tx[None, None, :]
    ty = ty[None, :, None]
    v00 = image[:, y0c[:, None], x0c[None, :]]
    v01 = image[:, y0c[:, None], x1c[None, :]]
    v10 = image[:, y1c[:, None], x0c[None, :]]
    v11 = image[:, y1c[:, None], x1c[None, :]]
    return (
        v00 * (1 - ty) * (1 - tx)
        + v01 * (1 - ty) * tx
        + v10 * ty * (1 - tx)
        + v11 * ty * tx
    )


def extract_target(
    image: np.ndarray,
    box: BoundingBox,
    grid: tuple[int, int] = (8, 8),
    patch_px: int = 4,
) -> PatchTarget:
    """RGB patches of the clamped box crop, one per token, row-major.

    The crop is resampled to (grid_h * patch_px, grid_w * patch_px) and split
    into grid_h * grid_w patches; token k's patch sits at grid position k.
    Each patch flattens as (patch_row, patch_col, rgb).
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"image must be (3, H, W), got {image.shape}")
    gh, gw = grid
    _, H, W = image.shape
    clamped = clamp_box(box, W, H)
    crop = _resample_crop(image.astype(np.float64), clamped, (gh * patch_px, gw * patch_px))
    patches = (
        crop.reshape(3, gh, patch_px, gw, patch_px)
        .transpose(1, 3, 2, 4, 0)
        .reshape(gh * gw, patch_px * patch_px * 3)
    )
    return PatchTarget(
        patches=torch.from_numpy(np.ascontiguousarray(patches)),
        patch_px=patch_px,
        grid_hw=(gh, gw),
    )


def assemble_patches(patches: np.ndarray, grid: tuple[int, int], patch_px: int) -> np.ndarray:
    """Inverse of the patch split: (n_tokens, p*p*3) -> (3, gh*p, gw*p)."""
    gh, gw = grid
    p = patch_px
    return (
        patches.reshape(gh, gw, p, p, 3)
        .transpose(4, 0, 2, 1, 3)
        .reshape(3, gh * p, gw * p)
    )


def reconstruction_loss(
    prediction: torch.Tensor,
    target: PatchTarget,
    plan: MaskPlan | None = None,
    scope: str = "all_tokens",
) -> torch.Tensor:
    """Mean squared error over the scoped token entries of one object.

    ``scope`` is "all_tokens" (default: the loss covers the whole object
    crop) or "masked_only" (classical masked-autoencoder variant; requires a
    plan). Averaging over the objects of a batch is the caller's job.
    """
    if prediction.shape != target.patches.shape:
        raise ValueError(
            f"prediction {tuple(prediction.shape)} does not match target "
            f"{tuple(target.patches.shape)}"
        )
    tgt = target.patches.to(prediction.dtype)
    if scope == "all_tokens":
        return ((prediction - tgt) ** 2).mean()
    if scope == "masked_only":
        if plan is None:
            raise ValueError("masked_only scope needs a mask plan")
        idx = torch.from_numpy(plan.masked_indices).to(prediction.device)
        if idx.numel() == 0:
            return prediction.new_zeros(())
        return ((prediction[idx] - tgt[idx]) ** 2).mean()
    raise ValueError(f"unknown scope {scope!r}")
