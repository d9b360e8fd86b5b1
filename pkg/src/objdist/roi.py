"""Per-object feature extraction: RoI alignment, tokens, and mask plans."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .backbone import FeatureMap
from .data import BoundingBox, clamp_box


@dataclass
class RoIFeatureGrid:
    """Fixed-size (channels, h, w) feature grid pooled under one box."""

    values: torch.Tensor
    source_box: BoundingBox

    @property
    def grid_hw(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]


@dataclass
class TokenSet:
    """Row-major flattening of an RoI grid: token r*w + c carries grid[:, r, c]."""

    tokens: torch.Tensor
    grid_positions: list[tuple[int, int]]
    grid_hw: tuple[int, int]


@dataclass(frozen=True)
class MaskPlan:
    """Kept/masked split over a token grid; exactly floor(ratio * n) masked."""

    kept: np.ndarray
    ratio: float

    @property
    def n_tokens(self) -> int:
        return int(self.kept.shape[0])

    @property
    def n_masked(self) -> int:
        return int(np.count_nonzero(~self.kept))

    @property
    def kept_indices(self) -> np.ndarray:
        return np.flatnonzero(self.kept)

    @property
    def masked_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.kept)


def full_plan(n_tokens: int) -> MaskPlan:
    """A no-masking plan (all tokens kept)."""
    return MaskPlan(kept=np.ones(n_tokens, dtype=bool), ratio=0.0)


def _bilinear(values: torch.Tensor, xs: torch.Tensor, ys: torch.Tensor) -> torch.Tensor:
    """Sample (C, H, W) at continuous points; pixel i's center sits at i + 0.5.

    Neighbor indices are clamped, so samples near the border replicate edge
    pixels. xs/ys are flat tensors of equal length; output is (C, len(xs)).
    """
    _, H, W = values.shape
    gx = xs - 0.5
    gy = ys - 0.5
    x0 = torch.floor(gx)
    y0 = torch.floor(gy)
    tx = (gx - x0).to(values.dtype)
    ty = (gy - y0).to(values.dtype)
    x0 = x0.long()
    y0 = y0.long()
    x0c = x0.clamp(0, W - 1)
    x1c = (x0 + 1).clamp(0, W - 1)
    y0c = y0.clamp(0, H - 1)
    y1c = (y0 + 1).clamp(0, H - 1)
    v00 = values[:, y0c, x0c]
    v01 = values[:, y0c, x1c]
    v10 = values[:, y1c, x0c]
    v11 = values[:, y1c, x1c]
    return (
        v00 * (1 - ty) * (1 - tx)
        + v01 * (1 - ty) * tx
        + v10 * ty * (1 - tx)
        + v11 * ty * tx
    )


def roi_align(
    fm: FeatureMap,
    box: BoundingBox,
    grid: tuple[int, int] = (8, 8),
    samples_per_bin: int = 2,
) -> RoIFeatureGrid:
    """Pool the feature-map region under ``box`` to a fixed grid.

    The box (image pixels) is clamped to the image rectangle and divided by
    the map stride; each output bin averages samples_per_bin^2 bilinear
    samples at regular sub-bin positions. Differentiable in ``fm.values``.
    """
    gh, gw = grid
    if gh < 1 or gw < 1:
        raise ValueError(f"grid must be at least 1x1, got {grid}")
    if samples_per_bin < 1:
        raise ValueError(f"samples_per_bin must be >= 1, got {samples_per_bin}")
    H, W = fm.image_hw
    clamped = clamp_box(box, W, H)

    s = float(fm.stride)
    x1, y1 = clamped.x / s, clamped.y / s
    bw = clamped.w / s / gw
    bh = clamped.h / s / gh
    n = samples_per_bin
    offsets = (torch.arange(n, dtype=torch.float64) + 0.5) / n
    xs = x1 + (torch.arange(gw, dtype=torch.float64)[:, None] + offsets[None, :]) * bw
    ys = y1 + (torch.arange(gh, dtype=torch.float64)[:, None] + offsets[None, :]) * bh
    xs_flat = xs.reshape(-1)  # (gw * n,)
    ys_flat = ys.reshape(-1)  # (gh * n,)
    px = xs_flat[None, :].expand(gh * n, gw * n).reshape(-1)
    py = ys_flat[:, None].expand(gh * n, gw * n).reshape(-1)

    sampled = _bilinear(fm.values, px, py)  # (C, gh*n*gw*n)
    C = fm.values.shape[0]
    bins = sampled.reshape(C, gh, n, gw, n).mean(dim=(2, 4))
    return RoIFeatureGrid(values=bins, source_box=box)


def tokenize(grid: RoIFeatureGrid) -> TokenSet:
    """Flatten a (C, h, w) grid into h*w tokens of C channels, row-major."""
    C, h, w = grid.values.shape
    tokens = grid.values.reshape(C, h * w).transpose(0, 1)
    positions = [(r, c) for r in range(h) for c in range(w)]
    return TokenSet(tokens=tokens, grid_positions=positions, grid_hw=(h, w))


def untokenize(tokens: TokenSet) -> torch.Tensor:
    """Inverse of tokenize: back to (C, h, w)."""
    h, w = tokens.grid_hw
    n, C = tokens.tokens.shape
    if n != h * w:
        raise ValueError(f"{n} tokens cannot fill a {h}x{w} grid")
    out = tokens.tokens.new_zeros((C, h, w))
    for idx, (r, c) in enumerate(tokens.grid_positions):
        out[:, r, c] = tokens.tokens[idx]
    return out


def sample_mask(n_tokens: int, ratio: float, seed: int) -> MaskPlan:
    """Mask exactly floor(ratio * n_tokens) tokens, uniformly without replacement."""
    if n_tokens < 1:
        raise ValueError(f"n_tokens must be >= 1, got {n_tokens}")
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"mask ratio must be in [0, 1), got {ratio}")
    n_masked = math.floor(ratio * n_tokens)
    kept = np.ones(n_tokens, dtype=bool)
    if n_masked:
        rng = np.random.default_rng(seed)
        kept[rng.choice(n_tokens, size=n_masked, replace=False)] = False
    return MaskPlan(kept=kept, ratio=float(ratio))
