"""Synthetic pinhole scenes with exact ground-truth distances.

Each object is a flat-shaded rectangle whose pixel height follows the pinhole
relation h_px = focal_px * height_m / distance_m. Colors are quantized to the
8-bit grid so rendered frames survive PNG round-trips bit-exactly, and each
object gets a distinct color so per-object reconstruction targets and
memorization probes are non-degenerate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import BoundingBox, FrameSample, ObjectAnnotation


@dataclass
class SynthConfig:
    focal_px: float = 200.0
    image_h: int = 96
    image_w: int = 128
    n_frames: int = 8
    objects_per_frame: tuple[int, int] = (3, 5)
    distance_range: tuple[float, float] = (5.0, 40.0)
    classes: tuple[str, ...] = ("person", "vehicle")
    class_height_m: dict = field(default_factory=lambda: {"person": 1.7, "vehicle": 1.5})
    height_jitter: float = 0.0
    aspect_range: tuple[float, float] = (0.35, 0.55)
    # Additive Gaussian noise (std in meters) on the annotated distance,
    # per class; scalar means the same value for every class.
    noise_sigma_m: dict | float = 0.0
    # Each scene is emitted this many times with freshly drawn target noise;
    # > 1 makes the distance noise irreducible rather than memorizable.
    repeats: int = 1
    background: float = 0.35


def _quantize(v: np.ndarray | float) -> np.ndarray | float:
    return np.round(np.asarray(v) * 255.0) / 255.0


def _noise_sigma(config: SynthConfig, cls: str) -> float:
    if isinstance(config.noise_sigma_m, dict):
        return float(config.noise_sigma_m.get(cls, 0.0))
    return float(config.noise_sigma_m)


def _object_color(rng: np.random.Generator, class_idx: int) -> np.ndarray:
    color = rng.uniform(0.10, 0.55, size=3)
    color[class_idx % 3] += 0.40
    return _quantize(color)


def generate_synthetic_dataset(config: SynthConfig, seed: int) -> list[FrameSample]:
    """Render deterministic pinhole scenes; same seed, same dataset."""
    d_lo, d_hi = config.distance_range
    if d_lo <= 0 or d_hi <= 0:
        raise ValueError(f"distance_range must be positive, got {config.distance_range}")
    if config.focal_px <= 0:
        raise ValueError(f"focal_px must be positive, got {config.focal_px}")
    if config.repeats < 1:
        raise ValueError("repeats must be >= 1")

    rng = np.random.default_rng(seed)
    H, W = config.image_h, config.image_w
    frames: list[FrameSample] = []

    for scene_idx in range(config.n_frames):
        n_lo, n_hi = config.objects_per_frame
        n_obj = int(rng.integers(n_lo, n_hi + 1))

        objects = []
        for obj_idx in range(n_obj):
            class_idx = int(rng.integers(len(config.classes)))
            cls = config.classes[class_idx]
            height_m = config.class_height_m[cls]
            if config.height_jitter > 0:
                height_m *= 1.0 + rng.uniform(-config.height_jitter, config.height_jitter)
            d = float(rng.uniform(d_lo, d_hi))
            aspect = float(rng.uniform(*config.aspect_range))
            h_px = config.focal_px * height_m / d
            w_px = aspect * h_px
            cx = rng.uniform(min(w_px / 2, W / 2), max(W - w_px / 2, W / 2))
            cy = rng.uniform(min(h_px / 2, H / 2), max(H - h_px / 2, H / 2))
            box = BoundingBox(x=cx - w_px / 2, y=cy - h_px / 2, w=w_px, h=h_px)
            color = _object_color(rng, class_idx)
            objects.append((box, cls, d, color))

        # Painter's algorithm: far objects first, so nearer ones occlude.
        order = sorted(range(n_obj), key=lambda i: -objects[i][2])
        image = np.full((3, H, W), _quantize(config.background), dtype=np.float32)
        owner = np.full((H, W), -1, dtype=np.int64)
        raster_area = np.zeros(n_obj, dtype=np.int64)
        for i in order:
            box = objects[i][0]
            x1 = int(np.clip(np.round(box.x), 0, W))
            x2 = int(np.clip(np.round(box.x2), 0, W))
            y1 = int(np.clip(np.round(box.y), 0, H))
            y2 = int(np.clip(np.round(box.y2), 0, H))
            raster_area[i] = max(0, (x2 - x1)) * max(0, (y2 - y1))
            image[:, y1:y2, x1:x2] = objects[i][3][:, None, None]
            owner[y1:y2, x1:x2] = i

        occlusion = np.zeros(n_obj)
        visible = np.bincount(owner[owner >= 0].ravel(), minlength=n_obj)
        for i in range(n_obj):
            if raster_area[i] > 0:
                occlusion[i] = 1.0 - visible[i] / raster_area[i]

        # Per-repeat fresh target noise on a shared rendering.
        for rep in range(config.repeats):
            annotations = []
            for i, (box, cls, d, _) in enumerate(objects):
                sigma = _noise_sigma(config, cls)
                d_noisy = d
                if sigma > 0:
                    d_noisy = d + sigma * float(rng.standard_normal())
                    while d_noisy <= 0.5:
                        d_noisy = d + sigma * float(rng.standard_normal())
                annotations.append(
                    ObjectAnnotation(
                        box=box,
                        class_label=cls,
                        distance_m=d_noisy,
                        occlusion=float(np.clip(occlusion[i], 0.0, 1.0)),
                    )
                )
            frame_id = f"{scene_idx:04d}" if config.repeats == 1 else f"{scene_idx:04d}_r{rep}"
            frames.append(
                FrameSample(
                    frame_id=frame_id,
                    annotations=annotations,
                    image=image.copy(),
                    focal_px=config.focal_px,
                )
            )
    return frames
