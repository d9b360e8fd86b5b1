"""Frames, per-object annotations, dataset IO and preprocessing.

The canonical interchange format is JSONL, one frame per line:

    {"frame_id": str, "image_path": str, "camera": {"focal_px": float|null},
     "objects": [{"bbox": [x, y, w, h], "class": str, "distance_m": float,
                  "occlusion": float, "dont_care": bool}]}

Boxes are in pixels with a top-left origin. A KITTI-devkit label importer is
provided as a convenience; everything downstream consumes FrameSample only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner (x, y), size (w, h), all in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError(f"box fields must be finite, got {self}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box dimensions must be positive, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class ObjectAnnotation:
    """One target object: box, class, ground-truth distance and occlusion level.

    ``distance_m`` must be positive except for don't-care objects, which are
    allowed to carry whatever the source file had (they are dropped by
    filtering before any training or evaluation).
    """

    box: BoundingBox
    class_label: str
    distance_m: float
    occlusion: float = 0.0
    dont_care: bool = False

    def __post_init__(self):
        if not 0.0 <= self.occlusion <= 1.0:
            raise ValueError(f"occlusion must be in [0, 1], got {self.occlusion}")
        if not self.dont_care and self.distance_m <= 0:
            raise ValueError(f"distance_m must be positive, got {self.distance_m}")


@dataclass
class FrameSample:
    """One RGB frame plus its object annotations.

    ``image`` is a float array of shape (3, H, W) with values in [0, 1], or
    None for annotation-only sources (e.g. bare KITTI label files).
    """

    frame_id: str
    annotations: list[ObjectAnnotation]
    image: np.ndarray | None = None
    focal_px: float | None = None

    def __post_init__(self):
        if self.image is not None:
            if self.image.ndim != 3 or self.image.shape[0] != 3:
                raise ValueError(
                    f"frame {self.frame_id}: image must have shape (3, H, W), got {self.image.shape}"
                )

    @property
    def image_hw(self) -> tuple[int, int]:
        if self.image is None:
            raise ValueError(f"frame {self.frame_id} carries no image")
        return self.image.shape[1], self.image.shape[2]


@dataclass(frozen=True)
class HeatmapChannel:
    """Single-channel box-center prior, shape (1, H, W), values in [0, 1]."""

    values: np.ndarray
    sigma_px: float


@dataclass(frozen=True)
class FilterPolicy:
    """Annotation/frame filtering rules; disabled rules leave input untouched."""

    drop_dont_care: bool = False
    drop_nonpositive_distance: bool = False
    max_distance_m: float | None = None
    min_visibility: float | None = None
    frame_stride: int = 1


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two axis-aligned boxes."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x, b.x))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def clamp_box(box: BoundingBox, image_w: int, image_h: int) -> BoundingBox:
    """Clip a box to the image rectangle; degenerate results are an error."""
    x1 = max(box.x, 0.0)
    y1 = max(box.y, 0.0)
    x2 = min(box.x2, float(image_w))
    y2 = min(box.y2, float(image_h))
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        raise ValueError(
            f"box {box.as_list()} has no area inside a {image_w}x{image_h} image"
        )
    return BoundingBox(x=x1, y=y1, w=x2 - x1, h=y2 - y1)


# ---------------------------------------------------------------------------
# JSONL interchange


def _annotation_to_obj(ann: ObjectAnnotation) -> dict:
    return {
        "bbox": ann.box.as_list(),
        "class": ann.class_label,
        "distance_m": ann.distance_m,
        "occlusion": ann.occlusion,
        "dont_care": ann.dont_care,
    }


def _annotation_from_obj(obj: dict) -> ObjectAnnotation:
    bbox = obj["bbox"]
    if len(bbox) != 4:
        raise ValueError(f"bbox must have 4 entries, got {bbox}")
    return ObjectAnnotation(
        box=BoundingBox(*map(float, bbox)),
        class_label=str(obj["class"]),
        distance_m=float(obj["distance_m"]),
        occlusion=float(obj.get("occlusion", 0.0)),
        dont_care=bool(obj.get("dont_care", False)),
    )


def write_jsonl(frames: list[FrameSample], path: str | Path, image_dir: str | Path | None = None) -> None:
    """Write frames as JSONL plus one PNG per frame.

    Pixel values are stored as 8-bit PNG, so images round-trip exactly only
    when they lie on the k/255 grid (the synthetic generator guarantees this).
    """
    path = Path(path)
    if image_dir is None:
        image_dir = path.parent / f"{path.stem}_images"
    image_dir = Path(image_dir)
    image_dir.mkdir(parents=True, exist_ok=True)
    path.parent.mkdir(parents=True, exist_ok=True)

    with path.open("w") as fh:
        for frame in frames:
            if frame.image is None:
                raise ValueError(f"frame {frame.frame_id} has no image to serialize")
            img_path = image_dir / f"{frame.frame_id}.png"
            arr = np.clip(np.round(frame.image * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(arr.transpose(1, 2, 0)).save(img_path)
            record = {
                "frame_id": frame.frame_id,
                "image_path": str(img_path.relative_to(path.parent)),
                "camera": {"focal_px": frame.focal_px},
                "objects": [_annotation_to_obj(a) for a in frame.annotations],
            }
            fh.write(json.dumps(record) + "\n")


def _load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


def _read_jsonl(path: Path, load_images: bool) -> list[FrameSample]:
    frames = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            try:
                frame_id = str(record["frame_id"])
                annotations = [_annotation_from_obj(o) for o in record["objects"]]
                focal = record.get("camera", {}).get("focal_px")
                image = None
                if load_images:
                    img_path = Path(record["image_path"])
                    if not img_path.is_absolute():
                        img_path = path.parent / img_path
                    image = _load_image(img_path)
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(
                    f"{path}:{lineno}: bad frame record "
                    f"(frame_id={record.get('frame_id', '?')}): {exc}"
                ) from exc
            frames.append(
                FrameSample(
                    frame_id=frame_id,
                    annotations=annotations,
                    image=image,
                    focal_px=None if focal is None else float(focal),
                )
            )
    return frames


# ---------------------------------------------------------------------------
# KITTI devkit labels

_KITTI_FIELDS = 15

# Devkit occlusion states {0: visible, 1: partly, 2: largely, 3: unknown}
# mapped onto the [0, 1] occlusion fraction; -1 (DontCare) maps to 0.
_KITTI_OCCLUSION = {-1: 0.0, 0: 0.0, 1: 1.0 / 3.0, 2: 2.0 / 3.0, 3: 1.0}


def _read_kitti_label_file(path: Path, sidecar: dict | None) -> FrameSample:
    frame_id = path.stem
    distances = None if sidecar is None else sidecar.get(frame_id)
    annotations = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != _KITTI_FIELDS:
                raise ValueError(
                    f"{path}:{lineno}: expected {_KITTI_FIELDS} fields, got {len(parts)}"
                )
            cls = parts[0]
            dont_care = cls == "DontCare"
            try:
                occluded = int(float(parts[2]))
                left, top, right, bottom = map(float, parts[4:8])
                loc_z = float(parts[13])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: unparseable number ({exc})") from exc
            if right <= left or bottom <= top:
                raise ValueError(
                    f"{path}:{lineno}: degenerate box ({left}, {top}, {right}, {bottom})"
                )
            if distances is not None:
                dist = float(distances[len(annotations)])
            else:
                dist = loc_z
            annotations.append(
                ObjectAnnotation(
                    box=BoundingBox(x=left, y=top, w=right - left, h=bottom - top),
                    class_label=cls,
                    distance_m=dist,
                    occlusion=_KITTI_OCCLUSION.get(occluded, 1.0),
                    dont_care=dont_care,
                )
            )
    return FrameSample(frame_id=frame_id, annotations=annotations)


def read_annotations(
    path: str | Path,
    format: str = "jsonl",
    load_images: bool = True,
    distance_sidecar: str | Path | None = None,
) -> list[FrameSample]:
    """Read a dataset into FrameSamples.

    ``format`` is "jsonl" (canonical) or "kitti_label" (a devkit .txt file or
    a directory of them, annotations only). ``distance_sidecar`` optionally
    points to a JSON map frame_id -> [distance per object line]; otherwise the
    KITTI distance is the location z component. Unparseable content raises.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"annotation path does not exist: {path}")
    if format == "jsonl":
        return _read_jsonl(path, load_images)
    if format == "kitti_label":
        sidecar = None
        if distance_sidecar is not None:
            with Path(distance_sidecar).open() as fh:
                sidecar = json.load(fh)
        if path.is_dir():
            files = sorted(path.glob("*.txt"))
            if not files:
                raise FileNotFoundError(f"no .txt label files in {path}")
            return [_read_kitti_label_file(f, sidecar) for f in files]
        return [_read_kitti_label_file(path, sidecar)]
    raise ValueError(f"unknown annotation format: {format!r}")


# ---------------------------------------------------------------------------
# Preprocessing


def kitti_keypoint_distance(point_distances: list[float]) -> float:
    """Distance of the n-th closest point with n = floor(0.1 * count).

    The index is 0-based on the ascending sort, so a single point returns
    itself and ten points return the second closest.
    """
    if len(point_distances) == 0:
        raise ValueError("point_distances must be non-empty")
    if any(d <= 0 for d in point_distances):
        raise ValueError("all point distances must be positive")
    ordered = sorted(point_distances)
    idx = math.floor(0.1 * len(ordered))
    return ordered[idx]


def filter_annotations(frames: list[FrameSample], policy: FilterPolicy) -> list[FrameSample]:
    """Apply a FilterPolicy; frames with no surviving annotations are dropped.

    Frame subsampling keeps input indices that are multiples of the stride and
    is applied before the per-annotation rules.
    """
    if policy.frame_stride < 1:
        raise ValueError(f"frame_stride must be >= 1, got {policy.frame_stride}")
    if policy.max_distance_m is not None and policy.max_distance_m < 0:
        raise ValueError("max_distance_m must be non-negative")
    if policy.min_visibility is not None and policy.min_visibility < 0:
        raise ValueError("min_visibility must be non-negative")

    def keep(ann: ObjectAnnotation) -> bool:
        if policy.drop_dont_care and ann.dont_care:
            return False
        if policy.drop_nonpositive_distance and ann.distance_m <= 0:
            return False
        if policy.max_distance_m is not None and ann.distance_m > policy.max_distance_m:
            return False
        if policy.min_visibility is not None and (1.0 - ann.occlusion) < policy.min_visibility:
            return False
        return True

    out = []
    for frame in frames[:: policy.frame_stride]:
        kept = [a for a in frame.annotations if keep(a)]
        if kept:
            out.append(replace(frame, annotations=kept))
    return out


def build_centers_heatmap(
    boxes: list[BoundingBox], height: int, width: int, sigma_px: float
) -> HeatmapChannel:
    """Gaussian bump exp(-||u - c||^2 / sigma^2) around each box center,
    aggregated across boxes with a pixelwise max."""
    if sigma_px <= 0:
        raise ValueError(f"sigma_px must be positive, got {sigma_px}")
    if height < 1 or width < 1:
        raise ValueError("heatmap size must be at least 1x1")
    values = np.zeros((height, width), dtype=np.float32)
    if boxes:
        ys = np.arange(height, dtype=np.float64)[:, None]
        xs = np.arange(width, dtype=np.float64)[None, :]
        for box in boxes:
            cx, cy = box.center
            d2 = (xs - cx) ** 2 + (ys - cy) ** 2
            np.maximum(values, np.exp(-d2 / sigma_px**2).astype(np.float32), out=values)
    return HeatmapChannel(values=values[None], sigma_px=float(sigma_px))


def perturb_box(box: BoundingBox, r: float, seed: int) -> BoundingBox:
    """Jitter a box such that IoU(result, box) >= r.

    Center offsets and scale factors are drawn uniformly with amplitude
    (1 - r); the amplitude shrinks geometrically until a draw passes the IoU
    floor (cap 1000 attempts, then the input is returned). r = 1 is identity.
    """
    if not 0.0 < r <= 1.0:
        raise ValueError(f"IoU floor r must be in (0, 1], got {r}")
    if r == 1.0:
        return box
    rng = np.random.default_rng(seed)
    cx, cy = box.center
    amp = 1.0 - r
    for _ in range(1000):
        dx = rng.uniform(-amp, amp) * box.w
        dy = rng.uniform(-amp, amp) * box.h
        sw = 1.0 + rng.uniform(-amp, amp)
        sh = 1.0 + rng.uniform(-amp, amp)
        w, h = box.w * sw, box.h * sh
        candidate = BoundingBox(x=cx + dx - w / 2.0, y=cy + dy - h / 2.0, w=w, h=h)
        if box_iou(candidate, box) >= r:
            return candidate
        amp *= 0.8
    return box
