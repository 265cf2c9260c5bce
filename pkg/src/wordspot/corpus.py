"""Word images: PGM I/O, manifests, normalization, augmentation, balancing.

Images are 2-D float32 arrays with values in [0, 1]. After :func:`normalize`
ink is 1 and background is 0.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .exceptions import MalformedImage

INPUT_HEIGHT = 32
INPUT_WIDTH = 96


# --------------------------------------------------------------------------
# PGM (P5, maxval 255)
# --------------------------------------------------------------------------

def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        if data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif data[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise MalformedImage("unexpected end of PGM header")
    return data[start:pos], pos


def read_image(path) -> np.ndarray:
    """Read an 8-bit binary PGM and map it linearly to [0, 1]."""
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0)
    if magic != b"P5":
        raise MalformedImage(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        w_tok, pos = _read_token(data, pos)
        h_tok, pos = _read_token(data, pos)
        m_tok, pos = _read_token(data, pos)
        width, height, maxval = int(w_tok), int(h_tok), int(m_tok)
    except ValueError as exc:
        raise MalformedImage(f"{path}: bad PGM header") from exc
    if width <= 0 or height <= 0 or not 0 < maxval < 256:
        raise MalformedImage(f"{path}: unsupported PGM geometry or maxval")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos:pos + width * height]
    if len(payload) != width * height:
        raise MalformedImage(f"{path}: truncated pixel data")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return pixels.astype(np.float32) / np.float32(maxval)


def write_image(image: np.ndarray, path) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise MalformedImage("only 2-D grayscale images can be written")
    pixels = np.clip(np.rint(image.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


# --------------------------------------------------------------------------
# Manifests
# --------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    image_path: str
    transcription: Optional[str] = None


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: str = "."

    def __len__(self):
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        return Path(self.root) / entry.image_path

    @property
    def transcriptions(self) -> list[Optional[str]]:
        return [e.transcription for e in self.entries]

    @property
    def labeled(self) -> bool:
        return bool(self.entries) and all(e.transcription for e in self.entries)

    def load_images(self) -> list[np.ndarray]:
        return [read_image(self.resolve(e)) for e in self.entries]


def read_manifest(path) -> Manifest:
    """Parse a ``path<TAB>transcription`` TSV; paths are relative to its directory."""
    path = Path(path)
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) > 2:
                raise ValueError(f"{path}:{lineno}: expected at most two columns")
            text = parts[1] if len(parts) == 2 and parts[1] != "" else None
            entries.append(ManifestEntry(parts[0], text))
    return Manifest(entries, str(path.parent))


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            if e.transcription:
                fh.write(f"{e.image_path}\t{e.transcription}\n")
            else:
                fh.write(f"{e.image_path}\n")


# --------------------------------------------------------------------------
# Geometry
# --------------------------------------------------------------------------

def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with pixel-center alignment; smooths before shrinking."""
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()
    sy, sx = h / out_h, w / out_w
    sigma = (max(0.0, (sy - 1) / 2), max(0.0, (sx - 1) / 2))
    if sigma[0] > 0 or sigma[1] > 0:
        image = ndimage.gaussian_filter(image, sigma, mode="nearest")
    rows = (np.arange(out_h) + 0.5) * sy - 0.5
    cols = (np.arange(out_w) + 0.5) * sx - 0.5
    rr, cc = np.meshgrid(np.clip(rows, 0, h - 1), np.clip(cols, 0, w - 1), indexing="ij")
    out = ndimage.map_coordinates(image, [rr, cc], order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def normalize(image: np.ndarray, target_h: int = INPUT_HEIGHT, target_w: int = INPUT_WIDTH,
              invert: bool = False) -> np.ndarray:
    """Optionally invert, fit into the target box keeping aspect, pad with zeros."""
    if target_h <= 0 or target_w <= 0:
        raise ValueError("target dimensions must be positive")
    image = np.asarray(image, dtype=np.float32)
    if invert:
        image = 1.0 - image
    h, w = image.shape
    # integer arithmetic so exact fits never round down
    if h * target_w >= w * target_h:
        new_h, new_w = target_h, max(1, w * target_h // h)
    else:
        new_h, new_w = max(1, h * target_w // w), target_w
    content = resize_bilinear(image, new_h, new_w)
    out = np.zeros((target_h, target_w), dtype=np.float32)
    top = (target_h - new_h) // 2
    left = (target_w - new_w) // 2
    out[top:top + new_h, left:left + new_w] = content
    return out


@dataclass(frozen=True)
class AffineBounds:
    rotation: float = 5.0
    shear: float = 0.1
    scale: tuple[float, float] = (0.9, 1.1)
    translate: float = 2.0

    def __post_init__(self):
        if self.rotation < 0 or self.shear < 0 or self.translate < 0:
            raise ValueError("affine bounds must be non-negative")
        lo, hi = self.scale
        if not 0 < lo <= hi:
            raise ValueError("scale bounds must satisfy 0 < low <= high")


@dataclass(frozen=True)
class AffineParams:
    rotation: float = 0.0
    shear: float = 0.0
    scale_x: float = 1.0
    scale_y: float = 1.0
    translate_x: float = 0.0
    translate_y: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self == AffineParams()


def sample_affine(rng: np.random.Generator, bounds: AffineBounds = AffineBounds()) -> AffineParams:
    return AffineParams(
        rotation=float(rng.uniform(-bounds.rotation, bounds.rotation)),
        shear=float(rng.uniform(-bounds.shear, bounds.shear)),
        scale_x=float(rng.uniform(*bounds.scale)),
        scale_y=float(rng.uniform(*bounds.scale)),
        translate_x=float(rng.uniform(-bounds.translate, bounds.translate)),
        translate_y=float(rng.uniform(-bounds.translate, bounds.translate)),
    )


def _forward_matrix(p: AffineParams) -> np.ndarray:
    """2x2 forward map in (row, col) coordinates: rotate . shear . scale."""
    t = math.radians(p.rotation)
    c, s = math.cos(t), math.sin(t)
    # x = col, y = row; counter-clockwise on screen
    rot = np.array([[c, s], [-s, c]])
    shear = np.array([[1.0, p.shear], [0.0, 1.0]])
    scale = np.diag([p.scale_x, p.scale_y])
    a_xy = rot @ shear @ scale
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    return swap @ a_xy @ swap


def apply_affine(image: np.ndarray, params: AffineParams) -> np.ndarray:
    """Warp around the image center; pixels mapped from outside the frame are 0."""
    image = np.asarray(image, dtype=np.float32)
    if params.is_identity:
        return image.copy()
    h, w = image.shape
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shift = np.array([params.translate_y, params.translate_x])
    # rounding keeps exact angles such as 90 or 180 degrees from sampling just outside the frame
    inv = np.round(np.linalg.inv(_forward_matrix(params)), 12)
    # input = inv @ (output - center - shift) + center
    offset = np.round(center - inv @ (center + shift), 12)
    out = ndimage.affine_transform(image, inv, offset=offset, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def balance_and_augment(samples: Sequence[tuple[np.ndarray, str]], target_count: int,
                        rng: np.random.Generator,
                        bounds: AffineBounds = AffineBounds()) -> list[tuple[np.ndarray, str]]:
    """Build a class-balanced, augmented set of exactly ``target_count`` samples.

    Every class receives ``target_count // n_classes`` samples; the remainder
    goes to distinct randomly chosen classes. Each emitted image is a fresh
    random affine warp of a uniformly chosen source image of its class.
    """
    if not samples:
        raise ValueError("samples must not be empty")
    by_class: dict[str, list[int]] = {}
    for i, (_, label) in enumerate(samples):
        by_class.setdefault(label, []).append(i)
    labels = list(by_class)
    n_classes = len(labels)
    if target_count < n_classes:
        raise ValueError(f"target_count {target_count} < number of classes {n_classes}")
    counts = np.full(n_classes, target_count // n_classes)
    extra = rng.choice(n_classes, size=target_count % n_classes, replace=False)
    counts[extra] += 1
    plan = np.repeat(np.arange(n_classes), counts)
    rng.shuffle(plan)
    out = []
    for ci in plan:
        members = by_class[labels[ci]]
        src = members[int(rng.integers(len(members)))]
        params = sample_affine(rng, bounds)
        out.append((apply_affine(samples[src][0], params), labels[ci]))
    return out
