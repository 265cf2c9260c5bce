"""Procedural word image rendering from built-in vector glyph sets.

Glyphs are polylines in a unit box (x right, y down). The ascender line is
y=0, the x-height line y=0.35, the baseline y=0.75 and the descender y=1.
Rendering draws anti-aliased thick strokes, ink = 1 on a zero background.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import Manifest, ManifestEntry, resize_bilinear, write_image, write_manifest
from .exceptions import EmptyWord
from .phoc import DEFAULT_SYMBOLS, Alphabet, canonicalize

BASE_HEIGHT = 48
XH, BL = 0.35, 0.75


def _arc(cx, cy, rx, ry, a0, a1, n=12):
    """Points on an elliptical arc; angles in degrees, 0 = right, 90 = up."""
    t = np.radians(np.linspace(a0, a1, n))
    return [(cx + rx * math.cos(a), cy - ry * math.sin(a)) for a in t]


def _bowl(cx=0.45, cy=0.55, r=0.2):
    return _arc(cx, cy, r, r, 0, 360, 16)


def _print_glyphs() -> dict[str, list]:
    g = {
        "a": [_bowl(), [(0.65, XH), (0.65, BL)]],
        "b": [[(0.25, 0.0), (0.25, BL)], _bowl(0.45)],
        "c": [_arc(0.5, 0.55, 0.2, 0.2, 45, 315)],
        "d": [_bowl(), [(0.65, 0.0), (0.65, BL)]],
        "e": [[(0.3, 0.55), (0.7, 0.55)] + _arc(0.5, 0.55, 0.2, 0.2, 0, 315)[1:]],
        "f": [_arc(0.6, 0.15, 0.15, 0.12, 30, 180, 6) + [(0.45, BL)], [(0.28, XH), (0.65, XH)]],
        "g": [_bowl(), [(0.65, XH), (0.65, 0.85)] + _arc(0.47, 0.85, 0.18, 0.12, 0, -160, 6)[1:]],
        "h": [[(0.25, 0.0), (0.25, BL)], [(0.25, 0.52)] + _arc(0.45, 0.52, 0.2, 0.16, 170, 0, 6) + [(0.65, BL)]],
        "i": [[(0.5, XH), (0.5, BL)], [(0.5, 0.17), (0.5, 0.21)]],
        "j": [[(0.55, XH)] + _arc(0.4, 0.88, 0.15, 0.12, 0, -170, 6), [(0.55, 0.17), (0.55, 0.21)]],
        "k": [[(0.3, 0.0), (0.3, BL)], [(0.68, XH), (0.3, 0.58), (0.68, BL)]],
        "l": [[(0.5, 0.0), (0.5, BL)]],
        "m": [[(0.12, XH), (0.12, BL)], [(0.12, 0.5)] + _arc(0.28, 0.5, 0.16, 0.14, 170, 0, 6) + [(0.44, BL)],
              [(0.44, 0.5)] + _arc(0.6, 0.5, 0.16, 0.14, 170, 0, 6) + [(0.76, BL)]],
        "n": [[(0.28, XH), (0.28, BL)], [(0.28, 0.52)] + _arc(0.48, 0.52, 0.2, 0.16, 170, 0, 6) + [(0.68, BL)]],
        "o": [_bowl(0.5)],
        "p": [[(0.3, XH), (0.3, 1.0)], _bowl(0.5)],
        "q": [_bowl(), [(0.65, XH), (0.65, 1.0)]],
        "r": [[(0.35, XH), (0.35, BL)], [(0.35, 0.52)] + _arc(0.53, 0.52, 0.18, 0.15, 170, 50, 5)],
        "s": [_arc(0.5, 0.45, 0.18, 0.1, 20, 270, 8) + _arc(0.5, 0.65, 0.18, 0.1, 90, -160, 8)[1:]],
        "t": [[(0.45, 0.12), (0.45, 0.65)] + _arc(0.58, 0.65, 0.13, 0.1, 180, 300, 4)[1:], [(0.25, XH), (0.68, XH)]],
        "u": [[(0.3, XH)] + _arc(0.48, 0.58, 0.18, 0.17, 180, 360, 7), [(0.66, XH), (0.66, BL)]],
        "v": [[(0.25, XH), (0.5, BL), (0.75, XH)]],
        "w": [[(0.1, XH), (0.3, BL), (0.5, 0.45), (0.7, BL), (0.9, XH)]],
        "x": [[(0.25, XH), (0.75, BL)], [(0.75, XH), (0.25, BL)]],
        "y": [[(0.25, XH), (0.5, BL)], [(0.75, XH), (0.35, 1.0)]],
        "z": [[(0.25, XH), (0.75, XH), (0.25, BL), (0.75, BL)]],
        "0": [_arc(0.5, 0.4, 0.22, 0.35, 0, 360, 18)],
        "1": [[(0.32, 0.2), (0.5, 0.05), (0.5, BL)]],
        "2": [_arc(0.5, 0.25, 0.2, 0.18, 160, -40, 8) + [(0.25, BL), (0.75, BL)]],
        "3": [_arc(0.48, 0.24, 0.2, 0.18, 150, -90, 8), _arc(0.48, 0.57, 0.22, 0.17, 90, -150, 8)],
        "4": [[(0.62, BL), (0.62, 0.05), (0.2, 0.55), (0.8, 0.55)]],
        "5": [[(0.72, 0.05), (0.32, 0.05), (0.3, 0.35)] + _arc(0.48, 0.52, 0.22, 0.2, 130, -150, 8)[1:]],
        "6": [_arc(0.5, 0.4, 0.22, 0.35, 60, 180, 6) + _arc(0.5, 0.55, 0.22, 0.2, 180, 540, 14)[1:]],
        "7": [[(0.22, 0.05), (0.78, 0.05), (0.4, BL)]],
        "8": [_arc(0.5, 0.23, 0.17, 0.17, 0, 360, 14), _arc(0.5, 0.56, 0.21, 0.19, 0, 360, 14)],
        "9": [_arc(0.5, 0.26, 0.2, 0.2, 0, 360, 14), [(0.7, 0.26), (0.62, BL)]],
    }
    return g


def _chaikin(poly, iterations=2):
    pts = np.asarray(poly, dtype=float)
    for _ in range(iterations):
        if len(pts) < 3:
            break
        q = 0.75 * pts[:-1] + 0.25 * pts[1:]
        r = 0.25 * pts[:-1] + 0.75 * pts[1:]
        mid = np.empty((2 * len(q), 2))
        mid[0::2], mid[1::2] = q, r
        pts = np.vstack([pts[:1], mid, pts[-1:]])
    return [tuple(p) for p in pts]


def _rounded_glyphs() -> dict[str, list]:
    """Second glyph set: alternate letterforms, rounded joins, taller bodies, narrower."""
    g = _print_glyphs()
    g.update({
        "a": [_arc(0.48, 0.45, 0.16, 0.1, 150, 0, 6) + [(0.64, BL)],
              [(0.64, 0.58)] + _arc(0.46, 0.64, 0.18, 0.11, 90, 330, 10)],
        "g": [_arc(0.48, 0.5, 0.16, 0.15, 0, 360, 14), [(0.62, 0.6)] + _arc(0.45, 0.82, 0.2, 0.15, 70, -200, 10)],
        "k": [[(0.3, 0.0), (0.3, BL)], [(0.3, 0.6)] + _arc(0.46, 0.47, 0.14, 0.11, 200, -80, 7) + [(0.7, BL)]],
        "t": [[(0.5, 0.05), (0.42, BL)], [(0.22, 0.38), (0.72, 0.32)]],
        "y": [[(0.28, XH)] + _arc(0.45, 0.55, 0.17, 0.2, 180, 360, 6), [(0.62, XH), (0.6, 0.85)]
              + _arc(0.42, 0.85, 0.18, 0.13, 0, -180, 6)[1:]],
        "e": [[(0.32, 0.56), (0.62, 0.5)] + _arc(0.46, 0.5, 0.16, 0.13, 20, 140, 4)[1:]
              + _arc(0.48, 0.6, 0.16, 0.15, 150, 320, 6)],
        "r": [[(0.3, XH), (0.36, 0.42), (0.36, BL)], [(0.36, 0.55), (0.5, 0.4), (0.68, XH)]],
        "s": [[(0.68, 0.38), (0.4, XH), (0.3, 0.45), (0.66, 0.62), (0.58, BL), (0.3, 0.72)]],
        "z": [[(0.25, XH), (0.75, XH), (0.3, BL)] + _arc(0.55, BL, 0.2, 0.12, 180, 360, 5)[1:]],
        "1": [[(0.5, 0.05), (0.5, BL)], [(0.35, BL), (0.65, BL)]],
        "4": [[(0.42, 0.05), (0.25, 0.5), (0.78, 0.5)], [(0.62, 0.25), (0.62, BL)]],
        "7": [[(0.22, 0.05), (0.78, 0.05), (0.4, BL)], [(0.35, 0.4), (0.7, 0.4)]],
        "9": [_arc(0.5, 0.26, 0.2, 0.2, 0, 360, 14), [(0.7, 0.26)] + _arc(0.45, 0.5, 0.25, 0.25, 0, -110, 6)],
    })
    out = {}
    for c, polys in g.items():
        new = []
        for poly in polys:
            pts = np.asarray(_chaikin(poly), dtype=float)
            pts[:, 0] = 0.5 + 0.85 * (pts[:, 0] - 0.5)
            body = pts[:, 1] > 0.12
            pts[body, 1] = BL + 1.18 * (pts[body, 1] - BL)
            new.append([tuple(p) for p in np.clip(pts, 0.0, 1.0)])
        out[c] = new
    return out


GLYPH_SETS = {"print": _print_glyphs(), "rounded": _rounded_glyphs()}

_NARROW = set("ijlt1f")
_WIDE = set("mw")


def advance(c: str) -> float:
    return 0.45 if c in _NARROW else (0.95 if c in _WIDE else 0.7)


@dataclass(frozen=True)
class StyleFamily:
    """Ranges (low, high) from which per-word rendering parameters are drawn."""
    id: str = "A"
    stroke_width: tuple[float, float] = (1.5, 4.0)
    slant: tuple[float, float] = (-8.0, 8.0)
    char_spacing: tuple[float, float] = (-1.0, 4.0)
    baseline_jitter: tuple[float, float] = (0.0, 2.0)
    noise_amplitude: tuple[float, float] = (0.0, 0.1)
    glyph_variant: str = "print"

    def __post_init__(self):
        for name in ("stroke_width", "slant", "char_spacing", "baseline_jitter", "noise_amplitude"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: low {lo} exceeds high {hi}")
        if self.stroke_width[0] < 0.5 or self.stroke_width[1] > 12:
            raise ValueError("stroke_width: must lie in [0.5, 12] px")
        if self.slant[0] < -45 or self.slant[1] > 45:
            raise ValueError("slant: must lie in [-45, 45] degrees")
        if self.char_spacing[0] < -10 or self.char_spacing[1] > 20:
            raise ValueError("char_spacing: must lie in [-10, 20] px")
        if self.baseline_jitter[0] < 0 or self.baseline_jitter[1] > 8:
            raise ValueError("baseline_jitter: must lie in [0, 8] px")
        if self.noise_amplitude[0] < 0 or self.noise_amplitude[1] > 1:
            raise ValueError("noise_amplitude: must lie in [0, 1]")
        if self.glyph_variant not in GLYPH_SETS:
            raise ValueError(f"glyph_variant: unknown {self.glyph_variant!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StyleFamily":
        d = dict(d)
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)


STYLE_A = StyleFamily()
STYLE_B = StyleFamily(id="B", stroke_width=(3.0, 4.5), slant=(8.0, 18.0), char_spacing=(-1.0, 2.0),
                      baseline_jitter=(0.5, 2.5), noise_amplitude=(0.05, 0.15), glyph_variant="rounded")
STYLES = {"A": STYLE_A, "B": STYLE_B}


def _draw_segment(img: np.ndarray, p0, p1, half_width: float) -> None:
    h, w = img.shape
    x0, y0 = p0
    x1, y1 = p1
    pad = half_width + 1.0
    c0, c1 = int(max(0, math.floor(min(x0, x1) - pad))), int(min(w, math.ceil(max(x0, x1) + pad) + 1))
    r0, r1 = int(max(0, math.floor(min(y0, y1) - pad))), int(min(h, math.ceil(max(y0, y1) + pad) + 1))
    if c0 >= c1 or r0 >= r1:
        return
    yy, xx = np.mgrid[r0:r1, c0:c1].astype(np.float64)
    dx, dy = x1 - x0, y1 - y0
    ll = dx * dx + dy * dy
    if ll == 0:
        t = np.zeros_like(xx)
    else:
        t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / ll, 0.0, 1.0)
    dist = np.hypot(xx - (x0 + t * dx), yy - (y0 + t * dy))
    ink = np.clip(half_width + 0.5 - dist, 0.0, 1.0)
    np.maximum(img[r0:r1, c0:c1], ink, out=img[r0:r1, c0:c1])


def render_word(word: str, style: StyleFamily = STYLE_A, rng: Optional[np.random.Generator] = None,
                height: int = BASE_HEIGHT, alphabet: Optional[Alphabet] = None) -> np.ndarray:
    """Render ``word`` as a float32 image of the given height, ink = 1.

    Stroke width, slant, spacing and noise level are drawn once per word from
    the style's ranges; baseline jitter is drawn per character.
    """
    alphabet = alphabet or Alphabet(DEFAULT_SYMBOLS)
    canon = canonicalize(word, alphabet)
    if not canon:
        raise EmptyWord(f"word {word!r} has no renderable characters")
    rng = rng if rng is not None else np.random.default_rng(0)
    glyphs = GLYPH_SETS[style.glyph_variant]
    stroke = rng.uniform(*style.stroke_width)
    slant = math.tan(math.radians(rng.uniform(*style.slant)))
    spacing = rng.uniform(*style.char_spacing)
    noise = rng.uniform(*style.noise_amplitude)
    jitter = rng.uniform(-1.0, 1.0, size=len(canon)) * rng.uniform(*style.baseline_jitter)
    size = height * 0.8
    margin = stroke + 2.0
    top = (height - size) / 2.0
    base_y = top + BL * size
    slant_pad = abs(slant) * size
    width = int(math.ceil(2 * margin + slant_pad + sum(advance(c) * size + spacing for c in canon)))
    img = np.zeros((height, max(width, 1)), dtype=np.float64)
    x = margin + (slant_pad if slant > 0 else 0.0)
    for c, dy in zip(canon, jitter):
        adv = advance(c) * size
        for poly in glyphs[c]:
            pts = []
            for gx, gy in poly:
                py = top + gy * size + dy
                px = x + (gx - 0.5) * 0.7 * size + adv / 2 - slant * (py - base_y)
                pts.append((px, py))
            if len(pts) == 1:
                pts = pts * 2
            for p0, p1 in zip(pts, pts[1:]):
                _draw_segment(img, p0, p1, stroke / 2.0)
        x += adv + spacing
    if noise > 0:
        img += rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def render_words(words: Sequence[str], style: StyleFamily, rng: np.random.Generator,
                 scale_jitter: bool = True) -> list[np.ndarray]:
    """Render every word once, optionally upscaled by a factor from U[1, 2)."""
    out = []
    for word in words:
        img = render_word(word, style, rng)
        if scale_jitter:
            f = rng.uniform(1.0, 2.0)
            h, w = img.shape
            img = resize_bilinear(img, max(1, round(h * f)), max(1, round(w * f)))
        out.append(img)
    return out


def generate_corpus(wordlist: Sequence[str], per_word: int, style: StyleFamily, out_dir,
                    rng: np.random.Generator, scale_jitter: bool = True,
                    manifest_name: str = "manifest.tsv") -> Manifest:
    """Render ``per_word`` images of every word to ``out_dir`` and write a manifest.

    With ``scale_jitter`` each image is upscaled by an independent factor drawn
    uniformly from [1, 2).
    """
    if not wordlist:
        raise ValueError("wordlist must not be empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    words = [w for w in wordlist for _ in range(per_word)]
    entries = []
    for idx, (word, img) in enumerate(zip(words, render_words(words, style, rng, scale_jitter))):
        name = f"{idx:06d}.pgm"
        write_image(img, out_dir / name)
        entries.append(ManifestEntry(name, canonicalize(word)))
    manifest = Manifest(entries, str(out_dir))
    write_manifest(manifest, out_dir / manifest_name)
    return manifest
