"""Synthetic two-domain handwritten-digit benchmark.

Digits 0-9 are rendered from stroke skeletons with per-sample affine and
style jitter. Two domain styles with shared class semantics but a clear
covariate shift are provided:

* ``wide``  — sharp, thick, upright strokes rendered at full resolution
  (plays the role of the labeled source domain);
* ``slim``  — thin, slanted, dimmer strokes rendered at half resolution and
  bilinearly upsampled, giving the soft low-resolution look of scanned
  digits (plays the role of the unlabeled target domain).

Datasets are written as standard IDX files so they flow through the same
ingestion path as any external digit data.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import write_idx


def _arc(cx: float, cy: float, rx: float, ry: float, a0: float, a1: float, n: int) -> np.ndarray:
    # Angles in degrees on a y-down canvas: 0 points right, 90 points down.
    t = np.radians(np.linspace(a0, a1, n))
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _line(*pts: tuple[float, float]) -> np.ndarray:
    return np.asarray(pts, dtype=float)


def digit_strokes() -> dict[int, list[np.ndarray]]:
    """Stroke skeletons per digit: polylines of (x, y) vertices in [0,1]^2."""
    return {
        0: [_arc(0.50, 0.50, 0.26, 0.36, 0, 360, 32)],
        1: [_line((0.38, 0.30), (0.54, 0.14), (0.54, 0.86))],
        2: [np.concatenate([
            _arc(0.50, 0.34, 0.22, 0.20, 180, 340, 16),
            _line((0.705, 0.41), (0.30, 0.84), (0.74, 0.84)),
        ])],
        3: [np.concatenate([
            _arc(0.46, 0.31, 0.19, 0.17, 215, 450, 18),
            _arc(0.46, 0.67, 0.22, 0.19, 270, 515, 18),
        ])],
        4: [_line((0.60, 0.12), (0.28, 0.58), (0.78, 0.58)),
            _line((0.63, 0.34), (0.63, 0.88))],
        5: [_line((0.70, 0.14), (0.34, 0.14), (0.32, 0.44)),
            np.concatenate([
                _line((0.32, 0.44)),
                _arc(0.45, 0.63, 0.24, 0.23, 270, 520, 18),
            ])],
        6: [np.concatenate([
            _line((0.62, 0.14), (0.42, 0.38)),
            _arc(0.48, 0.66, 0.205, 0.21, 200, 560, 26),
        ])],
        7: [_line((0.28, 0.15), (0.74, 0.15), (0.44, 0.87))],
        8: [_arc(0.50, 0.31, 0.17, 0.16, 0, 360, 24),
            _arc(0.50, 0.67, 0.21, 0.20, 0, 360, 24)],
        9: [_arc(0.50, 0.33, 0.185, 0.185, 0, 360, 24),
            _line((0.685, 0.36), (0.66, 0.60), (0.56, 0.86))],
    }


@dataclass(frozen=True)
class DomainStyle:
    """Rendering distribution for one domain."""

    name: str
    render_size: int
    out_size: int = 28
    stroke_width: tuple[float, float] = (2.0, 2.9)  # pixels on the render grid
    intensity: tuple[float, float] = (0.85, 1.0)
    slant: tuple[float, float] = (0.0, 0.08)  # horizontal shear (mean, sd)
    rotation_sd_deg: float = 6.0
    scale: tuple[float, float] = (0.85, 1.05)
    shift_sd: float = 0.02  # fraction of the canvas
    vertex_jitter_sd: float = 0.015
    noise_sd: float = 0.02


WIDE_STYLE = DomainStyle(name="wide", render_size=28)
SLIM_STYLE = DomainStyle(
    name="slim",
    render_size=14,
    stroke_width=(1.0, 1.5),
    intensity=(0.68, 0.92),
    slant=(0.28, 0.10),
    rotation_sd_deg=7.0,
    scale=(0.74, 0.94),
    shift_sd=0.03,
    vertex_jitter_sd=0.02,
    noise_sd=0.045,
)
STYLES = {s.name: s for s in (WIDE_STYLE, SLIM_STYLE)}


def _min_distance(px: np.ndarray, strokes: list[np.ndarray]) -> np.ndarray:
    """Distance from each pixel center to the nearest stroke segment."""
    dmin = np.full(px.shape[0], np.inf)
    for s in strokes:
        if len(s) < 2:
            continue
        a, b = s[:-1], s[1:]
        ab = b - a
        ab2 = (ab ** 2).sum(1).clip(1e-12)
        ap = px[:, None, :] - a[None]
        t = ((ap * ab[None]).sum(-1) / ab2[None]).clip(0.0, 1.0)
        proj = a[None] + t[..., None] * ab[None]
        d = np.sqrt(((px[:, None, :] - proj) ** 2).sum(-1)).min(1)
        dmin = np.minimum(dmin, d)
    return dmin


def _transform(strokes: list[np.ndarray], rng: np.random.Generator, style: DomainStyle) -> list[np.ndarray]:
    jitter = style.vertex_jitter_sd
    scale = rng.uniform(*style.scale)
    slant = rng.normal(*style.slant)
    theta = np.radians(rng.normal(0.0, style.rotation_sd_deg))
    shift = rng.normal(0.0, style.shift_sd, size=2)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    center = np.array([0.5, 0.5])
    out = []
    for s in strokes:
        v = s + rng.normal(0.0, jitter, size=s.shape)
        v = (v - center) * scale
        v[:, 0] = v[:, 0] - slant * v[:, 1]  # shear: top leans right for positive slant
        v = v @ rot.T + center + shift
        out.append(v)
    return out


_GRID_CACHE: dict[int, np.ndarray] = {}


def _pixel_grid(size: int) -> np.ndarray:
    if size not in _GRID_CACHE:
        ys, xs = np.mgrid[0:size, 0:size]
        _GRID_CACHE[size] = np.stack(
            [(xs.ravel() + 0.5) / size, (ys.ravel() + 0.5) / size], axis=1
        )
    return _GRID_CACHE[size]


def render_digit(cls: int, rng: np.random.Generator, style: DomainStyle) -> np.ndarray:
    """Render one digit as a (out_size, out_size) float32 image in [0,1]."""
    size = style.render_size
    strokes = _transform(digit_strokes()[cls], rng, style)
    d = _min_distance(_pixel_grid(size), strokes) * size
    width = rng.uniform(*style.stroke_width)
    aa = 0.9
    img = np.clip((width / 2 + aa / 2 - d) / aa, 0.0, 1.0)
    img = img * rng.uniform(*style.intensity)
    img = img.reshape(size, size)
    if size != style.out_size:
        t = torch.from_numpy(img.astype(np.float32))[None, None]
        img = F.interpolate(
            t, size=(style.out_size, style.out_size), mode="bilinear", align_corners=False
        )[0, 0].numpy()
    img = img + rng.normal(0.0, style.noise_sd, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_dataset(style: DomainStyle, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Class-balanced dataset: images (N, out, out) float32, labels (N,) int64."""
    rng = np.random.default_rng(seed)
    labels = np.tile(np.arange(10), n // 10 + 1)[:n]
    labels = labels[rng.permutation(n)]
    images = np.stack([render_digit(int(c), rng, style) for c in labels])
    return images, labels.astype(np.int64)


def write_benchmark(
    out_dir: str | Path,
    *,
    n_source_train: int = 4000,
    n_source_test: int = 1000,
    n_target_train: int = 2500,
    n_target_test: int = 1200,
    seed: int = 0,
) -> dict:
    """Write the wide->slim benchmark as IDX files and return its manifest.

    Layout: ``<out>/<domain>/<split>-images-idx3-ubyte.gz`` plus the matching
    labels file. Target labels are written too; they are held out for
    evaluation and never attached to training-visible samples.
    """
    out_dir = Path(out_dir)
    splits = {
        ("wide", "train"): (WIDE_STYLE, n_source_train, seed * 31 + 1),
        ("wide", "test"): (WIDE_STYLE, n_source_test, seed * 31 + 2),
        ("slim", "train"): (SLIM_STYLE, n_target_train, seed * 31 + 3),
        ("slim", "test"): (SLIM_STYLE, n_target_test, seed * 31 + 4),
    }
    manifest: dict = {"seed": seed, "format": "idx", "image_size": 28, "num_classes": 10, "splits": {}}
    for (domain, split), (style, n, split_seed) in splits.items():
        images, labels = make_dataset(style, n, split_seed)
        quantized = np.round(images * 255.0).astype(np.uint8)
        base = out_dir / domain
        write_idx(base / f"{split}-images-idx3-ubyte.gz", quantized)
        write_idx(base / f"{split}-labels-idx1-ubyte.gz", labels.astype(np.uint8))
        manifest["splits"][f"{domain}/{split}"] = {"count": int(n), "style": asdict(style)}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest
