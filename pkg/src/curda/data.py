"""Dataset ingestion, batching, and the IDX / PNG-directory file formats.

Pixels are float32 tensors shaped (channels, height, width) with values in
[0, 1]. Source samples carry labels; target samples never do — if a target
dataset ships labels they stay on disk and are read only by evaluation code
through :func:`read_heldout_labels`.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ConfigError, ContractError, IngestError, StructuralError


class Domain(str, Enum):
    SOURCE = "source"
    TARGET = "target"


class DataFormat(str, Enum):
    IDX = "idx"
    RAW_PNG_DIR = "raw_png_dir"


@dataclass
class Sample:
    """One image with an optional class label and its domain tag."""

    pixels: torch.Tensor  # (C, H, W) float32 in [0, 1]
    label: int | None
    domain: Domain

    def validate(self, num_classes: int | None = None) -> None:
        if self.pixels.dim() != 3:
            raise StructuralError(f"sample pixels must be (C,H,W), got {tuple(self.pixels.shape)}")
        lo, hi = float(self.pixels.min()), float(self.pixels.max())
        if lo < 0.0 or hi > 1.0:
            raise StructuralError(f"pixel values outside [0,1]: min={lo}, max={hi}")
        if self.domain == Domain.SOURCE and self.label is None:
            raise ContractError("source sample without a label")
        if self.domain == Domain.TARGET and self.label is not None:
            raise ContractError("target sample must not carry a label")
        if num_classes is not None and self.label is not None and not 0 <= self.label < num_classes:
            raise ContractError(f"label {self.label} outside 0..{num_classes - 1}")


@dataclass
class DomainPair:
    """A labeled source set and an unlabeled target set sharing geometry."""

    source_set: list[Sample]
    target_set: list[Sample]
    num_classes: int
    channels: int

    def __post_init__(self):
        shapes = {tuple(s.pixels.shape) for s in self.source_set} | {
            tuple(s.pixels.shape) for s in self.target_set
        }
        if len(shapes) > 1:
            raise StructuralError(f"mixed sample shapes in domain pair: {sorted(shapes)}")
        if shapes and next(iter(shapes))[0] != self.channels:
            raise StructuralError(
                f"declared channels={self.channels} but samples have {next(iter(shapes))[0]}"
            )


@dataclass
class Batch:
    """A non-empty single-domain slice of a dataset."""

    samples: list[Sample]
    indices: list[int]

    def __post_init__(self):
        if not self.samples:
            raise StructuralError("empty batch")
        if len({s.domain for s in self.samples}) != 1:
            raise StructuralError("batch mixes domains")
        if len(self.samples) != len(self.indices):
            raise StructuralError("batch samples/indices length mismatch")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def domain(self) -> Domain:
        return self.samples[0].domain

    def pixels(self) -> torch.Tensor:
        return torch.stack([s.pixels for s in self.samples])

    def labels(self) -> torch.Tensor:
        if any(s.label is None for s in self.samples):
            raise ContractError("batch has unlabeled samples")
        return torch.tensor([s.label for s in self.samples], dtype=torch.long)


# ---------------------------------------------------------------------------
# IDX format (big-endian magic + dims + raw values)

_IDX_DTYPES = {
    0x08: np.dtype(np.uint8),
    0x09: np.dtype(np.int8),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {np.dtype(np.uint8): 0x08, np.dtype(np.float32): 0x0D}


def _open_maybe_gzip(path: Path):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path: str | Path) -> np.ndarray:
    """Read one IDX file (optionally gzipped) into a numpy array."""
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"no such file: {path}")
    with _open_maybe_gzip(path) as fh:
        header = fh.read(4)
        if len(header) != 4 or header[0] != 0 or header[1] != 0:
            raise IngestError(f"malformed IDX magic in {path}")
        dtype_code, ndim = header[2], header[3]
        if dtype_code not in _IDX_DTYPES:
            raise IngestError(f"unknown IDX dtype 0x{dtype_code:02x} in {path}")
        if not 1 <= ndim <= 4:
            raise IngestError(f"unsupported IDX rank {ndim} in {path}")
        raw_dims = fh.read(4 * ndim)
        if len(raw_dims) != 4 * ndim:
            raise IngestError(f"truncated IDX header in {path}")
        dims = struct.unpack(f">{ndim}I", raw_dims)
        dtype = _IDX_DTYPES[dtype_code]
        expected = int(np.prod(dims)) * dtype.itemsize
        payload = fh.read()
        if len(payload) != expected:
            raise IngestError(
                f"IDX payload size mismatch in {path}: expected {expected} bytes, got {len(payload)}"
            )
    return np.frombuffer(payload, dtype=dtype).reshape(dims)


def write_idx(path: str | Path, array: np.ndarray) -> None:
    """Write an array as an IDX file; gzip-compressed when the name ends in .gz."""
    path = Path(path)
    array = np.ascontiguousarray(array)
    if array.dtype not in _IDX_CODES:
        raise ConfigError(f"IDX writer supports uint8/float32, got {array.dtype}")
    code = _IDX_CODES[array.dtype]
    data = array.astype(">f4").tobytes() if code == 0x0D else array.tobytes()
    header = struct.pack(f">BBBB{array.ndim}I", 0, 0, code, array.ndim, *array.shape)
    path.parent.mkdir(parents=True, exist_ok=True)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(header + data)


def _find_idx_files(path: Path) -> tuple[Path, Path | None]:
    """Locate the images file and (optionally) its labels companion."""
    if path.is_file():
        images = path
        candidates = [p for p in path.parent.iterdir() if "label" in p.name and p.is_file()]
    elif path.is_dir():
        images_matches = sorted(p for p in path.iterdir() if "image" in p.name and p.is_file())
        if not images_matches:
            raise IngestError(f"no IDX images file (*image*) under {path}")
        if len(images_matches) > 1:
            raise IngestError(f"ambiguous IDX images files under {path}: {[p.name for p in images_matches]}")
        images = images_matches[0]
        candidates = sorted(p for p in path.iterdir() if "label" in p.name and p.is_file())
    else:
        raise IngestError(f"no such path: {path}")
    return images, candidates[0] if candidates else None


def _to_unit_float(array: np.ndarray, path: Path) -> np.ndarray:
    if array.dtype == np.uint8:
        return array.astype(np.float32) / 255.0
    if array.dtype.kind == "f":
        out = array.astype(np.float32)
        if out.size and (out.min() < 0.0 or out.max() > 1.0):
            raise IngestError(f"float pixel data outside [0,1] in {path}")
        return out
    raise IngestError(f"unsupported pixel dtype {array.dtype} in {path}")


def _resize_and_channel(images: torch.Tensor, image_size: int, channels: int) -> torch.Tensor:
    """images: (N, C, H, W) float32 -> resized/replicated to (N, channels, S, S)."""
    if images.shape[-2:] != (image_size, image_size):
        images = F.interpolate(
            images, size=(image_size, image_size), mode="bilinear", align_corners=False
        ).clamp(0.0, 1.0)
    have = images.shape[1]
    if have == channels:
        return images
    if have == 1 and channels == 3:
        return images.repeat(1, 3, 1, 1)
    raise StructuralError(f"cannot adapt {have}-channel images to {channels} channels")


def _png_class_dirs(root: Path) -> list[tuple[int, Path]]:
    dirs = []
    for child in sorted(root.iterdir()):
        if child.is_dir() and child.name.isdigit():
            dirs.append((int(child.name), child))
    return dirs


def _load_png_dir(path: Path, channels: int) -> tuple[np.ndarray, np.ndarray]:
    class_dirs = _png_class_dirs(path)
    if not class_dirs:
        raise IngestError(f"no class subdirectories under {path}")
    arrays, labels = [], []
    mode = "RGB" if channels == 3 else "L"
    for cls, cdir in class_dirs:
        for file in sorted(cdir.glob("*.png")):
            try:
                with Image.open(file) as img:
                    arr = np.asarray(img.convert(mode), dtype=np.uint8)
            except Exception as exc:
                raise IngestError(f"malformed image file {file}: {exc}") from exc
            if arr.ndim == 2:
                arr = arr[..., None]
            arrays.append(arr)
            labels.append(cls)
    if not arrays:
        raise IngestError(f"no PNG files under {path}")
    shapes = {a.shape for a in arrays}
    if len(shapes) > 1:
        raise StructuralError(f"mixed image shapes under {path}: {sorted(shapes)}")
    stacked = np.stack(arrays).astype(np.float32) / 255.0  # (N, H, W, C)
    return stacked.transpose(0, 3, 1, 2), np.asarray(labels, dtype=np.int64)


def _load_arrays(
    path: Path, fmt: DataFormat, channels: int
) -> tuple[np.ndarray, np.ndarray | None]:
    """Return ((N, C, H, W) float32 in [0,1], labels or None)."""
    if fmt == DataFormat.IDX:
        images_file, labels_file = _find_idx_files(path)
        images = read_idx(images_file)
        if images.ndim == 2:  # single image edge case is not meaningful here
            raise IngestError(f"IDX images file must be rank 3, got rank {images.ndim}: {images_file}")
        if images.ndim != 3:
            raise IngestError(f"IDX images file must be rank 3 (N,H,W): {images_file}")
        if images.shape[0] == 0:
            raise IngestError(f"zero samples in {images_file}")
        pixels = _to_unit_float(images, images_file)[:, None, :, :]
        labels = None
        if labels_file is not None:
            raw = read_idx(labels_file)
            if raw.ndim != 1:
                raise IngestError(f"IDX labels file must be rank 1: {labels_file}")
            if raw.shape[0] != images.shape[0]:
                raise StructuralError(
                    f"label/image count mismatch: {raw.shape[0]} labels vs "
                    f"{images.shape[0]} images ({labels_file})"
                )
            labels = raw.astype(np.int64)
        return pixels, labels
    if fmt == DataFormat.RAW_PNG_DIR:
        if not path.is_dir():
            raise IngestError(f"no such directory: {path}")
        return _load_png_dir(path, channels)
    raise ConfigError(f"unknown data format {fmt!r}")


def ingest_dataset(
    path: str | Path,
    format: DataFormat | str,
    domain: Domain | str,
    *,
    image_size: int = 28,
    channels: int = 1,
    num_classes: int | None = None,
) -> list[Sample]:
    """Load a dataset into samples, rescaled to (channels, image_size, image_size).

    Source datasets must provide labels. Target labels, when present on disk,
    are deliberately not loaded here (see :func:`read_heldout_labels`).
    """
    path, fmt, domain = Path(path), DataFormat(format), Domain(domain)
    pixels, labels = _load_arrays(path, fmt, channels)
    if domain == Domain.SOURCE and labels is None:
        raise IngestError(f"source dataset at {path} has no labels")
    if num_classes is not None and labels is not None and labels.size:
        if labels.min() < 0 or labels.max() >= num_classes:
            raise StructuralError(
                f"labels outside 0..{num_classes - 1} in {path}: "
                f"[{labels.min()}, {labels.max()}]"
            )
    tensor = _resize_and_channel(torch.from_numpy(np.ascontiguousarray(pixels)), image_size, channels)
    keep_labels = labels if domain == Domain.SOURCE else None
    return [
        Sample(
            pixels=tensor[i],
            label=int(keep_labels[i]) if keep_labels is not None else None,
            domain=domain,
        )
        for i in range(tensor.shape[0])
    ]


def read_heldout_labels(path: str | Path, format: DataFormat | str) -> np.ndarray:
    """Read ground-truth labels for evaluation, in ingestion order.

    This is the only sanctioned access to target-domain labels.
    """
    path, fmt = Path(path), DataFormat(format)
    if fmt == DataFormat.IDX:
        images_file, labels_file = _find_idx_files(path)
        if labels_file is None:
            raise IngestError(f"no labels file found next to {images_file}")
        raw = read_idx(labels_file)
        if raw.ndim != 1:
            raise IngestError(f"IDX labels file must be rank 1: {labels_file}")
        return raw.astype(np.int64)
    _, labels = _load_png_dir(path, channels=1)
    return labels


def native_channels(path: str | Path, format: DataFormat | str) -> int:
    """Channel count of the raw data before any replication."""
    path, fmt = Path(path), DataFormat(format)
    if fmt == DataFormat.IDX:
        return 1
    for _, cdir in _png_class_dirs(path):
        for file in sorted(cdir.glob("*.png")):
            with Image.open(file) as img:
                return 1 if img.mode in ("L", "1", "I", "I;16") else 3
    raise IngestError(f"no PNG files under {path}")


def load_domain_pair(
    source_path: str | Path,
    target_path: str | Path,
    *,
    source_format: DataFormat | str = DataFormat.IDX,
    target_format: DataFormat | str = DataFormat.IDX,
    num_classes: int = 10,
    image_size: int = 28,
) -> DomainPair:
    """Ingest both domains with a shared geometry.

    Grayscale data is replicated to three channels when the other domain is
    natively RGB, so one encoder input shape serves the whole experiment.
    """
    channels = max(
        native_channels(source_path, source_format), native_channels(target_path, target_format)
    )
    source = ingest_dataset(
        source_path, source_format, Domain.SOURCE,
        image_size=image_size, channels=channels, num_classes=num_classes,
    )
    target = ingest_dataset(
        target_path, target_format, Domain.TARGET,
        image_size=image_size, channels=channels, num_classes=num_classes,
    )
    return DomainPair(source_set=source, target_set=target, num_classes=num_classes, channels=channels)


def make_batches(samples: list[Sample], batch_size: int, seed: int) -> list[Batch]:
    """Shuffle deterministically and slice; the final short batch is kept."""
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2 (pairwise losses need a pair), got {batch_size}")
    order = np.random.default_rng(seed).permutation(len(samples))
    return [
        Batch(
            samples=[samples[int(i)] for i in order[start : start + batch_size]],
            indices=[int(i) for i in order[start : start + batch_size]],
        )
        for start in range(0, len(samples), batch_size)
    ]
