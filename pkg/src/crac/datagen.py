"""Deterministic synthetic segmentation data and the CRSD container.

Each image is split into a 2x2 grid of cells. Foreground class ``k`` is drawn
as one shape (disk, rectangle, ring for k = 1, 2, 3) inside its own randomly
chosen cell, so shapes never overlap and the expected area of every class is
fixed by ``DatasetSpec.class_fractions``. Outlines carry per-angle radial
jitter, which makes a band of boundary pixels genuinely ambiguous.

CRSD layout (little-endian)::

    b"CRSD"  version:u16
    3 x split (train, val, test):
        count:u32 H:u16 W:u16 K:u8
        count x (image: H*W f32, labels: H*W u8)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SHAPES = ("disk", "rectangle", "ring")
SPLITS = ("train", "val", "test")
MAGIC = b"CRSD"
VERSION = 1
_RING_INNER = 0.5  # inner radius as a fraction of the outer radius
_JITTER_KNOTS = 24


class FormatError(ValueError):
    """Malformed or truncated CRSD file."""


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 4
    height: int = 64
    width: int = 64
    counts: tuple[int, int, int] = (200, 40, 40)
    class_fractions: tuple[float, ...] = (0.06, 0.05, 0.05)
    intensities: tuple[float, ...] = (0.25, 0.45, 0.6, 0.75)
    noise: float = 0.12
    jitter: float = 1.5
    size_spread: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        k = self.num_classes
        if k < 2:
            raise ValueError("need at least two classes")
        if k - 1 > len(SHAPES):
            raise ValueError(f"{k - 1} foreground classes exceed the {len(SHAPES)} shape kinds")
        if len(self.class_fractions) != k - 1 or len(self.intensities) != k:
            raise ValueError("class_fractions needs K-1 entries and intensities K entries")
        if any(c < 0 for c in self.counts) or len(self.counts) != 3:
            raise ValueError("counts must be three non-negative split sizes")
        if not 0 <= self.size_spread < 1:
            raise ValueError("size_spread must be in [0, 1)")
        cell = min(self.height, self.width) / 2
        for cls in range(1, k):
            if 2 * (_max_radius(self, cls) + self.jitter) + 2 > cell:
                raise ValueError(
                    f"{self.height}x{self.width} too small for class {cls} "
                    f"({SHAPES[cls - 1]}, fraction {self.class_fractions[cls - 1]})"
                )

    def target_proportions(self) -> np.ndarray:
        """Expected per-class pixel fractions, background first."""
        fg = np.array(self.class_fractions, dtype=float)
        return np.concatenate([[1 - fg.sum()], fg])


PRESETS = {
    "toy4": DatasetSpec(),
    "tiny": DatasetSpec(height=32, width=32, counts=(12, 4, 4), jitter=1.0, size_spread=0.25),
}


def _area(spec, cls):
    return spec.class_fractions[cls - 1] * spec.height * spec.width


def _max_radius(spec, cls):
    # largest extent from the centre at the top of the size range
    a = _area(spec, cls) * (1 + spec.size_spread)
    kind = SHAPES[cls - 1]
    if kind == "disk":
        return np.sqrt(a / np.pi)
    if kind == "ring":
        return np.sqrt(a / (np.pi * (1 - _RING_INNER**2)))
    # rectangle with aspect ratio up to 1.5
    return np.hypot(*_rect_halves(a, 1.5))


def _rect_halves(area, aspect):
    half_w = 0.5 * np.sqrt(area * aspect)
    return half_w, 0.5 * area / (2 * half_w)


@dataclass
class Sample:
    image: np.ndarray  # (H, W) float32 in [0, 1]
    labels: np.ndarray  # (H, W) uint8 in [0, K-1]

    def __post_init__(self):
        if self.image.shape != self.labels.shape:
            raise ValueError("image and labels must share spatial extents")

    def __eq__(self, other):
        return (
            isinstance(other, Sample)
            and np.array_equal(self.image, other.image)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass
class Dataset:
    num_classes: int
    splits: dict[str, list[Sample]] = field(default_factory=dict)

    def arrays(self, split: str):
        """Stack one split into ``(N,1,H,W)`` images and ``(N,H,W)`` labels."""
        samples = self.splits[split]
        images = np.stack([s.image for s in samples])[:, None]
        labels = np.stack([s.labels for s in samples])
        return images, labels

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.num_classes == other.num_classes
            and list(self.splits) == list(other.splits)
            and all(self.splits[k] == other.splits[k] for k in self.splits)
        )


def _jitter_profile(rng, amplitude):
    knots = rng.uniform(-amplitude, amplitude, _JITTER_KNOTS)
    return knots


def _radial(knots, theta):
    # periodic linear interpolation of the knot values at angle theta
    pos = (theta % (2 * np.pi)) / (2 * np.pi) * len(knots)
    i0 = np.floor(pos).astype(int) % len(knots)
    frac = pos - np.floor(pos)
    return knots[i0] * (1 - frac) + knots[(i0 + 1) % len(knots)] * frac


def _shape_mask(kind, yy, xx, cy, cx, area, rng, jitter):
    dy, dx = yy - cy, xx - cx
    r = np.hypot(dy, dx)
    theta = np.arctan2(dy, dx)
    outer = _radial(_jitter_profile(rng, jitter), theta)
    if kind == "disk":
        return r <= np.sqrt(area / np.pi) + outer
    if kind == "ring":
        r_out = np.sqrt(area / (np.pi * (1 - _RING_INNER**2)))
        inner = _radial(_jitter_profile(rng, jitter), theta)
        return (r <= r_out + outer) & (r >= _RING_INNER * r_out + inner)
    aspect = rng.uniform(1 / 1.5, 1.5)
    hw, hh = _rect_halves(area, aspect)
    with np.errstate(divide="ignore"):
        reach = np.minimum(hw / np.abs(np.cos(theta)), hh / np.abs(np.sin(theta)))
    return r <= reach + outer


def generate_sample(spec: DatasetSpec, rng: np.random.Generator) -> Sample:
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    labels = np.zeros((h, w), dtype=np.uint8)
    cells = rng.permutation(4)
    ch, cw = h / 2, w / 2
    for cls in range(1, spec.num_classes):
        kind = SHAPES[cls - 1]
        # area scale uniform around 1 keeps the expected area on target
        area = _area(spec, cls) * rng.uniform(1 - spec.size_spread, 1 + spec.size_spread)
        reach = _max_radius(spec, cls) + spec.jitter + 1
        row, col = divmod(int(cells[cls - 1]), 2)
        cy = row * ch + rng.uniform(reach, ch - reach) - 0.5
        cx = col * cw + rng.uniform(reach, cw - reach) - 0.5
        mask = _shape_mask(kind, yy, xx, cy, cx, area, rng, spec.jitter)
        labels[mask] = cls
    base = np.asarray(spec.intensities, dtype=float)[labels]
    image = np.clip(base + spec.noise * rng.standard_normal((h, w)), 0.0, 1.0)
    return Sample(image.astype(np.float32), labels)


def generate(spec: DatasetSpec) -> Dataset:
    """Build all three splits; each sample has its own seeded stream."""
    spec.validate()
    ds = Dataset(spec.num_classes)
    for split_id, (name, count) in enumerate(zip(SPLITS, spec.counts)):
        ds.splits[name] = [
            generate_sample(spec, np.random.default_rng([spec.seed, split_id, i]))
            for i in range(count)
        ]
    return ds


def disk_labels(height, width, cy, cx, radius, cls=1):
    """Analytic disk mask, the reference for jitter-free generation."""
    yy, xx = np.mgrid[0:height, 0:width]
    labels = np.zeros((height, width), dtype=np.uint8)
    labels[np.hypot(yy - cy, xx - cx) <= radius] = cls
    return labels


# ---------------------------------------------------------------------------
# CRSD I/O


def to_bytes(ds: Dataset) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION)]
    for name in SPLITS:
        samples = ds.splits.get(name, [])
        h, w = samples[0].labels.shape if samples else (0, 0)
        parts.append(struct.pack("<IHHB", len(samples), h, w, ds.num_classes))
        for s in samples:
            if s.labels.shape != (h, w):
                raise ValueError("all samples of a split must share extents")
            parts.append(np.ascontiguousarray(s.image, dtype="<f4").tobytes())
            parts.append(np.ascontiguousarray(s.labels, dtype=np.uint8).tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> Dataset:
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise FormatError("not a CRSD file (bad magic)")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported CRSD version {version}")
    off = 6
    ds = None
    for name in SPLITS:
        if off + 9 > len(buf):
            raise FormatError(f"truncated header for split {name}")
        count, h, w, k = struct.unpack_from("<IHHB", buf, off)
        off += 9
        if ds is None:
            ds = Dataset(k)
        elif k != ds.num_classes:
            raise FormatError("class count differs between splits")
        n = h * w
        need = count * n * 5
        if off + need > len(buf):
            raise FormatError(
                f"truncated payload in split {name}: header declares {count} x {h}x{w}, "
                f"{len(buf) - off} bytes remain"
            )
        samples = []
        for _ in range(count):
            img = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(h, w)
            off += 4 * n
            lab = np.frombuffer(buf, dtype=np.uint8, count=n, offset=off).reshape(h, w)
            off += n
            if lab.size and lab.max() >= k:
                raise FormatError(f"label value {lab.max()} >= K={k}")
            samples.append(Sample(img.astype(np.float32), lab.copy()))
        ds.splits[name] = samples
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after the last split")
    return ds


def write_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(to_bytes(ds))


def read_dataset(path) -> Dataset:
    return from_bytes(Path(path).read_bytes())
