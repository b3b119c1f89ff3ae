"""Synthetic factor-labeled binary image dataset ("mini" sprites).

A full factorial grid over four generative factors: shape (square, ellipse,
triangle), scale, x position, and y position. Images are W x W binary rasters
with pixels valued 0 or 255; row i of the factor table is the mixed-radix
decode of i, so the dataset row for any factor combination is computable in
closed form. Rendering is deterministic: a pixel is on iff its center
satisfies the shape's inclusion inequality.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .rng import Prng

MAGIC = "CVDS1"
SHAPES = ("square", "ellipse", "triangle")
FACTOR_NAMES = ("shape", "scale", "pos_x", "pos_y")


@dataclass(frozen=True)
class FactorSpec:
    scales: tuple[float, ...] = (0.3, 0.5, 0.7)
    xs: tuple[float, ...] = tuple(np.linspace(0.3, 0.7, 8))
    ys: tuple[float, ...] = tuple(np.linspace(0.3, 0.7, 8))
    width: int = 16

    def __post_init__(self):
        for name, grid in (("scales", self.scales), ("xs", self.xs), ("ys", self.ys)):
            if len(grid) < 1:
                raise ValueError(f"{name} must be nonempty")
            if any(not (0.0 < v < 1.0) for v in grid):
                raise ValueError(f"{name} values must lie strictly inside (0, 1): {grid}")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError(f"{name} must be strictly increasing: {grid}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return (len(SHAPES), len(self.scales), len(self.xs), len(self.ys))

    @property
    def count(self) -> int:
        n = 1
        for c in self.cardinalities:
            n *= c
        return n


@dataclass
class Dataset:
    images: np.ndarray   # (N, W*H) uint8, values in {0, 255}
    factors: np.ndarray  # (N, F) int64 factor indices
    names: tuple[str, ...]
    cards: tuple[int, ...]
    width: int
    height: int
    spec: FactorSpec | None = field(default=None, repr=False)

    @property
    def count(self) -> int:
        return self.images.shape[0]

    def as_float(self) -> np.ndarray:
        """Images as float64 in [0, 1] (binary data: exactly {0.0, 1.0})."""
        return self.images.astype(np.float64) / 255.0

    def row_index(self, factor_indices: np.ndarray) -> np.ndarray:
        """Mixed-radix encode of factor index rows into dataset row ids."""
        idx = np.zeros(factor_indices.shape[0], dtype=np.int64)
        for card, col in zip(self.cards, factor_indices.T):
            idx = idx * card + col
        return idx


def render_shape(shape: str, scale: float, cx: float, cy: float, width: int) -> np.ndarray:
    """W x W binary raster; pixel (px, py) is on iff its center is inside the shape.

    Centers are ((px + 0.5) / W, (py + 0.5) / W) with px the column and py the
    row. The triangle is the up-pointing isoceles triangle inscribed in the
    scale x scale box centered at (cx, cy): apex at (cx, cy - s/2), base at
    cy + s/2. Out-of-canvas area clips away naturally.
    """
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}, expected one of {SHAPES}")
    c = (np.arange(width) + 0.5) / width
    u = c[None, :]  # column coordinate
    v = c[:, None]  # row coordinate
    half = scale / 2.0
    if shape == "square":
        mask = np.maximum(np.abs(u - cx), np.abs(v - cy)) <= half
    elif shape == "ellipse":
        if half <= 0.0:
            mask = np.zeros((width, width), dtype=bool)
        else:
            mask = ((u - cx) / half) ** 2 + ((v - cy) / half) ** 2 <= 1.0
    else:
        mask = (
            (v >= cy - half)
            & (v <= cy + half)
            & (np.abs(u - cx) <= (v - (cy - half)) / 2.0)
        )
    return mask.astype(np.uint8) * 255


def decode_factors(index: int, cards) -> tuple[int, ...]:
    out = []
    for card in reversed(cards):
        out.append(index % card)
        index //= card
    return tuple(reversed(out))


def generate_dataset(spec: FactorSpec) -> Dataset:
    """Full factorial enumeration in row-major factor order."""
    cards = spec.cardinalities
    n = spec.count
    w = spec.width
    images = np.empty((n, w * w), dtype=np.uint8)
    factors = np.empty((n, len(cards)), dtype=np.int64)
    for i in range(n):
        i_shape, i_scale, i_x, i_y = decode_factors(i, cards)
        factors[i] = (i_shape, i_scale, i_x, i_y)
        img = render_shape(
            SHAPES[i_shape], spec.scales[i_scale], spec.xs[i_x], spec.ys[i_y], w
        )
        images[i] = img.reshape(-1)
    return Dataset(
        images=images,
        factors=factors,
        names=FACTOR_NAMES,
        cards=cards,
        width=w,
        height=w,
        spec=spec,
    )


def save_dataset(ds: Dataset, path: str) -> None:
    if any(c >= 1 << 16 for c in ds.cards):
        raise ValueError("factor cardinalities must fit in 16 bits")
    header = io.StringIO()
    header.write(f"{MAGIC}\n")
    header.write(f"count={ds.count}\n")
    header.write(f"width={ds.width}\n")
    header.write(f"height={ds.height}\n")
    header.write("factors=" + ",".join(f"{n}:{c}" for n, c in zip(ds.names, ds.cards)) + "\n")
    header.write("\n")
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("ascii"))
        fh.write(ds.images.tobytes())
        fh.write(ds.factors.astype("<u2").tobytes())


def _read_line(fh, path):
    line = fh.readline()
    if not line.endswith(b"\n"):
        raise FormatError(f"{path}: truncated header")
    return line[:-1].decode("ascii")


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as fh:
        magic = _read_line(fh, path)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        fields: dict[str, str] = {}
        while True:
            line = _read_line(fh, path)
            if line == "":
                break
            if "=" not in line:
                raise FormatError(f"{path}: bad header line {line!r}")
            key, val = line.split("=", 1)
            fields[key] = val
        for key in ("count", "width", "height", "factors"):
            if key not in fields:
                raise FormatError(f"{path}: missing header key {key!r}")
        try:
            count = int(fields["count"])
            width = int(fields["width"])
            height = int(fields["height"])
        except ValueError as exc:
            raise FormatError(f"{path}: bad header value: {exc}") from exc
        names, cards = [], []
        for item in fields["factors"].split(","):
            if ":" not in item:
                raise FormatError(f"{path}: bad factors entry {item!r}")
            name, card = item.split(":", 1)
            names.append(name)
            cards.append(int(card))
        pixel_bytes = count * width * height
        raw = fh.read(pixel_bytes)
        if len(raw) != pixel_bytes:
            raise FormatError(
                f"{path}: payload truncated: expected {pixel_bytes} pixel bytes, got {len(raw)}"
            )
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, width * height).copy()
        factor_bytes = count * len(cards) * 2
        raw = fh.read(factor_bytes)
        if len(raw) != factor_bytes:
            raise FormatError(
                f"{path}: payload truncated: expected {factor_bytes} factor bytes, got {len(raw)}"
            )
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after declared payload")
        factors = (
            np.frombuffer(raw, dtype="<u2").reshape(count, len(cards)).astype(np.int64)
        )
    return Dataset(
        images=images,
        factors=factors,
        names=tuple(names),
        cards=tuple(cards),
        width=width,
        height=height,
    )


def fixed_factor_batch(ds: Dataset, factor: int, value: int, count: int, rng: Prng):
    """count rows sampled with replacement, factor pinned, others uniform."""
    if not (0 <= factor < len(ds.cards)):
        raise ValueError(f"factor index {factor} out of range for {len(ds.cards)} factors")
    if not (0 <= value < ds.cards[factor]):
        raise ValueError(
            f"value {value} out of range for factor {ds.names[factor]} "
            f"of cardinality {ds.cards[factor]}"
        )
    draws = np.empty((count, len(ds.cards)), dtype=np.int64)
    for j, card in enumerate(ds.cards):
        draws[:, j] = rng.integers(card, count)
    draws[:, factor] = value
    rows = ds.row_index(draws)
    return ds.images[rows], draws
