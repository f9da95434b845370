"""Feature pack container format (`.ommp`) and run-length masks.

One pack holds a single source/destination sample: both views' dense
feature maps, the source object mask, the candidate masks proposed in
the destination view, and optional ground-truth annotation.

Byte layout, all integers little-endian:

    magic "OMMP" (4 bytes)
    version          u16
    direction        u8    (0 = ego2exo, 1 = exo2ego)
    d                u16   feature channels
    H_s, W_s         u16   source feature grid
    H_d, W_d         u16   destination feature grid
    N                u16   candidate count
    flags            u8    bit0 = visible, bit1 = ground truth present
    source features  f32 row-major, H_s*W_s*d values
    dest features    f32 row-major, H_d*W_d*d values
    source mask      RLE block
    N candidate masks, each an RLE block
    [gt_index u16, gt mask RLE block]   when flags bit1 set

An RLE block is: mask width u16, mask height u16, run count u32, then
that many u32 run lengths.  Runs alternate background/foreground in
row-major order; each row restarts with a background run and its runs
sum exactly to the width.

Feature values are stored as f32 to halve pack size and are widened to
f64 on load.  Datasets are directories of packs plus a `manifest.txt`
listing relative pack paths, one per line, in iteration order.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    MaskCorruptionError,
    PackFormatError,
    PackTruncatedError,
    PackValidationError,
)

MAGIC = b"OMMP"
PACK_VERSION = 1
PACK_EXTENSION = ".ommp"
MANIFEST_NAME = "manifest.txt"

DIRECTIONS = ("ego2exo", "exo2ego")

_FLAG_VISIBLE = 0x01
_FLAG_GT = 0x02


@dataclass(frozen=True)
class MaskBitmap:
    """Binary mask stored as per-row alternating background/foreground runs.

    The flat ``runs`` tuple concatenates the rows in row-major order;
    each row starts with a background run (possibly of length zero) and
    its runs sum exactly to ``width``.  Encodings are canonical: within
    a row no run is zero except a leading background run, and trailing
    zero runs are dropped.
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise PackValidationError(
                f"mask grid must be at least 1x1, got {self.width}x{self.height}"
            )
        _validate_runs(self.width, self.height, self.runs)

    @classmethod
    def from_grid(cls, grid) -> "MaskBitmap":
        """Canonically encode a 2-D boolean array."""
        arr = np.asarray(grid, dtype=bool)
        if arr.ndim != 2:
            raise PackValidationError(f"mask grid must be 2-D, got shape {arr.shape}")
        h, w = arr.shape
        runs: list[int] = []
        for y in range(h):
            row = arr[y]
            boundaries = np.flatnonzero(np.diff(row.astype(np.int8)))
            edges = np.concatenate(([0], boundaries + 1, [w]))
            lengths = np.diff(edges)
            if row[0]:
                runs.append(0)
            runs.extend(int(v) for v in lengths)
        return cls(w, h, tuple(runs))

    def decode(self) -> np.ndarray:
        """Expand to an H x W boolean grid."""
        grid = np.zeros((self.height, self.width), dtype=bool)
        i = 0
        for y in range(self.height):
            x = 0
            fg = False
            while x < self.width:
                run = self.runs[i]
                i += 1
                if fg and run:
                    grid[y, x : x + run] = True
                x += run
                fg = not fg
        return grid

    def popcount(self) -> int:
        total = 0
        i = 0
        for _ in range(self.height):
            x = 0
            fg = False
            while x < self.width:
                run = self.runs[i]
                i += 1
                if fg:
                    total += run
                x += run
                fg = not fg
        return total


def _validate_runs(width: int, height: int, runs) -> None:
    i = 0
    n = len(runs)
    for y in range(height):
        x = 0
        first = True
        fg = False
        while x < width:
            if i >= n:
                raise MaskCorruptionError(
                    f"mask row {y} ran out of runs before reaching width {width}"
                )
            run = runs[i]
            if run < 0:
                raise MaskCorruptionError(f"negative run length {run} in row {y}")
            if run == 0 and not (first and not fg):
                raise MaskCorruptionError(f"non-leading zero run in row {y}")
            i += 1
            x += run
            first = False
            fg = not fg
        if x != width:
            raise MaskCorruptionError(
                f"mask row {y} runs sum to {x}, expected width {width}"
            )
    if i != n:
        raise MaskCorruptionError(f"{n - i} trailing run values beyond the last row")


def decode_mask(mask: MaskBitmap) -> np.ndarray:
    """Functional alias for :meth:`MaskBitmap.decode`."""
    return mask.decode()


@dataclass
class FeaturePack:
    """All data for one matching sample."""

    direction: str
    source_features: np.ndarray  # H_s x W_s x d, float64
    dest_features: np.ndarray  # H_d x W_d x d, float64
    source_mask: MaskBitmap
    candidates: list[MaskBitmap] = field(default_factory=list)
    gt_index: int | None = None
    gt_mask: MaskBitmap | None = None
    visible: bool = True
    version: int = PACK_VERSION

    def validate(self) -> None:
        if self.direction not in DIRECTIONS:
            raise PackValidationError(f"unknown direction {self.direction!r}")
        for name, feats in (("source", self.source_features), ("dest", self.dest_features)):
            if feats.ndim != 3:
                raise PackValidationError(f"{name} features must be H x W x d")
            if not np.all(np.isfinite(feats)):
                raise PackValidationError(f"{name} features contain NaN or Inf")
        if self.source_features.shape[2] != self.dest_features.shape[2]:
            raise PackValidationError(
                "feature dims differ: "
                f"{self.source_features.shape[2]} vs {self.dest_features.shape[2]}"
            )
        for mask in self.candidates:
            if (mask.height, mask.width) != (self.candidates[0].height, self.candidates[0].width):
                raise PackValidationError("candidate masks disagree on grid size")
        if self.gt_index is not None and not 0 <= self.gt_index < len(self.candidates):
            raise PackValidationError(
                f"gt_index {self.gt_index} out of range for {len(self.candidates)} candidates"
            )
        if self.gt_mask is not None and self.candidates:
            c0 = self.candidates[0]
            if (self.gt_mask.height, self.gt_mask.width) != (c0.height, c0.width):
                raise PackValidationError("gt mask grid differs from candidate grid")
        if not self.visible and (self.gt_index is not None or self.gt_mask is not None):
            raise PackValidationError("invisible sample must not carry ground truth")
        for dim in (*self.source_features.shape, *self.dest_features.shape, len(self.candidates)):
            if dim > 0xFFFF:
                raise PackValidationError(f"dimension {dim} exceeds the u16 format limit")

    @property
    def has_gt(self) -> bool:
        return self.gt_index is not None


def _write_mask(out: io.BytesIO, mask: MaskBitmap) -> None:
    out.write(struct.pack("<HHI", mask.width, mask.height, len(mask.runs)))
    out.write(np.asarray(mask.runs, dtype="<u4").tobytes())


def write_pack(pack: FeaturePack, sink) -> int:
    """Serialize a validated pack; returns the byte count written."""
    pack.validate()
    buf = io.BytesIO()
    flags = (_FLAG_VISIBLE if pack.visible else 0) | (_FLAG_GT if pack.has_gt else 0)
    hs, ws, d = pack.source_features.shape
    hd, wd, _ = pack.dest_features.shape
    buf.write(MAGIC)
    buf.write(
        struct.pack(
            "<HBHHHHHHB",
            pack.version,
            DIRECTIONS.index(pack.direction),
            d,
            hs,
            ws,
            hd,
            wd,
            len(pack.candidates),
            flags,
        )
    )
    buf.write(np.ascontiguousarray(pack.source_features, dtype="<f4").tobytes())
    buf.write(np.ascontiguousarray(pack.dest_features, dtype="<f4").tobytes())
    _write_mask(buf, pack.source_mask)
    for mask in pack.candidates:
        _write_mask(buf, mask)
    if pack.has_gt:
        buf.write(struct.pack("<H", pack.gt_index))
        if pack.gt_mask is None:
            raise PackValidationError("gt_index present but gt_mask missing")
        _write_mask(buf, pack.gt_mask)
    data = buf.getvalue()
    sink.write(data)
    return len(data)


class _Reader:
    def __init__(self, source):
        self.data = source.read()
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise PackTruncatedError(
                f"truncated while reading {what}: expected {self.pos + n} bytes, "
                f"stream has {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def done(self) -> bool:
        return self.pos == len(self.data)


def _read_mask(r: _Reader) -> MaskBitmap:
    w, h, count = struct.unpack("<HHI", r.take(8, "mask header"))
    raw = r.take(4 * count, "mask runs")
    runs = tuple(int(v) for v in np.frombuffer(raw, dtype="<u4"))
    return MaskBitmap(w, h, runs)


def read_pack(source) -> FeaturePack:
    """Parse and validate a pack; exact inverse of :func:`write_pack`."""
    r = _Reader(source)
    if r.take(4, "magic") != MAGIC:
        raise PackFormatError("not a feature pack: bad magic")
    version, direction, d, hs, ws, hd, wd, n, flags = struct.unpack(
        "<HBHHHHHHB", r.take(16, "header")
    )
    if version != PACK_VERSION:
        raise PackFormatError(f"unsupported pack version {version}")
    if direction >= len(DIRECTIONS):
        raise PackFormatError(f"unknown direction code {direction}")
    src = np.frombuffer(r.take(4 * hs * ws * d, "source features"), dtype="<f4")
    dst = np.frombuffer(r.take(4 * hd * wd * d, "dest features"), dtype="<f4")
    source_mask = _read_mask(r)
    candidates = [_read_mask(r) for _ in range(n)]
    gt_index = None
    gt_mask = None
    if flags & _FLAG_GT:
        (gt_index,) = struct.unpack("<H", r.take(2, "gt index"))
        gt_mask = _read_mask(r)
    if not r.done():
        raise PackFormatError(f"{len(r.data) - r.pos} unexpected trailing bytes")
    pack = FeaturePack(
        direction=DIRECTIONS[direction],
        source_features=src.astype(np.float64).reshape(hs, ws, d),
        dest_features=dst.astype(np.float64).reshape(hd, wd, d),
        source_mask=source_mask,
        candidates=candidates,
        gt_index=gt_index,
        gt_mask=gt_mask,
        visible=bool(flags & _FLAG_VISIBLE),
        version=version,
    )
    pack.validate()
    return pack


def write_pack_file(pack: FeaturePack, path) -> int:
    with open(path, "wb") as f:
        return write_pack(pack, f)


def read_pack_file(path) -> FeaturePack:
    with open(path, "rb") as f:
        return read_pack(f)


def read_manifest(path) -> list[Path]:
    """Relative pack paths listed in a manifest, resolved against its directory."""
    path = Path(path)
    base = path.parent
    entries = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line:
            entries.append(base / line)
    return entries


def write_manifest(directory, names) -> Path:
    directory = Path(directory)
    manifest = directory / MANIFEST_NAME
    manifest.write_text("".join(f"{name}\n" for name in names))
    return manifest
