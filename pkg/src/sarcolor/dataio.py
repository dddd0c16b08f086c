"""Raster patch I/O, dataset manifests, band selection, and SAR range adjustment.

Patches live in a minimal binary container (magic ``SCP1``) instead of GeoTIFF:
the math downstream never needs georeferencing, and this keeps the toolkit free
of geospatial dependencies.  Use gdal_translate or rasterio externally to
convert real scenes into this format.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

PATCH_MAGIC = b"SCP1"
DEFAULT_BIT_DEPTH = 12
_HEADER = struct.Struct("<4I")  # height, width, channels, bit_depth


class PatchFormatError(ValueError):
    """Malformed patch file (bad magic, truncated payload, non-finite data)."""


@dataclass(eq=False)
class RasterPatch:
    """Single- or multi-channel 2-D float raster.

    ``data`` is channel-major, row-major: shape (channels, height, width).
    Values nominally live in [0, 2**bit_depth] but intermediate products may
    overshoot; only the 8-bit preview export clamps.
    """

    data: np.ndarray
    bit_depth: int = DEFAULT_BIT_DEPTH

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        if arr.ndim != 3:
            raise ValueError(f"patch data must be 2-D or 3-D, got {arr.ndim}-D")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        c, h, w = arr.shape
        if c < 1 or h < 1 or w < 1:
            raise ValueError(f"invalid patch shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.bit_depth = int(self.bit_depth)
        if self.bit_depth < 1:
            raise ValueError(f"invalid bit depth {self.bit_depth}")
        self.validate()

    def validate(self):
        if not np.all(np.isfinite(self.data)):
            raise ValueError("non-finite samples in patch")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def band(self, i: int) -> np.ndarray:
        return self.data[i]

    def astype(self, dtype) -> "RasterPatch":
        return RasterPatch(self.data.astype(dtype), self.bit_depth)


@dataclass
class PairedSample:
    """One (SAR, MS, optional GT) training/evaluation unit."""

    id: str
    sar: RasterPatch
    ms: RasterPatch
    gt: Optional[RasterPatch] = None

    def __post_init__(self):
        if self.sar.channels != 1:
            raise ValueError(f"sample {self.id}: sar must have 1 channel, got {self.sar.channels}")
        if self.ms.channels != 3:
            raise ValueError(f"sample {self.id}: ms must have 3 channels, got {self.ms.channels}")
        shapes = {(p.height, p.width) for p in (self.sar, self.ms) if p is not None}
        if self.gt is not None:
            if self.gt.channels != 3:
                raise ValueError(f"sample {self.id}: gt must have 3 channels, got {self.gt.channels}")
            shapes.add((self.gt.height, self.gt.width))
        if len(shapes) != 1:
            raise ValueError(f"sample {self.id}: dimension mismatch across sar/ms/gt: {sorted(shapes)}")


@dataclass
class ManifestEntry:
    id: str
    sar: str
    ms: str
    gt: Optional[str] = None


@dataclass
class Manifest:
    """Ordered list of sample records; paths are relative to ``root``."""

    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    def resolve(self, rel: str) -> Path:
        return (self.root / rel).resolve()

    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def read_patch(path) -> RasterPatch:
    """Read one SCP1 patch file.

    Raises FileNotFoundError for a missing file and PatchFormatError for bad
    magic, truncated header/payload, or non-finite samples.
    """
    path = Path(path)
    raw = path.read_bytes()  # missing file -> FileNotFoundError
    if raw[:4] != PATCH_MAGIC:
        raise PatchFormatError(f"bad magic in {path}: {raw[:4]!r}")
    if len(raw) < 4 + _HEADER.size:
        raise PatchFormatError(f"truncated header in {path}")
    h, w, c, p = _HEADER.unpack_from(raw, 4)
    if h < 1 or w < 1 or c < 1:
        raise PatchFormatError(f"invalid dimensions {h}x{w}x{c} in {path}")
    need = h * w * c * 4
    payload = raw[4 + _HEADER.size:]
    if len(payload) < need:
        raise PatchFormatError(
            f"truncated payload in {path}: expected {need} bytes, got {len(payload)}")
    data = np.frombuffer(payload[:need], dtype="<f4").reshape(c, h, w)
    if not np.all(np.isfinite(data)):
        raise PatchFormatError(f"non-finite samples in {path}")
    return RasterPatch(data.copy(), bit_depth=p)


def write_patch(patch: RasterPatch, path) -> None:
    """Write a patch as SCP1 (float32 payload). Round-trips float32 data bit-exactly."""
    patch.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = bytearray()
    buf += PATCH_MAGIC
    buf += _HEADER.pack(patch.height, patch.width, patch.channels, patch.bit_depth)
    buf += np.ascontiguousarray(patch.data, dtype="<f4").tobytes()
    path.write_bytes(bytes(buf))


def adjust_sar(raw: RasterPatch, p: int = DEFAULT_BIT_DEPTH) -> RasterPatch:
    """Affinely map a raw single-band SAR patch onto [0, 2**p].

    Order-preserving; min maps to exactly 0 and max to exactly 2**p.
    """
    if raw.channels != 1:
        raise ValueError(f"adjust_sar expects 1 channel, got {raw.channels}")
    lo = float(raw.data.min())
    hi = float(raw.data.max())
    if hi <= lo:
        raise ValueError("degenerate dynamic range: max(raw) == min(raw)")
    out = (raw.data - lo) / (hi - lo) * float(2 ** p)
    return RasterPatch(out, bit_depth=p)


def select_rgb(ms13: RasterPatch) -> RasterPatch:
    """Pick the RGB triplet (bands 4, 3, 2, 1-indexed) out of a 13-band stack."""
    if ms13.channels != 13:
        raise ValueError(f"select_rgb expects 13 channels, got {ms13.channels}")
    rgb = ms13.data[[3, 2, 1], :, :]
    return RasterPatch(rgb.copy(), bit_depth=ms13.bit_depth)


def load_manifest(path) -> Manifest:
    """Load a JSON-lines manifest: one ``{"id", "sar", "ms", ["gt"]}`` record per line.

    Paths are relative to the manifest's directory and must resolve to existing
    files; ids must be unique.
    """
    path = Path(path)
    root = path.parent.resolve()
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{ln}: malformed manifest record: {exc}") from exc
            for key in ("id", "sar", "ms"):
                if key not in rec:
                    raise ValueError(f"{path}:{ln}: manifest record missing field {key!r}")
            sid = str(rec["id"])
            if sid in seen:
                raise ValueError(f"{path}:{ln}: duplicate id {sid!r}")
            seen.add(sid)
            entry = ManifestEntry(sid, rec["sar"], rec["ms"], rec.get("gt"))
            for rel in (entry.sar, entry.ms, entry.gt):
                if rel is not None and not (root / rel).exists():
                    raise FileNotFoundError(f"{path}:{ln}: unresolvable path {rel!r}")
            entries.append(entry)
    return Manifest(root=root, entries=entries)


def save_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            rec = {"id": e.id, "sar": e.sar, "ms": e.ms}
            if e.gt is not None:
                rec["gt"] = e.gt
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_sample(manifest: Manifest, entry: ManifestEntry) -> PairedSample:
    sar = read_patch(manifest.resolve(entry.sar))
    ms = read_patch(manifest.resolve(entry.ms))
    gt = read_patch(manifest.resolve(entry.gt)) if entry.gt is not None else None
    return PairedSample(id=entry.id, sar=sar, ms=ms, gt=gt)


def iterate_samples(manifest: Manifest) -> Iterator[PairedSample]:
    """Yield PairedSamples in file order; invariants checked per sample."""
    for entry in manifest.entries:
        yield load_sample(manifest, entry)


def write_preview(patch: RasterPatch, path, vmin: float = 0.0, vmax: Optional[float] = None) -> None:
    """Export an 8-bit PNG preview, linearly scaled from [vmin, vmax] with clamping.

    Default range is [0, 2**bit_depth]. 1-channel patches become grayscale,
    3-channel become RGB.
    """
    from PIL import Image

    if vmax is None:
        vmax = float(2 ** patch.bit_depth)
    if vmax <= vmin:
        raise ValueError("preview range must have vmax > vmin")
    scaled = (patch.data.astype(np.float64) - vmin) / (vmax - vmin) * 255.0
    u8 = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    if patch.channels == 1:
        img = Image.fromarray(u8[0], mode="L")
    elif patch.channels == 3:
        img = Image.fromarray(np.transpose(u8, (1, 2, 0)), mode="RGB")
    else:
        raise ValueError(f"preview supports 1 or 3 channels, got {patch.channels}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")


def write_signed_preview(patch: RasterPatch, path, amplitude: Optional[float] = None) -> None:
    """Preview for signed rasters (residuals): symmetric scale [-A, A] -> [0, 255]."""
    if amplitude is None:
        amplitude = float(np.abs(patch.data).max())
        if amplitude == 0.0:
            amplitude = 1.0
    write_preview(patch, path, vmin=-amplitude, vmax=amplitude)
