"""Core volumetric types and a bit-exact sidecar-plus-raw on-disk format.

A volume is stored as `<base>.json` (shape, dtype, channel names, metadata)
next to `<base>.raw` (little-endian, C order, indexed [channel, k, j, i]) and
optionally `<base>.mask.raw`. Round-trips are byte-identical regardless of
host endianness.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KNOWN_CHANNELS = ("T2W", "ADC", "DWI", "FE")
MAX_LABEL = 5
SPLIT_TAGS = ("train", "val", "test")

# dtype tag in the sidecar <-> numpy dtype; little-endian fixed on disk
_DTYPES = {"u8": np.dtype("uint8"), "f32": np.dtype("<f4")}


def _dtype_tag(dtype: np.dtype) -> str:
    for tag, dt in _DTYPES.items():
        if dt == dtype:
            return tag
    raise ValueError(f"unsupported element type {dtype}; use u8 or f32")


@dataclass
class MpMriVolume:
    """Multi-channel 3-D intensity volume with optional gland mask and label.

    `data` is indexed [channel, k, j, i] with i the horizontal (left-right)
    axis; values must stay within [0, 255].
    """

    channels: tuple[str, ...]
    data: np.ndarray
    mask: np.ndarray | None = None
    spacing: tuple[float, float, float] | None = None
    label: int | None = None

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("channel names must be unique")
        for name in self.channels:
            if name not in KNOWN_CHANNELS:
                raise ValueError(f"unknown channel name {name!r}")
        self.data = np.asarray(self.data)
        if self.data.dtype not in _DTYPES.values():
            self.data = self.data.astype(
                np.uint8 if self.data.dtype.kind in "iu" else np.dtype("<f4")
            )
        if self.data.ndim != 4:
            raise ValueError(f"data must be 4-D [channel, k, j, i], got shape {self.data.shape}")
        if self.data.shape[0] != len(self.channels):
            raise ValueError(
                f"{len(self.channels)} channel names but data has {self.data.shape[0]} channels"
            )
        if self.data.size and (self.data.min() < 0 or self.data.max() > 255):
            raise ValueError("intensities must lie within [0, 255]")
        if self.mask is not None:
            self.mask = np.asarray(self.mask).astype(bool)
            if self.mask.shape != self.spatial_shape:
                raise ValueError(
                    f"mask shape {self.mask.shape} != spatial shape {self.spatial_shape}"
                )
        if self.spacing is not None:
            self.spacing = tuple(float(s) for s in self.spacing)
            if len(self.spacing) != 3:
                raise ValueError("spacing must have three entries (k, j, i)")
        if self.label is not None:
            self.label = int(self.label)
            if not 0 <= self.label <= MAX_LABEL:
                raise ValueError(f"label must be in 0..{MAX_LABEL}, got {self.label}")

    @property
    def spatial_shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    def channel(self, name: str) -> np.ndarray:
        """3-D view [k, j, i] of one named channel."""
        try:
            idx = self.channels.index(name)
        except ValueError:
            raise ValueError(f"volume has no channel {name!r}") from None
        return self.data[idx]

    def replace(self, **changes) -> "MpMriVolume":
        fields = {
            "channels": self.channels,
            "data": self.data,
            "mask": self.mask,
            "spacing": self.spacing,
            "label": self.label,
        }
        fields.update(changes)
        return MpMriVolume(**fields)

    def equals(self, other: "MpMriVolume") -> bool:
        """Bit-exact equality of data, mask and metadata."""
        if self.channels != other.channels or self.label != other.label:
            return False
        if self.spacing != other.spacing:
            return False
        if self.data.dtype != other.data.dtype or not np.array_equal(self.data, other.data):
            return False
        if (self.mask is None) != (other.mask is None):
            return False
        if self.mask is not None and not np.array_equal(self.mask, other.mask):
            return False
        return True


def _base_path(path: str | Path) -> Path:
    path = Path(path)
    if path.suffix == ".json":
        path = path.with_suffix("")
    return path


def volume_file_paths(path: str | Path) -> tuple[Path, Path, Path]:
    base = _base_path(path)
    return base.with_suffix(".json"), base.with_suffix(".raw"), base.with_suffix(".mask.raw")


def volume_blobs(vol: MpMriVolume) -> tuple[bytes, bytes, bytes | None]:
    """Serialized (sidecar JSON, data payload, mask payload) for one volume."""
    header = {
        "shape": list(vol.data.shape),
        "dtype": _dtype_tag(vol.data.dtype),
        "channels": list(vol.channels),
        "mask": vol.mask is not None,
    }
    if vol.label is not None:
        header["label"] = vol.label
    if vol.spacing is not None:
        header["spacing"] = list(vol.spacing)
    payload = np.ascontiguousarray(vol.data.astype(_DTYPES[header["dtype"]], copy=False))
    mask_blob = vol.mask.astype(np.uint8).tobytes() if vol.mask is not None else None
    return (json.dumps(header, sort_keys=True) + "\n").encode(), payload.tobytes(), mask_blob


def write_volume(vol: MpMriVolume, path: str | Path) -> None:
    """Write sidecar JSON plus raw little-endian binary blobs."""
    sidecar, raw, mask_raw = volume_file_paths(path)
    if not sidecar.parent.is_dir():
        raise FileNotFoundError(f"parent directory {sidecar.parent} does not exist")
    sidecar_blob, payload, mask_blob = volume_blobs(vol)
    _atomic_write_bytes(raw, payload)
    if mask_blob is not None:
        _atomic_write_bytes(mask_raw, mask_blob)
    _atomic_write_bytes(sidecar, sidecar_blob)


def _atomic_write_bytes(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def read_volume(path: str | Path) -> MpMriVolume:
    """Read a volume written by :func:`write_volume`, validating invariants."""
    sidecar, raw, mask_raw = volume_file_paths(path)
    if not sidecar.exists():
        raise FileNotFoundError(f"missing sidecar {sidecar}")
    if not raw.exists():
        raise FileNotFoundError(f"missing binary {raw}")
    header = json.loads(sidecar.read_text())
    try:
        shape = tuple(int(s) for s in header["shape"])
        dtype = _DTYPES[header["dtype"]]
        channels = tuple(header["channels"])
    except KeyError as exc:
        raise ValueError(f"sidecar {sidecar} missing key {exc}") from None
    expected = int(np.prod(shape)) * dtype.itemsize
    blob = raw.read_bytes()
    if len(blob) != expected:
        raise ValueError(
            f"{raw}: payload is {len(blob)} bytes but header declares {expected}"
        )
    data = np.frombuffer(blob, dtype=dtype).reshape(shape)
    mask = None
    if header.get("mask"):
        if not mask_raw.exists():
            raise FileNotFoundError(f"sidecar declares a mask but {mask_raw} is missing")
        mask_blob = mask_raw.read_bytes()
        spatial = shape[1:]
        if len(mask_blob) != int(np.prod(spatial)):
            raise ValueError(f"{mask_raw}: mask payload size mismatch")
        mask = np.frombuffer(mask_blob, dtype=np.uint8).reshape(spatial).astype(bool)
    return MpMriVolume(
        channels=channels,
        data=data,
        mask=mask,
        spacing=tuple(header["spacing"]) if "spacing" in header else None,
        label=header.get("label"),
    )


@dataclass
class ManifestEntry:
    path: str
    label: int
    split: str

    def __post_init__(self):
        self.label = int(self.label)
        if not 0 <= self.label <= MAX_LABEL:
            raise ValueError(f"label must be in 0..{MAX_LABEL}, got {self.label}")
        if self.split not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag {self.split!r}")


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")

    def subset(self, split: str) -> list[ManifestEntry]:
        if split not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag {split!r}")
        return [e for e in self.entries if e.split == split]

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=int)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse a `path,label,split` CSV into a validated manifest."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty manifest") from None
        if [h.strip() for h in header] != ["path", "label", "split"]:
            raise ValueError(f"{path}: expected header path,label,split, got {header}")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: malformed row {row}")
            try:
                entries.append(ManifestEntry(path=row[0], label=int(row[1]), split=row[2]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return DatasetManifest(entries=entries)


def manifest_bytes(manifest: DatasetManifest) -> bytes:
    lines = ["path,label,split"]
    lines += [f"{e.path},{e.label},{e.split}" for e in manifest.entries]
    return ("\n".join(lines) + "\n").encode("utf-8")


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write the manifest CSV (UTF-8, LF line endings)."""
    Path(path).write_bytes(manifest_bytes(manifest))
