"""Reading and writing phase images.

Two formats are accepted:

* single-channel 32-bit float TIFF holding radians (``.tif``/``.tiff``);
* raw little-endian grid (``.raw``) with a JSON text header next to it
  (``<stem>.hdr``) giving ``width``, ``height``, ``dtype``, ``endianness``
  and optionally ``pixel_size_um`` and ``wavelength_nm``.

Calibration passed by the caller overrides whatever the file carries.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tifffile

from .core import PhaseImage, QPMSegError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".tif", ".tiff", ".raw")
_DTYPES = {"float32": "f4", "float64": "f8"}


class ImageLoadError(QPMSegError):
    pass


@dataclass(frozen=True)
class Calibration:
    pixel_size_um: float | None = None
    wavelength_nm: float | None = None


def _calibrated(image_id, phase, header: dict, calibration: Calibration | None) -> PhaseImage:
    calibration = calibration or Calibration()
    pixel = calibration.pixel_size_um or header.get("pixel_size_um")
    wavelength = calibration.wavelength_nm or header.get("wavelength_nm")
    if pixel is None:
        raise ImageLoadError(f"{image_id}: no pixel size in file or on the command line")
    if wavelength is None:
        raise ImageLoadError(f"{image_id}: no wavelength in file or on the command line")
    try:
        return PhaseImage(image_id, phase, float(pixel), float(wavelength))
    except ValueError as exc:
        raise ImageLoadError(f"{image_id}: {exc}") from exc


def _read_raw(path: Path) -> tuple[np.ndarray, dict]:
    hdr_path = path.with_suffix(".hdr")
    if not hdr_path.exists():
        raise ImageLoadError(f"{path.name}: missing header {hdr_path.name}")
    try:
        header = json.loads(hdr_path.read_text())
        width, height = int(header["width"]), int(header["height"])
        dtype = header.get("dtype", "float32")
        endian = header.get("endianness", "little")
    except (ValueError, KeyError, TypeError) as exc:
        raise ImageLoadError(f"{hdr_path.name}: bad header ({exc})") from exc
    if dtype not in _DTYPES:
        raise ImageLoadError(f"{hdr_path.name}: unsupported dtype {dtype!r}")
    if endian not in ("little", "big"):
        raise ImageLoadError(f"{hdr_path.name}: unsupported endianness {endian!r}")
    dt = np.dtype(("<" if endian == "little" else ">") + _DTYPES[dtype])
    data = path.read_bytes()
    expected = width * height * dt.itemsize
    if len(data) != expected:
        raise ImageLoadError(
            f"{path.name}: {len(data)} bytes, header implies {expected} ({width}x{height} {dtype})")
    return np.frombuffer(data, dtype=dt).reshape(height, width).astype(np.float64), header


def _read_tiff(path: Path) -> tuple[np.ndarray, dict]:
    try:
        with tifffile.TiffFile(path) as tif:
            page = tif.pages[0]
            arr = page.asarray()
            desc = page.description or ""
    except Exception as exc:  # tifffile raises a variety of types on corrupt input
        raise ImageLoadError(f"{path.name}: unreadable TIFF ({exc})") from exc
    arr = np.squeeze(arr)
    if arr.ndim != 2:
        raise ImageLoadError(f"{path.name}: expected a single-channel image, got shape {arr.shape}")
    if arr.dtype != np.float32:
        raise ImageLoadError(f"{path.name}: expected float32 samples, got {arr.dtype}")
    header = {}
    try:
        parsed = json.loads(desc)
        if isinstance(parsed, dict):
            header = parsed
    except ValueError:
        pass
    return arr.astype(np.float64), header


def load_image(path, calibration: Calibration | None = None) -> PhaseImage:
    """Load one phase image; the image id is the file stem.

    Raises:
        ImageLoadError: unknown format, size mismatch, non-finite samples or
            missing calibration.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".raw":
        phase, header = _read_raw(path)
    elif suffix in (".tif", ".tiff"):
        phase, header = _read_tiff(path)
    else:
        raise ImageLoadError(f"{path.name}: unknown image format {suffix!r}")
    return _calibrated(path.stem, phase, header, calibration)


def discover_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def write_raw(directory, img: PhaseImage, dtype: str = "float64") -> Path:
    """Write ``<id>.raw`` plus its ``<id>.hdr`` header; returns the raw path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    raw_path = directory / f"{img.id}.raw"
    dt = np.dtype("<" + _DTYPES[dtype])
    raw_path.write_bytes(img.phase.astype(dt).tobytes())
    header = {
        "width": img.width,
        "height": img.height,
        "dtype": dtype,
        "endianness": "little",
        "pixel_size_um": img.pixel_size_um,
        "wavelength_nm": img.wavelength_nm,
    }
    raw_path.with_suffix(".hdr").write_text(json.dumps(header, indent=2) + "\n")
    return raw_path


def write_tiff(directory, img: PhaseImage) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{img.id}.tif"
    desc = json.dumps({"pixel_size_um": img.pixel_size_um, "wavelength_nm": img.wavelength_nm})
    tifffile.imwrite(path, img.phase.astype(np.float32), description=desc, metadata=None)
    return path
