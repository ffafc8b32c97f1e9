"""Multiband reflectance images, the MSR container format, and scene manifests.

Reflectance rasters are stored as float32 in [0, 1] for the whole life of the
data: the on-disk MSR container holds the raw little-endian float32 payload,
so a save/load round trip is bit-exact and nothing is ever squeezed through
an 8-bit intermediate.

MSR layout (all little-endian):

    bytes 0-3   magic ``MSR1``
    u32         width
    u32         height
    u32         band count B
    B times     u16 name length, UTF-8 name, float32 center wavelength (nm)
    B*H*W       float32 pixels, planar band-major, rows top to bottom

The scene manifest is a JSON document::

    {"scene_scale": s,
     "frames": [{"file": ..., "fx": ..., "fy": ..., "cx": ..., "cy": ...,
                 "width": ..., "height": ..., "near": ..., "far": ...,
                 "transform": [16 numbers, row-major world-from-camera]}]}

Camera convention: the camera looks along -Z with +X right and +Y up in the
camera frame; manifest poses map camera coordinates to world coordinates.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BandMismatchError,
    CalibrationError,
    ConfigError,
    FormatError,
    IoError,
    PoseError,
    RangeError,
)

MSR_MAGIC = b"MSR1"

# MS600Pro-style six-band layout used as the package default.
DEFAULT_BANDS = (
    ("B", 450.0),
    ("G", 555.0),
    ("R", 660.0),
    ("RE1", 720.0),
    ("RE2", 750.0),
    ("NIR", 840.0),
)


@dataclass(frozen=True)
class BandSpec:
    """One spectral channel: a short name and its center wavelength in nm."""

    name: str
    center_wavelength_nm: float

    def __post_init__(self):
        if not self.name:
            raise ConfigError("band name must be non-empty")
        if not (self.center_wavelength_nm > 0):
            raise ConfigError(
                f"band {self.name!r}: center wavelength must be positive, "
                f"got {self.center_wavelength_nm}"
            )


def default_bands() -> list[BandSpec]:
    return [BandSpec(name, wl) for name, wl in DEFAULT_BANDS]


def _validate_pixels(pixels: np.ndarray, bands) -> None:
    """Raise RangeError naming band and flat pixel index of the first bad value."""
    finite = np.isfinite(pixels)
    in_range = finite & (pixels >= 0.0) & (pixels <= 1.0)
    if in_range.all():
        return
    b, y, x = np.unravel_index(int(np.argmin(in_range)), pixels.shape)
    value = pixels[b, y, x]
    raise RangeError(
        f"band {bands[b].name!r} (index {b}), pixel {y * pixels.shape[2] + x}: "
        f"value {value!r} outside [0, 1]"
    )


@dataclass(frozen=True)
class SpectralImage:
    """An H x W x B reflectance raster with per-band wavelength metadata.

    ``pixels`` has shape (B, H, W), dtype float32, C-contiguous: planar
    band-major storage, matching both the MSR container and per-band
    processing. Values are surface reflectance in [0, 1]. Instances are
    immutable and safe to share across threads.
    """

    width: int
    height: int
    bands: tuple[BandSpec, ...]
    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bands", tuple(self.bands))
        names = [b.name for b in self.bands]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate band names: {names}")
        if len(self.bands) < 1:
            raise ConfigError("an image needs at least one band")
        px = np.ascontiguousarray(self.pixels, dtype=np.float32)
        expected = (len(self.bands), self.height, self.width)
        if px.shape != expected:
            raise RangeError(
                f"pixel array shape {px.shape} != (B, H, W) = {expected}"
            )
        _validate_pixels(px, self.bands)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def band_count(self) -> int:
        return len(self.bands)

    @property
    def pixel_count(self) -> int:
        return self.height * self.width

    def band_named(self, name: str) -> np.ndarray:
        for i, b in enumerate(self.bands):
            if b.name == name:
                return self.pixels[i]
        raise KeyError(name)


def save_spectral_image(img: SpectralImage, path) -> None:
    """Write ``img`` as an MSR file; the round trip through load is bit-exact."""
    header = bytearray()
    header += MSR_MAGIC
    header += struct.pack("<III", img.width, img.height, img.band_count)
    for band in img.bands:
        name = band.name.encode("utf-8")
        header += struct.pack("<H", len(name))
        header += name
        header += struct.pack("<f", band.center_wavelength_nm)
    payload = img.pixels.astype("<f4", copy=False).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(bytes(header))
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(f"{self.path}: truncated after {self.off} bytes")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_msr_header(reader: _Reader):
    if reader.take(4) != MSR_MAGIC:
        raise FormatError(f"{reader.path}: bad magic, not an MSR file")
    width, height, nbands = reader.unpack("<III")
    if width == 0 or height == 0 or nbands == 0:
        raise FormatError(f"{reader.path}: zero-sized image ({width}x{height}x{nbands})")
    bands = []
    for _ in range(nbands):
        (name_len,) = reader.unpack("<H")
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{reader.path}: band name is not UTF-8") from exc
        (wavelength,) = reader.unpack("<f")
        bands.append(BandSpec(name, float(wavelength)))
    return width, height, bands


def read_msr_bands(path) -> tuple[int, int, list[BandSpec]]:
    """Read only (width, height, bands) from an MSR header."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(65536)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return _read_msr_header(_Reader(head, path))


def load_spectral_image(path) -> SpectralImage:
    """Load an MSR file, bit-exact, validating the reflectance range."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    reader = _Reader(data, path)
    width, height, bands = _read_msr_header(reader)
    count = len(bands) * height * width
    payload = reader.take(count * 4)
    if reader.off != len(data):
        raise FormatError(f"{path}: {len(data) - reader.off} trailing bytes")
    pixels = np.frombuffer(payload, dtype="<f4").reshape(len(bands), height, width)
    return SpectralImage(width=width, height=height, bands=tuple(bands), pixels=pixels.copy())


def gray_card_calibrate(
    raw: SpectralImage,
    gray_dn,
    gray_reflectance,
) -> tuple[SpectralImage, int]:
    """Convert digital numbers (rescaled to [0, 1]) into surface reflectance.

    A pixel equal to the gray-card reading ``gray_dn[b]`` maps to the card's
    known reflectance ``gray_reflectance[b]``; everything else scales
    linearly. Values pushed past [0, 1] (overexposure relative to the card)
    are clamped and counted rather than silently dropped.

    Returns the calibrated image and the number of clamped values.
    """
    gray_dn = np.asarray(gray_dn, dtype=np.float64)
    gray_reflectance = np.asarray(gray_reflectance, dtype=np.float64)
    nb = raw.band_count
    if gray_dn.shape != (nb,) or gray_reflectance.shape != (nb,):
        raise CalibrationError(
            f"expected {nb} per-band reference values, got "
            f"{gray_dn.shape} and {gray_reflectance.shape}"
        )
    if not (gray_dn > 0).all():
        raise CalibrationError(f"gray-card digital numbers must be positive: {gray_dn}")
    if not ((gray_reflectance > 0) & (gray_reflectance <= 1)).all():
        raise CalibrationError(
            f"gray-card reflectance must lie in (0, 1]: {gray_reflectance}"
        )
    scale = (gray_reflectance / gray_dn).astype(np.float32)
    scaled = raw.pixels * scale[:, None, None]
    clamped = int(np.count_nonzero((scaled < 0.0) | (scaled > 1.0)))
    out = np.clip(scaled, 0.0, 1.0)
    img = SpectralImage(width=raw.width, height=raw.height, bands=raw.bands, pixels=out)
    return img, clamped


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus the ray clip range, all in pixels/scene units."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"focal lengths must be positive: fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )
        if not (0 < self.near < self.far):
            raise ConfigError(f"need 0 < near < far, got near={self.near}, far={self.far}")


@dataclass(frozen=True)
class Frame:
    file: str
    camera: CameraModel
    pose: np.ndarray  # 4x4 world-from-camera

    def __post_init__(self):
        pose = np.asarray(self.pose, dtype=np.float64)
        if pose.shape != (4, 4):
            raise PoseError(f"pose must be 4x4, got {pose.shape}")
        pose.flags.writeable = False
        object.__setattr__(self, "pose", pose)


@dataclass(frozen=True)
class SceneManifest:
    frames: tuple[Frame, ...]
    scene_scale: float
    bands: tuple[BandSpec, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "bands", tuple(self.bands))
        if not (self.scene_scale > 0):
            raise ConfigError(f"scene_scale must be positive, got {self.scene_scale}")


ROTATION_TOL = 1e-5


def check_pose(pose: np.ndarray, index: int) -> None:
    """Require an orthonormal, determinant +1 rotation block (tolerance 1e-5)."""
    rot = np.asarray(pose, dtype=np.float64)[:3, :3]
    gram_err = np.abs(rot.T @ rot - np.eye(3)).max()
    det = np.linalg.det(rot)
    if gram_err > ROTATION_TOL or abs(det - 1.0) > 1e-4:
        raise PoseError(
            f"frame {index}: rotation block is not a proper rotation "
            f"(max |R^T R - I| = {gram_err:.3g}, det = {det:.6g})"
        )


_FRAME_KEYS = ("file", "fx", "fy", "cx", "cy", "width", "height", "near", "far", "transform")


def load_manifest(path) -> SceneManifest:
    """Parse and validate a scene manifest, including each frame's band list."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "frames" not in doc or "scene_scale" not in doc:
        raise FormatError(f"{path}: manifest must contain 'scene_scale' and 'frames'")

    frames = []
    bands = None
    for i, rec in enumerate(doc["frames"]):
        missing = [k for k in _FRAME_KEYS if k not in rec]
        if missing:
            raise FormatError(f"{path}: frame {i} missing keys {missing}")
        transform = np.asarray(rec["transform"], dtype=np.float64)
        if transform.size != 16:
            raise FormatError(f"{path}: frame {i} transform must have 16 numbers")
        pose = transform.reshape(4, 4)
        check_pose(pose, i)
        camera = CameraModel(
            fx=float(rec["fx"]),
            fy=float(rec["fy"]),
            cx=float(rec["cx"]),
            cy=float(rec["cy"]),
            width=int(rec["width"]),
            height=int(rec["height"]),
            near=float(rec["near"]),
            far=float(rec["far"]),
        )
        frames.append(Frame(file=rec["file"], camera=camera, pose=pose))

        image_path = path.parent / rec["file"]
        w, h, frame_bands = read_msr_bands(image_path)
        if (w, h) != (camera.width, camera.height):
            raise FormatError(
                f"{path}: frame {i} declares {camera.width}x{camera.height} "
                f"but {rec['file']} is {w}x{h}"
            )
        if bands is None:
            bands = frame_bands
        elif frame_bands != bands:
            raise BandMismatchError(
                f"{path}: frame {i} has bands "
                f"{[(b.name, b.center_wavelength_nm) for b in frame_bands]}, "
                f"expected {[(b.name, b.center_wavelength_nm) for b in bands]}"
            )

    return SceneManifest(
        frames=tuple(frames),
        scene_scale=float(doc["scene_scale"]),
        bands=tuple(bands or ()),
    )


def save_manifest(manifest: SceneManifest, path) -> None:
    doc = {
        "scene_scale": manifest.scene_scale,
        "frames": [
            {
                "file": fr.file,
                "fx": fr.camera.fx,
                "fy": fr.camera.fy,
                "cx": fr.camera.cx,
                "cy": fr.camera.cy,
                "width": fr.camera.width,
                "height": fr.camera.height,
                "near": fr.camera.near,
                "far": fr.camera.far,
                "transform": [float(v) for v in np.asarray(fr.pose).reshape(16)],
            }
            for fr in manifest.frames
        ],
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=1))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
