"""3D scalar volumes, isotropic resampling, and derived-image filters.

Volumes are axis-aligned grids with physical voxel spacing in
millimeters. Voxel ``(i, j, k)`` sits at physical position
``origin + (i*sx, j*sy, k*sz)``; arrays are indexed ``[x, y, z]`` and
serialized x-fastest. Volumes are immutable after construction, so every
operation here is a pure function returning a new volume.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

__all__ = [
    "Volume3D",
    "Mask3D",
    "FilterSpec",
    "WAVELET_SUBBANDS",
    "LOG_SIGMAS_MM",
    "default_filters",
    "resample",
    "resample_mask",
    "apply_filter",
    "haar_decompose",
    "save_volume",
    "load_volume",
    "save_mask",
    "load_mask",
]

WAVELET_SUBBANDS = ("LLL", "LLH", "LHL", "LHH", "HLL", "HLH", "HHL", "HHH")
LOG_SIGMAS_MM = (1.0, 2.0, 3.0)

# exp(|x|) overflows float64 for |x| > ~709; clamp keeps outputs finite
_EXP_CLAMP = 700.0


def _as_triple(value, name: str) -> tuple[float, float, float]:
    t = tuple(float(v) for v in value)
    if len(t) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(t)}")
    return t


@dataclass(frozen=True)
class Volume3D:
    """Immutable 3D scalar grid with physical spacing.

    Parameters
    ----------
    values : ndarray, shape (nx, ny, nz)
        Finite scalar samples, indexed ``[x, y, z]``.
    spacing : (sx, sy, sz)
        Voxel edge lengths in millimeters, all positive.
    origin : (ox, oy, oz)
        Physical position of voxel (0, 0, 0) in millimeters.
    """

    values: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError(f"values must be 3-dimensional, got ndim={arr.ndim}")
        if min(arr.shape) < 1:
            raise ValueError(f"all dims must be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("volume values must be finite (no NaN/Inf)")
        spacing = _as_triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise ValueError(f"spacing components must be > 0, got {spacing}")
        origin = _as_triple(self.origin, "origin")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    def same_grid(self, other) -> bool:
        """True when dims, spacing, and origin all match exactly."""
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.origin == other.origin
        )


@dataclass(frozen=True)
class Mask3D:
    """Boolean occupancy grid sharing the geometry of a companion volume."""

    values: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 3:
            raise ValueError(f"mask must be 3-dimensional, got ndim={arr.ndim}")
        arr = arr.astype(bool).copy()
        if not arr.any():
            raise ValueError("mask must contain at least one voxel")
        spacing = _as_triple(self.spacing, "spacing")
        if min(spacing) <= 0:
            raise ValueError(f"spacing components must be > 0, got {spacing}")
        origin = _as_triple(self.origin, "origin")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def voxel_count(self) -> int:
        return int(self.values.sum())

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def same_grid(self, other) -> bool:
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.origin == other.origin
        )


_POINTWISE = ("original", "square", "squareroot", "logarithm", "exponential")
_FILTER_KINDS = _POINTWISE + ("gradient", "log_sigma", "wavelet")


@dataclass(frozen=True)
class FilterSpec:
    """A derived-image filter identified by kind plus its parameters.

    ``log_sigma`` carries a Gaussian scale in millimeters (one of
    ``LOG_SIGMAS_MM``); ``wavelet`` carries a single-level Haar subband
    label (one of ``WAVELET_SUBBANDS``). All other kinds take no
    parameters.
    """

    kind: str
    sigma_mm: float | None = None
    subband: str | None = None

    def __post_init__(self):
        if self.kind not in _FILTER_KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.kind == "log_sigma":
            if self.sigma_mm not in LOG_SIGMAS_MM:
                raise ValueError(
                    f"log_sigma sigma must be one of {LOG_SIGMAS_MM}, got {self.sigma_mm}"
                )
        elif self.sigma_mm is not None:
            raise ValueError(f"sigma_mm is only valid for log_sigma, not {self.kind}")
        if self.kind == "wavelet":
            if self.subband not in WAVELET_SUBBANDS:
                raise ValueError(
                    f"wavelet subband must be one of {WAVELET_SUBBANDS}, got {self.subband!r}"
                )
        elif self.subband is not None:
            raise ValueError(f"subband is only valid for wavelet, not {self.kind}")

    @property
    def label(self) -> str:
        """Short unique identifier, used in feature names."""
        if self.kind == "log_sigma":
            return f"log-sigma-{self.sigma_mm:g}mm"
        if self.kind == "wavelet":
            return f"wavelet-{self.subband}"
        return self.kind

    @classmethod
    def parse(cls, label: str) -> "FilterSpec":
        """Inverse of :attr:`label`."""
        if label.startswith("log-sigma-"):
            return cls("log_sigma", sigma_mm=float(label[len("log-sigma-"):-2]))
        if label.startswith("wavelet-"):
            return cls("wavelet", subband=label[len("wavelet-"):])
        return cls(label)


def default_filters() -> tuple[FilterSpec, ...]:
    """The full filter catalogue: original, five pointwise/derivative
    kinds, three LoG scales, and the eight Haar subbands."""
    specs = [FilterSpec(k) for k in _POINTWISE] + [FilterSpec("gradient")]
    specs += [FilterSpec("log_sigma", sigma_mm=s) for s in LOG_SIGMAS_MM]
    specs += [FilterSpec("wavelet", subband=b) for b in WAVELET_SUBBANDS]
    return tuple(specs)


# ---------------------------------------------------------------------------
# Resampling


def _resample_array(arr, spacing, target_spacing, order: int) -> np.ndarray:
    new_dims = tuple(
        max(1, int(round(d * s / t)))
        for d, s, t in zip(arr.shape, spacing, target_spacing)
    )
    # output voxel j sits at physical x = j * t; in input index units x / s
    coords = np.meshgrid(
        *(
            np.arange(nd, dtype=np.float64) * t / s
            for nd, s, t in zip(new_dims, spacing, target_spacing)
        ),
        indexing="ij",
    )
    return ndimage.map_coordinates(
        arr, np.stack(coords), order=order, mode="nearest", output=np.float64
    )


def resample(v: Volume3D, target_spacing, method: str = "trilinear") -> Volume3D:
    """Resample a volume onto a grid with the given spacing.

    Output dims are ``round(dim * old_spacing / new_spacing)`` (at least
    1) per axis; the origin is preserved. ``trilinear`` interpolates
    linearly (used for images and dose maps), ``nearest`` copies the
    closest voxel (used for masks). Positions beyond the input extent
    clamp to the edge value.
    """
    target = _as_triple(target_spacing, "target_spacing")
    if min(target) <= 0:
        raise ValueError(f"target spacing must be positive, got {target}")
    if method not in ("trilinear", "nearest"):
        raise ValueError(f"method must be 'trilinear' or 'nearest', got {method!r}")
    order = 1 if method == "trilinear" else 0
    out = _resample_array(v.values, v.spacing, target, order)
    return Volume3D(out, target, v.origin)


def resample_mask(m: Mask3D, target_spacing) -> Mask3D:
    """Nearest-neighbor resampling of a boolean mask."""
    target = _as_triple(target_spacing, "target_spacing")
    if min(target) <= 0:
        raise ValueError(f"target spacing must be positive, got {target}")
    out = _resample_array(m.values.astype(np.float64), m.spacing, target, order=0)
    return Mask3D(out > 0.5, target, m.origin)


# ---------------------------------------------------------------------------
# Filters

_SQRT2 = math.sqrt(2.0)


def haar_decompose(arr: np.ndarray) -> dict[str, np.ndarray]:
    """One level of the separable orthonormal 3D Haar transform.

    The input is cropped to even dims (last slice dropped along odd
    axes). Returns the eight half-size subband coefficient arrays keyed
    by label; character position maps to axis (x, y, z) and L/H selects
    the low/high-pass branch. The transform is orthonormal: total sum of
    squares over all subbands equals that of the cropped input.
    """
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 3 or min(a.shape) < 2:
        raise ValueError(f"haar transform needs 3D input with all dims >= 2, got {a.shape}")
    even = tuple((d // 2) * 2 for d in a.shape)
    a = a[: even[0], : even[1], : even[2]]

    def split(x, axis):
        lo_idx = [slice(None)] * 3
        hi_idx = [slice(None)] * 3
        lo_idx[axis] = slice(0, None, 2)
        hi_idx[axis] = slice(1, None, 2)
        e, o = x[tuple(lo_idx)], x[tuple(hi_idx)]
        return (e + o) / _SQRT2, (e - o) / _SQRT2

    bands = {"": a}
    for axis in range(3):
        nxt = {}
        for key, x in bands.items():
            lo, hi = split(x, axis)
            nxt[key + "L"] = lo
            nxt[key + "H"] = hi
        bands = nxt
    return bands


def _wavelet_subband(arr, subband, dims) -> np.ndarray:
    coeffs = haar_decompose(arr)[subband]
    up = coeffs
    for axis in range(3):
        up = np.repeat(up, 2, axis=axis)
    pad = [(0, d - u) for d, u in zip(dims, up.shape)]
    return np.pad(up, pad, mode="constant")


def _gradient_magnitude(arr, spacing) -> np.ndarray:
    gx, gy, gz = np.gradient(arr, *spacing)
    return np.sqrt(gx * gx + gy * gy + gz * gz)


def _laplacian_of_gaussian(arr, spacing, sigma_mm) -> np.ndarray:
    sigma_vox = [sigma_mm / s for s in spacing]
    smooth = ndimage.gaussian_filter(arr, sigma=sigma_vox, mode="nearest", truncate=4.0)
    p = np.pad(smooth, 1, mode="edge")
    core = p[1:-1, 1:-1, 1:-1]
    sx, sy, sz = spacing
    return (
        (p[2:, 1:-1, 1:-1] - 2 * core + p[:-2, 1:-1, 1:-1]) / sx**2
        + (p[1:-1, 2:, 1:-1] - 2 * core + p[1:-1, :-2, 1:-1]) / sy**2
        + (p[1:-1, 1:-1, 2:] - 2 * core + p[1:-1, 1:-1, :-2]) / sz**2
    )


def apply_filter(v: Volume3D, spec: FilterSpec) -> Volume3D:
    """Apply a derived-image filter, preserving grid geometry.

    Pointwise kinds use total, sign-preserving transforms. ``square``
    and ``squareroot`` are rescaled so the largest absolute output
    equals the largest absolute input; ``logarithm`` is
    ``sign(x)*log(|x|+1)`` and ``exponential`` is ``exp(|x|)`` (exponent
    clamped to keep outputs finite). ``gradient`` is the
    central-difference gradient magnitude in physical units;
    ``log_sigma`` is a Gaussian smooth (edge-replicated, truncated at 4
    sigma) followed by a discrete 3D Laplacian; ``wavelet`` returns the
    named Haar subband upsampled back to the input grid by
    nearest-neighbor repetition (zero-padded along odd axes).
    """
    arr = v.values
    kind = spec.kind
    if kind in ("wavelet", "gradient") and min(v.dims) < 2:
        raise ValueError(f"{kind} filter needs all dims >= 2, got {v.dims}")

    if kind == "original":
        out = arr
    elif kind == "square":
        m = np.abs(arr).max()
        out = arr * arr / m if m > 0 else np.zeros_like(arr)
    elif kind == "squareroot":
        m = np.abs(arr).max()
        out = math.sqrt(m) * np.sqrt(np.abs(arr)) * np.sign(arr) if m > 0 else np.zeros_like(arr)
    elif kind == "logarithm":
        out = np.log(np.abs(arr) + 1.0) * np.sign(arr)
    elif kind == "exponential":
        out = np.exp(np.minimum(np.abs(arr), _EXP_CLAMP))
    elif kind == "gradient":
        out = _gradient_magnitude(arr, v.spacing)
    elif kind == "log_sigma":
        out = _laplacian_of_gaussian(arr, v.spacing, spec.sigma_mm)
    elif kind == "wavelet":
        out = _wavelet_subband(arr, spec.subband, v.dims)
    else:  # pragma: no cover - guarded by FilterSpec validation
        raise ValueError(f"unknown filter kind {kind!r}")
    return Volume3D(out, v.spacing, v.origin)


# ---------------------------------------------------------------------------
# VOL1 on-disk format: JSON header + raw little-endian binary, x-fastest.


def _write_vol1(path: Path, arr: np.ndarray, spacing, origin, dtype: str):
    path = Path(path)
    data_name = path.stem + ".raw"
    header = {
        "dims": list(arr.shape),
        "spacing": [float(s) for s in spacing],
        "origin": [float(o) for o in origin],
        "dtype": dtype,
        "data": data_name,
    }
    np_dtype = "<f4" if dtype == "f32" else "u1"
    raw = np.ascontiguousarray(arr.ravel(order="F")).astype(np_dtype)
    path.parent.mkdir(parents=True, exist_ok=True)
    (path.parent / data_name).write_bytes(raw.tobytes())
    path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")


def _read_vol1(path: Path):
    path = Path(path)
    try:
        header = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"unreadable VOL1 header {path}: {exc}") from exc
    for key in ("dims", "spacing", "origin", "dtype", "data"):
        if key not in header:
            raise ValueError(f"VOL1 header {path} missing field {key!r}")
    dims = tuple(int(d) for d in header["dims"])
    dtype = header["dtype"]
    if dtype not in ("f32", "u8"):
        raise ValueError(f"VOL1 header {path} has unsupported dtype {dtype!r}")
    data_path = path.parent / header["data"]
    np_dtype = "<f4" if dtype == "f32" else "u1"
    raw = np.frombuffer(data_path.read_bytes(), dtype=np_dtype)
    expected = dims[0] * dims[1] * dims[2]
    if raw.size != expected:
        raise ValueError(
            f"VOL1 data {data_path} has {raw.size} values, header says {expected}"
        )
    arr = raw.astype(np.float64).reshape(dims, order="F")
    return arr, tuple(header["spacing"]), tuple(header["origin"]), dtype


def save_volume(v: Volume3D, path) -> None:
    """Write a volume as a VOL1 header/raw pair (32-bit floats on disk)."""
    _write_vol1(Path(path), v.values, v.spacing, v.origin, "f32")


def load_volume(path) -> Volume3D:
    arr, spacing, origin, dtype = _read_vol1(Path(path))
    if dtype != "f32":
        raise ValueError(f"{path}: expected dtype f32 for a volume, got {dtype}")
    return Volume3D(arr, spacing, origin)


def save_mask(m: Mask3D, path) -> None:
    """Write a mask as a VOL1 header/raw pair (uint8 {0,1} on disk)."""
    _write_vol1(Path(path), m.values.astype(np.uint8), m.spacing, m.origin, "u8")


def load_mask(path) -> Mask3D:
    arr, spacing, origin, dtype = _read_vol1(Path(path))
    if dtype != "u8":
        raise ValueError(f"{path}: expected dtype u8 for a mask, got {dtype}")
    return Mask3D(arr > 0.5, spacing, origin)
