"""Feature extraction inside a mask: first-order statistics, shape,
gray-level texture matrices, relative-change (delta) features, and
assembly of per-scenario feature matrices.

Gray levels are discretized to a fixed bin count over the masked range.
Texture matrices follow the standard IBSI-style definitions: GLCM and
GLRLM aggregate the 13 unique 3D directions, GLSZM/GLDM/NGTDM use
26-connectivity.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np
from numba import njit
from scipy import ndimage

from .volume import (
    FilterSpec,
    Mask3D,
    Volume3D,
    apply_filter,
    default_filters,
    resample,
    resample_mask,
)

__all__ = [
    "FAMILIES",
    "BLOCK_TAGS",
    "FeatureName",
    "FeatureVector",
    "LesionSample",
    "FeatureMatrix",
    "Scenario",
    "ExtractionConfig",
    "discretize",
    "first_order",
    "texture_matrix",
    "texture_features",
    "shape_features",
    "extract_feature_vector",
    "extract_blocks",
    "delta_features",
    "delta_matrix",
    "assemble_scenario",
    "combine_blocks",
    "catalogue",
]

FAMILIES = ("firstorder", "shape", "glcm", "glrlm", "glszm", "gldm", "ngtdm")
BLOCK_TAGS = ("R_init", "R_intra", "R_delta", "D_init", "D_intra", "D_delta")

# the 13 unique 3D directions (one per opposite pair of the 26 neighbors)
DIRECTIONS_13 = (
    (0, 0, 1), (0, 1, -1), (0, 1, 0), (0, 1, 1),
    (1, -1, -1), (1, -1, 0), (1, -1, 1),
    (1, 0, -1), (1, 0, 0), (1, 0, 1),
    (1, 1, -1), (1, 1, 0), (1, 1, 1),
)
_OFFSETS_26 = tuple(d for d in DIRECTIONS_13) + tuple(
    (-a, -b, -c) for a, b, c in DIRECTIONS_13
)

FIRST_ORDER_FEATURES = (
    "Mean", "Median", "Minimum", "Maximum", "10Percentile", "90Percentile",
    "RootMeanSquared", "Skewness", "Kurtosis", "Energy", "Entropy",
)
SHAPE_FEATURES = ("Elongation",)
GLCM_FEATURES = (
    "Autocorrelation", "Correlation", "ClusterProminence", "ClusterShade",
    "DifferenceEntropy", "Imc2",
)
GLRLM_FEATURES = (
    "ShortRunLowGrayLevelEmphasis", "LongRunEmphasis",
    "LongRunLowGrayLevelEmphasis", "LongRunHighGrayLevelEmphasis",
    "LowGrayLevelRunEmphasis", "HighGrayLevelRunEmphasis",
    "RunLengthNonUniformity",
)
GLSZM_FEATURES = (
    "SmallAreaEmphasis", "LargeAreaEmphasis", "LargeAreaLowGrayLevelEmphasis",
    "SmallAreaLowGrayLevelEmphasis", "SmallAreaHighGrayLevelEmphasis",
    "GrayLevelNonUniformity", "GrayLevelNonUniformityNormalized",
    "LowGrayLevelZoneEmphasis", "SizeZoneNonUniformity", "ZoneVariance",
)
GLDM_FEATURES = (
    "DependenceEntropy", "DependenceVariance", "DependenceNonUniformity",
    "DependenceNonUniformityNormalized", "LargeDependenceHighGrayLevelEmphasis",
    "LargeDependenceLowGrayLevelEmphasis",
)
NGTDM_FEATURES = ("Complexity", "Strength")

_FAMILY_FEATURES = {
    "firstorder": FIRST_ORDER_FEATURES,
    "shape": SHAPE_FEATURES,
    "glcm": GLCM_FEATURES,
    "glrlm": GLRLM_FEATURES,
    "glszm": GLSZM_FEATURES,
    "gldm": GLDM_FEATURES,
    "ngtdm": NGTDM_FEATURES,
}


@dataclass(frozen=True)
class FeatureName:
    """Identifies one feature: filter label, family, feature id, and an
    optional scenario tag (set once the feature joins a block matrix)."""

    filter: str
    family: str
    feature: str
    tag: str | None = None

    @property
    def label(self) -> str:
        base = f"{self.filter}:{self.family}:{self.feature}"
        return f"{self.tag}:{base}" if self.tag else base

    def tagged(self, tag: str) -> "FeatureName":
        if tag not in BLOCK_TAGS:
            raise ValueError(f"unknown block tag {tag!r}")
        return replace(self, tag=tag)

    def untagged(self) -> "FeatureName":
        return replace(self, tag=None)

    @classmethod
    def parse(cls, label: str) -> "FeatureName":
        parts = label.split(":")
        if len(parts) == 3:
            return cls(*parts)
        if len(parts) == 4:
            return cls(parts[1], parts[2], parts[3], tag=parts[0])
        raise ValueError(f"cannot parse feature label {label!r}")


@dataclass(frozen=True)
class FeatureVector:
    names: tuple[FeatureName, ...]
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        names = tuple(self.names)
        if len(names) != vals.size:
            raise ValueError(f"{len(names)} names but {vals.size} values")
        if not np.all(np.isfinite(vals)):
            bad = [names[i].label for i in np.flatnonzero(~np.isfinite(vals))[:3]]
            raise ValueError(f"non-finite feature values, e.g. {bad}")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class LesionSample:
    """One lesion's volumes at both time points plus the outcome label,
    the follow-up GTV relative to the pre-treatment GTV."""

    lesion_id: str
    patient_id: str
    image_init: Volume3D
    image_intra: Volume3D
    dose_init: Volume3D
    dose_intra: Volume3D
    mask_init: Mask3D
    mask_intra: Mask3D
    gtv_init_mm3: float
    gtv_followup_mm3: float

    def __post_init__(self):
        if not self.gtv_init_mm3 > 0:
            raise ValueError(f"lesion {self.lesion_id}: gtv_init_mm3 must be > 0")
        if not self.gtv_followup_mm3 > 0:
            raise ValueError(f"lesion {self.lesion_id}: gtv_followup_mm3 must be > 0")

    def label(self) -> float:
        return self.gtv_followup_mm3 / self.gtv_init_mm3


class Scenario(Enum):
    """The nine feature-set combinations: six single blocks, the two
    per-omics triples, and the full six-block set."""

    R_INIT = ("R_init",)
    R_INTRA = ("R_intra",)
    R_DELTA = ("R_delta",)
    D_INIT = ("D_init",)
    D_INTRA = ("D_intra",)
    D_DELTA = ("D_delta",)
    R_COMBINED = ("R_init", "R_intra", "R_delta")
    D_COMBINED = ("D_init", "D_intra", "D_delta")
    ALL = ("R_init", "R_intra", "R_delta", "D_init", "D_intra", "D_delta")

    @property
    def blocks(self) -> tuple[str, ...]:
        return self.value

    @property
    def key(self) -> str:
        return "+".join(self.value)

    @classmethod
    def parse(cls, text: str) -> "Scenario":
        t = text.strip()
        for member in cls:
            if t == member.key or t.upper() == member.name:
                return member
        raise ValueError(
            f"unknown scenario {text!r}; expected one of "
            f"{[m.key for m in cls]} or member names {[m.name for m in cls]}"
        )


@dataclass(frozen=True)
class ExtractionConfig:
    n_bins: int = 32
    filters: tuple[FilterSpec, ...] = default_filters()
    families: tuple[str, ...] = FAMILIES

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValueError(f"n_bins must be >= 2, got {self.n_bins}")
        unknown = [f for f in self.families if f not in FAMILIES]
        if unknown:
            raise ValueError(f"unknown feature families {unknown}")


def catalogue(config: ExtractionConfig) -> tuple[FeatureName, ...]:
    """Deterministic (filter, family, feature) name order for one volume."""
    names = []
    for spec in config.filters:
        for family in config.families:
            if family == "shape" and spec.kind != "original":
                continue
            for feat in _FAMILY_FEATURES[family]:
                names.append(FeatureName(spec.label, family, feat))
    return tuple(names)


# ---------------------------------------------------------------------------
# Discretization and first-order statistics


def discretize(v: Volume3D, m: Mask3D, n_bins: int) -> np.ndarray:
    """Integer labels 1..n_bins inside the mask (0 outside).

    ``label = 1 + floor(n_bins * (x - min) / (max - min))`` clamped to
    ``[1, n_bins]``, with min/max over masked voxels; a constant region
    maps entirely to bin 1.
    """
    if n_bins < 2:
        raise ValueError(f"n_bins must be >= 2, got {n_bins}")
    if not m.same_grid(v):
        raise ValueError("mask grid does not match volume grid")
    inside = m.values
    masked = v.values[inside]
    lo, hi = masked.min(), masked.max()
    labels = np.zeros(v.dims, dtype=np.int64)
    if hi <= lo:
        labels[inside] = 1
    else:
        b = 1 + np.floor(n_bins * (masked - lo) / (hi - lo))
        labels[inside] = np.clip(b, 1, n_bins).astype(np.int64)
    return labels


def _skew_kurtosis(deviations: np.ndarray) -> tuple[float, float]:
    # scale-invariant evaluation keeps intermediates finite for huge inputs
    scale = np.abs(deviations).max()
    if scale <= 0:
        return 0.0, 0.0
    d = deviations / scale
    m2 = float((d * d).mean())
    if m2 <= 0:
        return 0.0, 0.0
    m3 = float((d * d * d).mean())
    m4 = float((d * d * d * d).mean())
    return m3 / m2**1.5, m4 / (m2 * m2)


def first_order(v: Volume3D, m: Mask3D, n_bins: int = 32) -> FeatureVector:
    """First-order statistics of masked intensities.

    Skewness and Kurtosis use population moments (Kurtosis is
    uncorrected, so a normal distribution gives 3); both are defined as
    0 on zero-variance regions. Entropy is computed over the
    fixed-bin-count histogram.
    """
    values = _first_order_values(v.values[m.values], n_bins)
    names = tuple(FeatureName("original", "firstorder", f) for f in FIRST_ORDER_FEATURES)
    return FeatureVector(names, [values[f] for f in FIRST_ORDER_FEATURES])


def _first_order_values(x: np.ndarray, n_bins: int) -> dict[str, float]:
    n = x.size
    mean = float(x.mean())
    skew, kurt = _skew_kurtosis(x - mean)
    energy = float((x * x).sum())
    lo, hi = float(x.min()), float(x.max())
    if hi > lo:
        bins = np.clip(1 + np.floor(n_bins * (x - lo) / (hi - lo)), 1, n_bins)
    else:
        bins = np.ones(n)
    p = np.bincount(bins.astype(np.int64), minlength=n_bins + 1)[1:] / n
    p = p[p > 0]
    return {
        "Mean": mean,
        "Median": float(np.median(x)),
        "Minimum": lo,
        "Maximum": hi,
        "10Percentile": float(np.percentile(x, 10)),
        "90Percentile": float(np.percentile(x, 90)),
        "RootMeanSquared": math.sqrt(energy / n),
        "Skewness": skew,
        "Kurtosis": kurt,
        "Energy": energy,
        "Entropy": float(-(p * np.log2(p)).sum()),
    }


def shape_features(m: Mask3D) -> dict[str, float]:
    """Shape descriptors from the physical coordinates of masked voxels."""
    coords = np.argwhere(m.values).astype(np.float64) * np.asarray(m.spacing)
    centered = coords - coords.mean(axis=0)
    cov = centered.T @ centered / len(coords)
    eig = np.clip(np.linalg.eigvalsh(cov), 0.0, None)  # ascending
    elongation = math.sqrt(eig[1] / eig[2]) if eig[2] > 0 else 1.0
    return {"Elongation": elongation}


# ---------------------------------------------------------------------------
# Texture matrices


def _offset_slices(shape, offset):
    src, dst = [], []
    for n, d in zip(shape, offset):
        if d >= 0:
            src.append(slice(0, n - d))
            dst.append(slice(d, n))
        else:
            src.append(slice(-d, n))
            dst.append(slice(0, n + d))
    return tuple(src), tuple(dst)


def _glcm(labels, inside, n_levels, directions, distance):
    count = np.zeros((n_levels, n_levels), dtype=np.float64)
    for direction in directions:
        offset = tuple(distance * d for d in direction)
        src, dst = _offset_slices(labels.shape, offset)
        a, b = labels[src], labels[dst]
        valid = inside[src] & inside[dst]
        av, bv = a[valid] - 1, b[valid] - 1
        np.add.at(count, (av, bv), 1.0)
        np.add.at(count, (bv, av), 1.0)
    total = count.sum()
    return count / total if total > 0 else count


@njit(cache=True)
def _glrlm_one_direction(labels, inside, dx, dy, dz, out):  # pragma: no cover
    nx, ny, nz = labels.shape
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if not inside[x, y, z]:
                    continue
                lvl = labels[x, y, z]
                px, py, pz = x - dx, y - dy, z - dz
                if 0 <= px < nx and 0 <= py < ny and 0 <= pz < nz:
                    if inside[px, py, pz] and labels[px, py, pz] == lvl:
                        continue  # not a run start
                length = 1
                cx, cy, cz = x + dx, y + dy, z + dz
                while (
                    0 <= cx < nx and 0 <= cy < ny and 0 <= cz < nz
                    and inside[cx, cy, cz] and labels[cx, cy, cz] == lvl
                ):
                    length += 1
                    cx += dx
                    cy += dy
                    cz += dz
                out[lvl - 1, length - 1] += 1.0


def _glrlm(labels, inside, n_levels, directions):
    out = np.zeros((n_levels, max(labels.shape)), dtype=np.float64)
    lab = np.ascontiguousarray(labels)
    msk = np.ascontiguousarray(inside)
    for dx, dy, dz in directions:
        _glrlm_one_direction(lab, msk, dx, dy, dz, out)
    return out


def _glszm(labels, inside, n_levels):
    structure = np.ones((3, 3, 3), dtype=int)
    zones = []
    max_size = 1
    for lvl in range(1, n_levels + 1):
        comp = (labels == lvl) & inside
        if not comp.any():
            continue
        labeled, n_comp = ndimage.label(comp, structure=structure)
        sizes = np.bincount(labeled.ravel())[1:]
        for s in sizes:
            zones.append((lvl, int(s)))
            max_size = max(max_size, int(s))
    out = np.zeros((n_levels, max_size), dtype=np.float64)
    for lvl, s in zones:
        out[lvl - 1, s - 1] += 1.0
    return out


def _dependence_counts(labels, inside):
    same = np.zeros(labels.shape, dtype=np.int64)
    for offset in _OFFSETS_26:
        src, dst = _offset_slices(labels.shape, offset)
        eq = inside[src] & inside[dst] & (labels[src] == labels[dst])
        same[src] += eq
    return same


def _gldm(labels, inside, n_levels):
    # dependence d = 1 + number of 26-neighbors with the same level (alpha=0)
    same = _dependence_counts(labels, inside)
    out = np.zeros((n_levels, 27), dtype=np.float64)
    np.add.at(out, (labels[inside] - 1, same[inside]), 1.0)
    return out


def _ngtdm(labels, inside, n_levels):
    nb_sum = np.zeros(labels.shape, dtype=np.float64)
    nb_cnt = np.zeros(labels.shape, dtype=np.int64)
    lab_f = labels.astype(np.float64)
    for offset in _OFFSETS_26:
        src, dst = _offset_slices(labels.shape, offset)
        valid = inside[src] & inside[dst]
        nb_sum[src] += lab_f[dst] * valid
        nb_cnt[src] += valid
    has_nb = inside & (nb_cnt > 0)
    lv = labels[has_nb]
    diffs = np.abs(lv - nb_sum[has_nb] / nb_cnt[has_nb])
    out = np.zeros((n_levels, 2), dtype=np.float64)
    np.add.at(out[:, 0], lv - 1, 1.0)
    np.add.at(out[:, 1], lv - 1, diffs)
    return out


def texture_matrix(kind, labels, m, n_levels=None, directions=DIRECTIONS_13, distance=1):
    """Compute one gray-level texture matrix from a discretized volume.

    ``labels`` come from :func:`discretize` (0 outside the mask). GLCM
    returns a symmetric probability matrix aggregated over the given
    directions; GLRLM returns run counts summed over directions; GLSZM
    returns 26-connected zone counts per (level, size); GLDM returns
    dependence counts per (level, 1 + equal-neighbor count); NGTDM
    returns an (n_levels, 2) array of per-level voxel counts and
    ``s_i = sum |i - neighborhood mean|``.
    """
    inside = m.values if isinstance(m, Mask3D) else np.asarray(m, dtype=bool)
    if not inside.any():
        raise ValueError("empty mask")
    labels = np.asarray(labels)
    if labels.shape != inside.shape:
        raise ValueError("labels and mask shapes differ")
    if n_levels is None:
        n_levels = int(labels[inside].max())
    if kind == "glcm":
        return _glcm(labels, inside, n_levels, directions, distance)
    if kind == "glrlm":
        return _glrlm(labels, inside, n_levels, directions)
    if kind == "glszm":
        return _glszm(labels, inside, n_levels)
    if kind == "gldm":
        return _gldm(labels, inside, n_levels)
    if kind == "ngtdm":
        return _ngtdm(labels, inside, n_levels)
    raise ValueError(f"unknown texture matrix kind {kind!r}")


# ---------------------------------------------------------------------------
# Texture features

_LOG2 = np.log(2.0)


def _entropy(p):
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum() / _LOG2)


def _glcm_features(p) -> dict[str, float]:
    total = p.sum()
    if total <= 0:
        return {f: 0.0 for f in GLCM_FEATURES}
    p = p / total
    ng = p.shape[0]
    i = np.arange(1, ng + 1, dtype=np.float64)
    gi, gj = np.meshgrid(i, i, indexing="ij")
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    mux = float((i * px).sum())
    muy = float((i * py).sum())
    sigx = math.sqrt(float(((i - mux) ** 2 * px).sum()))
    sigy = math.sqrt(float(((i - muy) ** 2 * py).sum()))
    autocorr = float((gi * gj * p).sum())
    if sigx * sigy > 0:
        correlation = (autocorr - mux * muy) / (sigx * sigy)
    else:
        correlation = 1.0  # fully homogeneous region
    spread = gi + gj - mux - muy
    p_diff = np.zeros(ng)
    np.add.at(p_diff, np.abs(gi - gj).astype(np.int64).ravel(), p.ravel())
    hxy = _entropy(p)
    hxy2 = _entropy(np.outer(px, py))
    imc2 = math.sqrt(max(0.0, 1.0 - math.exp(-2.0 * (hxy2 - hxy))))
    return {
        "Autocorrelation": autocorr,
        "Correlation": correlation,
        "ClusterProminence": float((spread**4 * p).sum()),
        "ClusterShade": float((spread**3 * p).sum()),
        "DifferenceEntropy": _entropy(p_diff),
        "Imc2": imc2,
    }


def _glrlm_features(counts) -> dict[str, float]:
    n_r = counts.sum()
    if n_r <= 0:
        return {f: 0.0 for f in GLRLM_FEATURES}
    p = counts / n_r
    ng, nl = counts.shape
    gi, gj = np.meshgrid(
        np.arange(1, ng + 1, dtype=np.float64),
        np.arange(1, nl + 1, dtype=np.float64),
        indexing="ij",
    )
    return {
        "ShortRunLowGrayLevelEmphasis": float((p / (gi**2 * gj**2)).sum()),
        "LongRunEmphasis": float((p * gj**2).sum()),
        "LongRunLowGrayLevelEmphasis": float((p * gj**2 / gi**2).sum()),
        "LongRunHighGrayLevelEmphasis": float((p * gj**2 * gi**2).sum()),
        "LowGrayLevelRunEmphasis": float((p / gi**2).sum()),
        "HighGrayLevelRunEmphasis": float((p * gi**2).sum()),
        "RunLengthNonUniformity": float((counts.sum(axis=0) ** 2).sum() / n_r),
    }


def _glszm_features(counts) -> dict[str, float]:
    n_z = counts.sum()
    if n_z <= 0:
        return {f: 0.0 for f in GLSZM_FEATURES}
    p = counts / n_z
    ng, ns = counts.shape
    gi, gs = np.meshgrid(
        np.arange(1, ng + 1, dtype=np.float64),
        np.arange(1, ns + 1, dtype=np.float64),
        indexing="ij",
    )
    mu_s = float((p * gs).sum())
    return {
        "SmallAreaEmphasis": float((p / gs**2).sum()),
        "LargeAreaEmphasis": float((p * gs**2).sum()),
        "LargeAreaLowGrayLevelEmphasis": float((p * gs**2 / gi**2).sum()),
        "SmallAreaLowGrayLevelEmphasis": float((p / (gs**2 * gi**2)).sum()),
        "SmallAreaHighGrayLevelEmphasis": float((p * gi**2 / gs**2).sum()),
        "GrayLevelNonUniformity": float((counts.sum(axis=1) ** 2).sum() / n_z),
        "GrayLevelNonUniformityNormalized": float(
            (counts.sum(axis=1) ** 2).sum() / n_z**2
        ),
        "LowGrayLevelZoneEmphasis": float((p / gi**2).sum()),
        "SizeZoneNonUniformity": float((counts.sum(axis=0) ** 2).sum() / n_z),
        "ZoneVariance": float((p * (gs - mu_s) ** 2).sum()),
    }


def _gldm_features(counts) -> dict[str, float]:
    n = counts.sum()
    if n <= 0:
        return {f: 0.0 for f in GLDM_FEATURES}
    p = counts / n
    ng, nd = counts.shape
    gi, gd = np.meshgrid(
        np.arange(1, ng + 1, dtype=np.float64),
        np.arange(1, nd + 1, dtype=np.float64),
        indexing="ij",
    )
    mu_d = float((p * gd).sum())
    return {
        "DependenceEntropy": _entropy(p),
        "DependenceVariance": float((p * (gd - mu_d) ** 2).sum()),
        "DependenceNonUniformity": float((counts.sum(axis=0) ** 2).sum() / n),
        "DependenceNonUniformityNormalized": float(
            (counts.sum(axis=0) ** 2).sum() / n**2
        ),
        "LargeDependenceHighGrayLevelEmphasis": float((p * gd**2 * gi**2).sum()),
        "LargeDependenceLowGrayLevelEmphasis": float((p * gd**2 / gi**2).sum()),
    }


def _ngtdm_features(matrix) -> dict[str, float]:
    n_i, s_i = matrix[:, 0], matrix[:, 1]
    n_v = n_i.sum()
    if n_v <= 0:
        return {f: 0.0 for f in NGTDM_FEATURES}
    p = n_i / n_v
    act = np.flatnonzero(p > 0)
    levels = (act + 1).astype(np.float64)
    pa, sa = p[act], s_i[act]
    li, lj = np.meshgrid(levels, levels, indexing="ij")
    pi, pj = np.meshgrid(pa, pa, indexing="ij")
    si, sj = np.meshgrid(sa, sa, indexing="ij")
    complexity = float(
        (np.abs(li - lj) * (pi * si + pj * sj) / (pi + pj)).sum() / n_v
    )
    s_total = float(sa.sum())
    strength = float(((pi + pj) * (li - lj) ** 2).sum() / s_total) if s_total > 0 else 0.0
    return {"Complexity": complexity, "Strength": strength}


_TEXTURE_FEATURE_FUNCS = {
    "glcm": _glcm_features,
    "glrlm": _glrlm_features,
    "glszm": _glszm_features,
    "gldm": _gldm_features,
    "ngtdm": _ngtdm_features,
}


def texture_features(kind: str, matrix: np.ndarray) -> dict[str, float]:
    """Feature values for one texture-matrix family (entropy terms use
    the 0*log0 = 0 convention; degenerate matrices give limit values)."""
    if kind not in _TEXTURE_FEATURE_FUNCS:
        raise ValueError(f"unknown texture family {kind!r}")
    return _TEXTURE_FEATURE_FUNCS[kind](np.asarray(matrix, dtype=np.float64))


# ---------------------------------------------------------------------------
# Per-volume extraction


def extract_feature_vector(v: Volume3D, m: Mask3D, config: ExtractionConfig) -> FeatureVector:
    """Extract the full configured catalogue from one volume/mask pair.

    Voxels outside the mask are zeroed before filtering, so features
    depend only on masked data. Deterministic: iterates filters then
    families in config order, so the name order always equals
    :func:`catalogue`.
    """
    if not m.same_grid(v):
        raise ValueError("mask grid does not match volume grid")
    base = Volume3D(np.where(m.values, v.values, 0.0), v.spacing, v.origin)
    names: list[FeatureName] = []
    values: list[float] = []
    for spec in config.filters:
        filtered = apply_filter(base, spec)
        masked = filtered.values[m.values]
        labels = None
        for family in config.families:
            if family == "shape":
                if spec.kind != "original":
                    continue
                feats = shape_features(m)
            elif family == "firstorder":
                feats = _first_order_values(masked, config.n_bins)
            else:
                if labels is None:
                    labels = discretize(filtered, m, config.n_bins)
                matrix = texture_matrix(family, labels, m)
                feats = texture_features(family, matrix)
            for feat_id in _FAMILY_FEATURES[family]:
                names.append(FeatureName(spec.label, family, feat_id))
                values.append(feats[feat_id])
    return FeatureVector(tuple(names), values)


# ---------------------------------------------------------------------------
# Delta features (relative change between time points)

_DELTA_FLOOR = 1e-8
_DELTA_CAP = 1e6


def delta_features(f_init: FeatureVector, f_intra: FeatureVector) -> FeatureVector:
    """Relative change ``(init - intra) / init`` per feature.

    When ``|init| < 1e-8`` the ratio is replaced by 0 if the absolute
    change is also below 1e-8, else by a capped sentinel of
    ``sign(init - intra) * 1e6``.
    """
    if f_init.names != f_intra.names:
        raise ValueError("delta_features requires identical name lists")
    return FeatureVector(f_init.names, _delta_values(f_init.values, f_intra.values))


def _delta_values(init: np.ndarray, intra: np.ndarray) -> np.ndarray:
    out = np.zeros_like(init)
    ok = np.abs(init) >= _DELTA_FLOOR
    out[ok] = (init[ok] - intra[ok]) / init[ok]
    rest = ~ok
    diff = init[rest] - intra[rest]
    out[rest] = np.where(np.abs(diff) < _DELTA_FLOOR, 0.0, np.sign(diff) * _DELTA_CAP)
    return out


# ---------------------------------------------------------------------------
# Feature matrices and scenario assembly


@dataclass(frozen=True)
class FeatureMatrix:
    """n_samples x n_features table with tagged, provenance-carrying
    column names."""

    sample_ids: tuple[str, ...]
    names: tuple[FeatureName, ...]
    values: np.ndarray

    def __post_init__(self):
        ids = tuple(str(s) for s in self.sample_ids)
        names = tuple(self.names)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError(f"values must be 2D, got ndim={vals.ndim}")
        if vals.shape != (len(ids), len(names)):
            raise ValueError(
                f"values shape {vals.shape} != ({len(ids)}, {len(names)})"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("feature matrix contains non-finite values")
        labels = [n.label for n in names]
        if len(set(labels)) != len(labels):
            dupes = sorted({l for l in labels if labels.count(l) > 1})[:3]
            raise ValueError(f"duplicate column names, e.g. {dupes}")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sample ids")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", vals)

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def n_features(self) -> int:
        return len(self.names)

    def select_columns(self, indices) -> "FeatureMatrix":
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureMatrix(
            self.sample_ids,
            tuple(self.names[i] for i in idx),
            self.values[:, idx],
        )

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id"] + [n.label for n in self.names])
            for sid, row in zip(self.sample_ids, self.values):
                writer.writerow([sid] + [repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        path = Path(path)
        with path.open("r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "sample_id":
                raise ValueError(f"{path}: first column must be sample_id")
            names = tuple(FeatureName.parse(h) for h in header[1:])
            ids, rows = [], []
            for row in reader:
                ids.append(row[0])
                rows.append([float(x) for x in row[1:]])
        return cls(tuple(ids), names, np.asarray(rows, dtype=np.float64))


def delta_matrix(init: FeatureMatrix, intra: FeatureMatrix, tag: str) -> FeatureMatrix:
    """Columnwise relative change between two block matrices."""
    if init.sample_ids != intra.sample_ids:
        raise ValueError("delta_matrix requires identical sample ids")
    base_i = tuple(n.untagged() for n in init.names)
    base_j = tuple(n.untagged() for n in intra.names)
    if base_i != base_j:
        raise ValueError("delta_matrix requires identical feature lists")
    values = np.column_stack(
        [_delta_values(init.values[:, j], intra.values[:, j]) for j in range(init.n_features)]
    ) if init.n_features else np.zeros((init.n_samples, 0))
    return FeatureMatrix(init.sample_ids, tuple(n.tagged(tag) for n in base_i), values)


def extract_blocks(
    sample: LesionSample,
    config: ExtractionConfig,
    target_spacing=(1.0, 1.0, 1.0),
    tags=BLOCK_TAGS,
) -> dict[str, FeatureVector]:
    """Extract the requested feature blocks for one lesion.

    Images, doses, and masks are first resampled to ``target_spacing``
    (trilinear for scalars, nearest for masks); the grids must agree per
    time point afterwards. Delta blocks are derived from their init and
    intra counterparts.
    """
    need = set(tags)
    if "R_delta" in need:
        need |= {"R_init", "R_intra"}
    if "D_delta" in need:
        need |= {"D_init", "D_intra"}

    masks = {}
    for point, mask in (("init", sample.mask_init), ("intra", sample.mask_intra)):
        masks[point] = resample_mask(mask, target_spacing)

    sources = {
        "R_init": (sample.image_init, "init"),
        "R_intra": (sample.image_intra, "intra"),
        "D_init": (sample.dose_init, "init"),
        "D_intra": (sample.dose_intra, "intra"),
    }
    blocks: dict[str, FeatureVector] = {}
    for tag, (vol, point) in sources.items():
        if tag not in need:
            continue
        resampled = resample(vol, target_spacing, "trilinear")
        mask = masks[point]
        if not mask.same_grid(resampled):
            raise ValueError(
                f"{tag} volume grid {resampled.dims} does not match "
                f"{point} mask grid {mask.dims} after resampling"
            )
        blocks[tag] = extract_feature_vector(resampled, mask, config)
    if "R_delta" in need:
        blocks["R_delta"] = delta_features(blocks["R_init"], blocks["R_intra"])
    if "D_delta" in need:
        blocks["D_delta"] = delta_features(blocks["D_init"], blocks["D_intra"])
    return {tag: blocks[tag] for tag in tags if tag in blocks}


def assemble_scenario(
    cohort: list[LesionSample],
    scenario: Scenario,
    config: ExtractionConfig,
    target_spacing=(1.0, 1.0, 1.0),
) -> tuple[FeatureMatrix, np.ndarray]:
    """Build the scenario feature matrix and label vector for a cohort.

    Columns concatenate the scenario's tagged blocks in block order;
    rows follow cohort order; labels are follow-up/initial GTV ratios.
    """
    if not cohort:
        raise ValueError("cohort is empty")
    rows, ids, labels = [], [], []
    names: tuple[FeatureName, ...] | None = None
    for sample in cohort:
        try:
            blocks = extract_blocks(sample, config, target_spacing, scenario.blocks)
            row = np.concatenate([blocks[t].values for t in scenario.blocks])
            row_names = tuple(
                n.tagged(t) for t in scenario.blocks for n in blocks[t].names
            )
        except Exception as exc:
            raise ValueError(f"lesion {sample.lesion_id}: {exc}") from exc
        if names is None:
            names = row_names
        elif names != row_names:
            raise ValueError(f"lesion {sample.lesion_id}: inconsistent feature names")
        rows.append(row)
        ids.append(sample.lesion_id)
        labels.append(sample.label())
    matrix = FeatureMatrix(tuple(ids), names, np.vstack(rows))
    return matrix, np.asarray(labels, dtype=np.float64)


def combine_blocks(blocks: dict[str, FeatureMatrix], scenario: Scenario) -> FeatureMatrix:
    """Concatenate pre-extracted block matrices for one scenario,
    verifying that sample ids agree across blocks."""
    missing = [t for t in scenario.blocks if t not in blocks]
    if missing:
        raise ValueError(f"missing feature blocks {missing} for scenario {scenario.key}")
    first = blocks[scenario.blocks[0]]
    offenders = [
        t for t in scenario.blocks if blocks[t].sample_ids != first.sample_ids
    ]
    if offenders:
        raise ValueError(
            f"sample ids disagree across blocks: {offenders} differ from "
            f"{scenario.blocks[0]}"
        )
    names = tuple(n for t in scenario.blocks for n in blocks[t].names)
    values = np.hstack([blocks[t].values for t in scenario.blocks])
    return FeatureMatrix(first.sample_ids, names, values)
