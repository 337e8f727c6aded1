"""Synthetic cohorts with known ground truth.

Feature mode draws correlated Gaussian feature blocks, computes delta
blocks by the same relative-change rule as real extraction, plants a
sparse linear signal on columns spread across blocks, and maps the
score affinely into a plausible relative-GTV range (0, 1.5]. The affine
map keeps the label an exact linear function of the planted columns, so
noiseless cohorts are perfectly recoverable by a linear model.

Volume mode writes small VOL1 volumes containing ellipsoidal lesions
whose intensity/dose parameters encode the signal, plus a cohort
manifest, to exercise the extraction path end to end.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .features import BLOCK_TAGS, FeatureMatrix, FeatureName, delta_matrix
from .volume import Mask3D, Volume3D, save_mask, save_volume

__all__ = ["SyntheticSpec", "SyntheticFeatureCohort", "generate_feature_cohort", "generate_volume_cohort"]

_LABEL_CENTER = 0.45
_LABEL_LO = 0.02
_LABEL_HI = 1.5


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int = 69
    n_features_per_block: int = 50
    n_informative: int = 5
    noise_sd: float = 0.0
    feature_correlation: float = 0.3
    volume_mode: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError(f"n_samples must be >= 2, got {self.n_samples}")
        if self.n_features_per_block < 1:
            raise ValueError("n_features_per_block must be >= 1")
        if not 0 <= self.n_informative <= 6 * self.n_features_per_block:
            raise ValueError(
                f"n_informative must lie in 0..{6 * self.n_features_per_block}, "
                f"got {self.n_informative}"
            )
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if not 0 <= self.feature_correlation < 1:
            raise ValueError("feature_correlation must lie in [0, 1)")


@dataclass(frozen=True)
class SyntheticFeatureCohort:
    blocks: dict
    labels: np.ndarray
    sample_ids: tuple[str, ...]
    patient_ids: tuple[str, ...]
    truth: dict


def _block_names(prefix: str, k: int) -> tuple[FeatureName, ...]:
    return tuple(FeatureName("synth", "synth", f"{prefix}{i:04d}") for i in range(k))


def _correlated_block(rng, n, k, rho, offset):
    shared = rng.standard_normal((n, 1))
    independent = rng.standard_normal((n, k))
    return offset + math.sqrt(rho) * shared + math.sqrt(1.0 - rho) * independent


def _scale_labels(score: np.ndarray):
    """Affine map of the raw score into (0, 1.5] centered at 0.45."""
    center = score.mean()
    spread_hi = score.max() - center
    spread_lo = center - score.min()
    if spread_hi <= 0 and spread_lo <= 0:
        return np.full_like(score, _LABEL_CENTER), 0.0, _LABEL_CENTER
    scale = min(
        (_LABEL_HI - _LABEL_CENTER) / max(spread_hi, 1e-12),
        (_LABEL_CENTER - _LABEL_LO) / max(spread_lo, 1e-12),
    )
    return _LABEL_CENTER + scale * (score - center), scale, center


def generate_feature_cohort(spec: SyntheticSpec) -> SyntheticFeatureCohort:
    """Six tagged feature blocks plus labels and the planted truth."""
    rng = np.random.default_rng(spec.seed)
    n, k, rho = spec.n_samples, spec.n_features_per_block, spec.feature_correlation

    r_init = _correlated_block(rng, n, k, rho, offset=5.0)
    r_fresh = _correlated_block(rng, n, k, rho, offset=5.0)
    r_intra = 5.0 + 0.6 * (r_init - 5.0) + 0.4 * (r_fresh - 5.0)
    d_init = _correlated_block(rng, n, k, rho, offset=10.0)
    d_fresh = _correlated_block(rng, n, k, rho, offset=10.0)
    d_intra = 10.0 + 0.6 * (d_init - 10.0) + 0.4 * (d_fresh - 10.0)

    sample_ids = tuple(f"S{i:03d}" for i in range(n))
    r_names = _block_names("r", k)
    d_names = _block_names("d", k)
    blocks = {
        "R_init": FeatureMatrix(sample_ids, tuple(nm.tagged("R_init") for nm in r_names), r_init),
        "R_intra": FeatureMatrix(sample_ids, tuple(nm.tagged("R_intra") for nm in r_names), r_intra),
        "D_init": FeatureMatrix(sample_ids, tuple(nm.tagged("D_init") for nm in d_names), d_init),
        "D_intra": FeatureMatrix(sample_ids, tuple(nm.tagged("D_intra") for nm in d_names), d_intra),
    }
    blocks["R_delta"] = delta_matrix(blocks["R_init"], blocks["R_intra"], "R_delta")
    blocks["D_delta"] = delta_matrix(blocks["D_init"], blocks["D_intra"], "D_delta")
    blocks = {tag: blocks[tag] for tag in BLOCK_TAGS}

    # plant the signal on columns spread across blocks, round-robin; each
    # placement takes a fresh base column per omics family so planted
    # features are not time-point copies of one another
    placements = []
    next_col = {"R": 0, "D": 0}
    for i in range(spec.n_informative):
        tag = BLOCK_TAGS[i % len(BLOCK_TAGS)]
        family = tag[0]
        col = next_col[family]
        next_col[family] += 1
        if col >= k:
            raise ValueError(
                f"n_informative={spec.n_informative} needs more than "
                f"{k} distinct columns in the {family} blocks"
            )
        placements.append((tag, col))
    betas = rng.uniform(0.75, 1.5, size=spec.n_informative) * rng.choice(
        [-1.0, 1.0], size=spec.n_informative
    )

    score = np.zeros(n)
    truth_terms = []
    for (tag, col), beta in zip(placements, betas):
        column = blocks[tag].values[:, col]
        sd = column.std()
        z = (column - column.mean()) / (sd if sd > 0 else 1.0)
        score += beta * z
        truth_terms.append(
            {"name": blocks[tag].names[col].label, "tag": tag, "column": col, "beta": float(beta)}
        )
    if spec.noise_sd > 0:
        score = score + spec.noise_sd * rng.standard_normal(n)
    labels, scale, center = _scale_labels(score)

    truth = {
        "informative": truth_terms,
        "label_scale": scale,
        "label_center_score": float(center),
        "label_center": _LABEL_CENTER,
        "noise_sd": spec.noise_sd,
        "seed": spec.seed,
    }
    # two lesions per synthetic patient, mirroring multi-lesion cohorts
    patient_ids = tuple(f"P{i // 2:03d}" for i in range(n))
    return SyntheticFeatureCohort(blocks, labels, sample_ids, patient_ids, truth)


# ---------------------------------------------------------------------------
# Volume mode


def _smooth_field(rng, shape, sigma=1.2):
    return ndimage.gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode="nearest")


def _ellipsoid_mask(shape, spacing, center_mm, semi_axes_mm):
    grids = np.meshgrid(
        *(np.arange(d) * s for d, s in zip(shape, spacing)), indexing="ij"
    )
    q = sum(((g - c) / a) ** 2 for g, c, a in zip(grids, center_mm, semi_axes_mm))
    return q <= 1.0


def generate_volume_cohort(spec: SyntheticSpec, out_dir) -> Path:
    """Write VOL1 volumes, a cohort manifest, and the planted truth.

    Each lesion is an ellipsoid in a 16^3 grid with anisotropic spacing
    (so extraction has to resample). The label is a linear function of
    three latent parameters: the init-to-intra intensity drop, the dose
    peak, and the lesion radius.
    """
    out_dir = Path(out_dir)
    lesion_dir = out_dir / "lesions"
    lesion_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    shape = (16, 16, 16)
    spacing = (1.25, 1.0, 0.8)
    center_mm = tuple((d - 1) * s / 2 for d, s in zip(shape, spacing))

    lesions = []
    scores = []
    latents = []
    for i in range(spec.n_samples):
        radius = float(rng.uniform(3.0, 5.0))
        axes_scale = rng.uniform(0.75, 1.0, size=3)
        drop = float(rng.uniform(0.0, 0.5))
        dose_peak = float(rng.uniform(15.0, 25.0))
        texture = float(rng.uniform(0.5, 2.0))

        mask_init_arr = _ellipsoid_mask(shape, spacing, center_mm, radius * axes_scale)
        intra_radius = radius * float(rng.uniform(0.85, 1.0))
        mask_intra_arr = _ellipsoid_mask(shape, spacing, center_mm, intra_radius * axes_scale)

        img_init = 10.0 + texture * _smooth_field(rng, shape) + 2.0 * mask_init_arr
        img_intra = img_init * (1.0 - drop) + 0.3 * _smooth_field(rng, shape)
        grids = np.meshgrid(
            *(np.arange(d) * s for d, s in zip(shape, spacing)), indexing="ij"
        )
        r2 = sum((g - c) ** 2 for g, c in zip(grids, center_mm))
        dose_init = dose_peak * np.exp(-r2 / (2.0 * (radius * 1.5) ** 2))
        dose_intra = dose_init * float(rng.uniform(0.9, 1.1))

        lesion_id = f"L{i:03d}"
        paths = {}
        for key, vol in (
            ("image_init", img_init),
            ("image_intra", img_intra),
            ("dose_init", dose_init),
            ("dose_intra", dose_intra),
        ):
            p = lesion_dir / f"{lesion_id}_{key}.json"
            save_volume(Volume3D(vol, spacing), p)
            paths[key] = str(p.relative_to(out_dir))
        for key, arr in (("mask_init", mask_init_arr), ("mask_intra", mask_intra_arr)):
            p = lesion_dir / f"{lesion_id}_{key}.json"
            save_mask(Mask3D(arr, spacing), p)
            paths[key] = str(p.relative_to(out_dir))

        voxel_mm3 = spacing[0] * spacing[1] * spacing[2]
        gtv_init = float(mask_init_arr.sum()) * voxel_mm3
        scores.append(-1.2 * drop - 0.05 * dose_peak + 0.1 * radius)
        latents.append({"drop": drop, "dose_peak": dose_peak, "radius": radius})
        lesions.append(
            {
                "lesion_id": lesion_id,
                "patient_id": f"P{i // 2:03d}",
                **paths,
                "gtv_init_mm3": gtv_init,
            }
        )

    labels, scale, center = _scale_labels(np.asarray(scores))
    for entry, label in zip(lesions, labels):
        entry["gtv_followup_mm3"] = float(label * entry["gtv_init_mm3"])

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps({"lesions": lesions}, indent=2) + "\n", encoding="utf-8"
    )
    truth = {
        "latents": latents,
        "label_scale": scale,
        "label_center_score": float(center),
        "score_coefficients": {"drop": -1.2, "dose_peak": -0.05, "radius": 0.1},
        "seed": spec.seed,
    }
    (out_dir / "truth.json").write_text(json.dumps(truth, indent=2) + "\n", encoding="utf-8")
    return manifest_path
