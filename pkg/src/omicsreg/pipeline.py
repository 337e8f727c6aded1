"""Configuration, cohort ingestion, and end-to-end orchestration.

The pipeline stages mirror the overall workflow: ``run_extract`` turns a
cohort manifest of VOL1 volumes into per-block feature CSVs plus a
label CSV; ``run_select`` screens and ranks features for one scenario;
``run_evaluate`` sweeps the number of selected features through
repeated-CV SVR models and writes reports; ``run_report`` consolidates
every report in an output tree into one summary table.

All outputs are deterministic for a fixed (config, seed): files are
written atomically (temp + rename), floats use shortest round-trip
formatting, and JSON key order is fixed by construction.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .evaluation import (
    effect_size_table,
    feature_label_correlations,
    format_ci,
    format_mean_sd,
    pairwise_correlation_heatmap,
    sweep_evaluate,
    vif,
)
from .features import (
    BLOCK_TAGS,
    FAMILIES,
    ExtractionConfig,
    FeatureMatrix,
    LesionSample,
    Scenario,
    combine_blocks,
    extract_blocks,
)
from .regression import KERNEL_KINDS, GridSpec
from .selection import (
    CRITERIA,
    FoldPlan,
    correlation_prune,
    select_features,
    variance_filter,
)
from .synthetic import SyntheticSpec, generate_feature_cohort, generate_volume_cohort
from .volume import FilterSpec, default_filters, load_mask, load_volume

__all__ = [
    "PipelineConfig",
    "CohortManifest",
    "LesionEntry",
    "load_manifest",
    "load_lesion",
    "run_extract",
    "load_blocks",
    "load_labels",
    "prepared_scenario_matrix",
    "run_select",
    "run_evaluate",
    "run_synth",
    "run_report",
    "OUTPUT_DIR_ENV",
]

OUTPUT_DIR_ENV = "OMICSREG_OUT"

_ALL_SCENARIOS = tuple(s.key for s in Scenario)
_DEFAULT_FILTER_LABELS = tuple(s.label for s in default_filters())


def _atomic_write_text(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_json(path: Path, blob: dict):
    _atomic_write_text(path, json.dumps(blob, indent=2) + "\n")


def _write_matrix_csv(matrix: FeatureMatrix, path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    matrix.to_csv(tmp)
    os.replace(tmp, path)


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the pipeline, with defaults matching the study
    constants (variance 0.001, correlation 0.95, 20 nonzeros, top 15,
    5 folds, 10 repeats). The seed is mandatory."""

    seed: int
    n_bins: int = 32
    filters: tuple[str, ...] = _DEFAULT_FILTER_LABELS
    families: tuple[str, ...] = FAMILIES
    target_spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    variance_threshold: float = 0.001
    correlation_threshold: float = 0.95
    n_nonzero: int = 20
    n_top: int = 15
    n_folds: int = 5
    n_repeats: int = 10
    criterion: str = "X_cnt"
    kernel: str = "rbf"
    scenarios: tuple[str, ...] = _ALL_SCENARIOS
    grids: dict = field(default_factory=dict)
    rrmse_denominator: str = "sum"
    group_by_patient: bool = False
    output_dir: str | None = None

    def __post_init__(self):
        if self.seed is None or int(self.seed) < 0:
            raise ConfigError("seed must be a nonnegative integer (reproducibility is mandatory)")
        object.__setattr__(self, "seed", int(self.seed))
        if self.n_bins < 2:
            raise ConfigError(f"n_bins must be >= 2, got {self.n_bins}")
        if not 0 <= self.variance_threshold:
            raise ConfigError("variance_threshold must be >= 0")
        if not 0 < self.correlation_threshold <= 1:
            raise ConfigError("correlation_threshold must lie in (0, 1]")
        if self.n_nonzero < 1 or self.n_top < 1 or self.n_top > self.n_nonzero:
            raise ConfigError(
                f"need 1 <= n_top <= n_nonzero, got top={self.n_top}, nonzero={self.n_nonzero}"
            )
        if self.n_folds < 2 or self.n_repeats < 1:
            raise ConfigError("need n_folds >= 2 and n_repeats >= 1")
        if self.criterion not in CRITERIA:
            raise ConfigError(f"criterion must be one of {CRITERIA}, got {self.criterion!r}")
        if self.kernel not in KERNEL_KINDS:
            raise ConfigError(f"kernel must be one of {KERNEL_KINDS}, got {self.kernel!r}")
        if self.rrmse_denominator not in ("sum", "mean"):
            raise ConfigError("rrmse_denominator must be 'sum' or 'mean'")
        try:
            object.__setattr__(self, "filters", tuple(self.filters))
            for label in self.filters:
                FilterSpec.parse(label)
        except ValueError as exc:
            raise ConfigError(f"bad filter list: {exc}") from exc
        unknown = [f for f in self.families if f not in FAMILIES]
        if unknown:
            raise ConfigError(f"unknown feature families {unknown}")
        try:
            object.__setattr__(
                self, "scenarios", tuple(Scenario.parse(s).key for s in self.scenarios)
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        grids = {}
        for kind, spec in dict(self.grids).items():
            if kind not in KERNEL_KINDS:
                raise ConfigError(f"grid for unknown kernel {kind!r}")
            if isinstance(spec, GridSpec):
                grids[kind] = spec
            else:
                try:
                    grids[kind] = GridSpec(
                        C=tuple(spec["C"]),
                        epsilon=tuple(spec["epsilon"]),
                        gamma=tuple(spec["gamma"]) if "gamma" in spec else None,
                        degree=tuple(spec["degree"]) if "degree" in spec else None,
                        coef0=tuple(spec["coef0"]) if "coef0" in spec else None,
                    )
                except (KeyError, TypeError, ValueError) as exc:
                    raise ConfigError(f"bad grid for kernel {kind!r}: {exc}") from exc
        object.__setattr__(self, "grids", grids)

    @classmethod
    def from_json_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            blob = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(blob, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(blob) - known)
        if unknown:
            raise ConfigError(f"config {path} has unknown keys {unknown}")
        if "seed" not in blob:
            raise ConfigError(f"config {path} is missing the mandatory 'seed'")
        kwargs = dict(blob)
        for key in ("filters", "families", "scenarios"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "target_spacing" in kwargs:
            kwargs["target_spacing"] = tuple(kwargs["target_spacing"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"config {path}: {exc}") from exc

    def extraction_config(self) -> ExtractionConfig:
        return ExtractionConfig(
            n_bins=self.n_bins,
            filters=tuple(FilterSpec.parse(label) for label in self.filters),
            families=tuple(self.families),
        )

    def grid_for(self, kind: str) -> GridSpec | None:
        return self.grids.get(kind)

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_bins": self.n_bins,
            "filters": list(self.filters),
            "families": list(self.families),
            "target_spacing": list(self.target_spacing),
            "variance_threshold": self.variance_threshold,
            "correlation_threshold": self.correlation_threshold,
            "n_nonzero": self.n_nonzero,
            "n_top": self.n_top,
            "n_folds": self.n_folds,
            "n_repeats": self.n_repeats,
            "criterion": self.criterion,
            "kernel": self.kernel,
            "scenarios": list(self.scenarios),
            "rrmse_denominator": self.rrmse_denominator,
            "group_by_patient": self.group_by_patient,
            "output_dir": self.output_dir,
        }


# ---------------------------------------------------------------------------
# Cohort manifest


_VOLUME_KEYS = ("image_init", "image_intra", "dose_init", "dose_intra", "mask_init", "mask_intra")


@dataclass(frozen=True)
class LesionEntry:
    lesion_id: str
    patient_id: str
    paths: dict
    gtv_init_mm3: float
    gtv_followup_mm3: float


@dataclass(frozen=True)
class CohortManifest:
    root: Path
    lesions: tuple[LesionEntry, ...]


def load_manifest(path) -> CohortManifest:
    """Load and validate a cohort manifest (unique ids, files exist,
    positive GTVs)."""
    path = Path(path)
    try:
        blob = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    lesions = blob.get("lesions")
    if not isinstance(lesions, list) or not lesions:
        raise DataError(f"manifest {path} must contain a nonempty 'lesions' list")
    root = path.parent
    entries = []
    seen = set()
    for raw in lesions:
        missing = [k for k in ("lesion_id", "patient_id", "gtv_init_mm3", "gtv_followup_mm3", *_VOLUME_KEYS) if k not in raw]
        if missing:
            raise DataError(f"manifest entry {raw.get('lesion_id', '?')} missing {missing}")
        lid = str(raw["lesion_id"])
        if lid in seen:
            raise DataError(f"duplicate lesion_id {lid!r} in manifest")
        seen.add(lid)
        if not float(raw["gtv_init_mm3"]) > 0 or not float(raw["gtv_followup_mm3"]) > 0:
            raise DataError(f"lesion {lid}: GTV values must be positive")
        paths = {}
        for key in _VOLUME_KEYS:
            p = root / raw[key]
            if not p.is_file():
                raise DataError(f"lesion {lid}: missing file {p}")
            paths[key] = p
        entries.append(
            LesionEntry(
                lesion_id=lid,
                patient_id=str(raw["patient_id"]),
                paths=paths,
                gtv_init_mm3=float(raw["gtv_init_mm3"]),
                gtv_followup_mm3=float(raw["gtv_followup_mm3"]),
            )
        )
    return CohortManifest(root=root, lesions=tuple(entries))


def load_lesion(entry: LesionEntry) -> LesionSample:
    try:
        return LesionSample(
            lesion_id=entry.lesion_id,
            patient_id=entry.patient_id,
            image_init=load_volume(entry.paths["image_init"]),
            image_intra=load_volume(entry.paths["image_intra"]),
            dose_init=load_volume(entry.paths["dose_init"]),
            dose_intra=load_volume(entry.paths["dose_intra"]),
            mask_init=load_mask(entry.paths["mask_init"]),
            mask_intra=load_mask(entry.paths["mask_intra"]),
            gtv_init_mm3=entry.gtv_init_mm3,
            gtv_followup_mm3=entry.gtv_followup_mm3,
        )
    except (OSError, ValueError) as exc:
        raise DataError(f"lesion {entry.lesion_id}: {exc}") from exc


# ---------------------------------------------------------------------------
# Stage: extract


def _write_labels_csv(path: Path, sample_ids, labels):
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["sample_id", "relative_gtv"])
    for sid, val in zip(sample_ids, labels):
        writer.writerow([sid, repr(float(val))])
    _atomic_write_text(path, buf.getvalue())


def load_labels(path) -> tuple[tuple[str, ...], np.ndarray]:
    path = Path(path)
    try:
        with path.open("r", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["sample_id", "relative_gtv"]:
                raise DataError(f"{path}: expected header sample_id,relative_gtv")
            ids, vals = [], []
            for row in reader:
                ids.append(row[0])
                vals.append(float(row[1]))
    except OSError as exc:
        raise DataError(f"cannot read labels {path}: {exc}") from exc
    return tuple(ids), np.asarray(vals, dtype=np.float64)


def _write_patients_csv(path: Path, sample_ids, patient_ids):
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["sample_id", "patient_id"])
    for sid, pid in zip(sample_ids, patient_ids):
        writer.writerow([sid, pid])
    _atomic_write_text(path, buf.getvalue())


def load_patients(features_dir, sample_ids) -> tuple[str, ...]:
    """Patient id per sample, aligned to ``sample_ids`` order."""
    path = Path(features_dir) / "patients.csv"
    if not path.is_file():
        raise DataError(
            f"group_by_patient requires {path}, which is missing"
        )
    mapping = {}
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["sample_id", "patient_id"]:
            raise DataError(f"{path}: expected header sample_id,patient_id")
        for row in reader:
            mapping[row[0]] = row[1]
    missing = [sid for sid in sample_ids if sid not in mapping]
    if missing:
        raise DataError(f"{path}: no patient for samples {missing[:5]}")
    return tuple(mapping[sid] for sid in sample_ids)


def run_extract(config: PipelineConfig, manifest_path, out_dir) -> dict:
    """Extract all six feature blocks for every lesion in the manifest.

    Writes one CSV per block tag plus ``labels.csv``; returns the paths.
    """
    out_dir = Path(out_dir)
    manifest = load_manifest(manifest_path)
    extraction = config.extraction_config()

    per_block_rows = {tag: [] for tag in BLOCK_TAGS}
    names = {}
    ids, labels, patients = [], [], []
    for entry in manifest.lesions:
        sample = load_lesion(entry)
        patients.append(entry.patient_id)
        try:
            blocks = extract_blocks(sample, extraction, config.target_spacing, BLOCK_TAGS)
        except ValueError as exc:
            raise DataError(f"lesion {entry.lesion_id}: {exc}") from exc
        for tag in BLOCK_TAGS:
            per_block_rows[tag].append(blocks[tag].values)
            tagged = tuple(nm.tagged(tag) for nm in blocks[tag].names)
            if tag not in names:
                names[tag] = tagged
            elif names[tag] != tagged:
                raise DataError(f"lesion {entry.lesion_id}: inconsistent feature names")
        ids.append(entry.lesion_id)
        labels.append(sample.label())

    written = {}
    for tag in BLOCK_TAGS:
        matrix = FeatureMatrix(tuple(ids), names[tag], np.vstack(per_block_rows[tag]))
        path = out_dir / f"{tag}.csv"
        _write_matrix_csv(matrix, path)
        written[tag] = path
    labels_path = out_dir / "labels.csv"
    _write_labels_csv(labels_path, ids, labels)
    written["labels"] = labels_path
    patients_path = out_dir / "patients.csv"
    _write_patients_csv(patients_path, ids, patients)
    written["patients"] = patients_path
    return written


# ---------------------------------------------------------------------------
# Stage: select / evaluate


def load_blocks(features_dir, tags) -> dict:
    features_dir = Path(features_dir)
    blocks = {}
    for tag in tags:
        path = features_dir / f"{tag}.csv"
        if not path.is_file():
            raise DataError(f"missing feature block CSV {path}")
        try:
            blocks[tag] = FeatureMatrix.from_csv(path)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot load {path}: {exc}") from exc
    return blocks


def prepared_scenario_matrix(config: PipelineConfig, features_dir, scenario: Scenario):
    """Assemble a scenario matrix from block CSVs, check sample ids,
    align labels, then apply the variance filter and correlation prune."""
    blocks = load_blocks(features_dir, scenario.blocks)
    try:
        X = combine_blocks(blocks, scenario)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    ids, y = load_labels(Path(features_dir) / "labels.csv")
    if ids != X.sample_ids:
        offenders = [a for a, b in zip(ids, X.sample_ids) if a != b][:5]
        raise DataError(
            f"label sample ids disagree with feature CSVs (first offenders {offenders})"
        )
    kept_var = variance_filter(X.values, config.variance_threshold)
    X_var = X.select_columns(kept_var)
    kept_corr = correlation_prune(X_var.values, config.correlation_threshold)
    return X_var.select_columns(kept_corr), y


def _slug(scenario: Scenario, criterion: str, kernel: str | None = None) -> str:
    parts = [scenario.name.lower(), criterion.lower()]
    if kernel:
        parts.append(kernel)
    return "_".join(parts)


def _fold_plan(config: PipelineConfig, features_dir, X) -> FoldPlan:
    groups = None
    if config.group_by_patient:
        groups = load_patients(features_dir, X.sample_ids)
    return FoldPlan(
        X.n_samples,
        seed=config.seed,
        n_folds=config.n_folds,
        n_repeats=config.n_repeats,
        groups=groups,
    )


_EFFECT_THRESHOLDS = (0.2, 0.4, 0.6, 0.8)


def _heatmap_csv(names, matrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["name"] + list(names))
    for name, row in zip(names, matrix):
        writer.writerow([name] + [repr(float(v)) for v in row])
    return buf.getvalue()


def _selected_feature_stats(X_sel: FeatureMatrix, y, out_dir: Path, slug: str) -> dict:
    """Companion analyses of the selected feature set: per-feature label
    correlations, pairwise heatmap, VIF, and effect sizes at the
    supported group-splitting thresholds."""
    names = [n.label for n in X_sel.names]
    values = X_sel.values
    written = {}

    r, mean_abs_r, sd_r = feature_label_correlations(values, y)
    stats = {
        "label_correlations": {
            "per_feature": [
                {"name": nm, "r": float(v)} for nm, v in zip(names, r)
            ],
            "mean_abs": mean_abs_r,
            "sd": sd_r,
            "formatted": format_mean_sd(mean_abs_r, sd_r),
        }
    }

    if len(names) >= 2:
        heat, mean_abs_h, sd_h = pairwise_correlation_heatmap(values)
        heat_path = out_dir / f"heatmap_{slug}.csv"
        _atomic_write_text(heat_path, _heatmap_csv(names, heat))
        written["heatmap"] = heat_path
        stats["pairwise_correlations"] = {
            "mean_abs": mean_abs_h,
            "sd": sd_h,
            "formatted": format_mean_sd(mean_abs_h, sd_h),
        }
        if values.shape[0] > values.shape[1]:
            vifs = vif(values)
            stats["vif"] = [
                {"name": nm, "vif": float(v)} for nm, v in zip(names, vifs)
            ]

    effect_rows = []
    effect_summary = {}
    skipped = {}
    for threshold in _EFFECT_THRESHOLDS:
        try:
            rows, mean_abs_d = effect_size_table(values, y, threshold, names)
        except ValueError as exc:
            skipped[repr(threshold)] = str(exc)
            continue
        effect_summary[repr(threshold)] = mean_abs_d
        effect_rows.extend((threshold, row) for row in rows)
    if effect_rows:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["threshold", "name", "cohens_d", "bucket", "n_below", "n_above"])
        for threshold, row in effect_rows:
            writer.writerow(
                [threshold, row.name, repr(row.cohens_d), row.bucket, row.n_below, row.n_above]
            )
        effects_path = out_dir / f"effects_{slug}.csv"
        _atomic_write_text(effects_path, buf.getvalue())
        written["effects"] = effects_path
    stats["effect_sizes"] = {"mean_abs_d": effect_summary, "skipped": skipped}

    stats_path = out_dir / f"stats_{slug}.json"
    _write_json(stats_path, stats)
    written["stats"] = stats_path
    return written


def run_select(
    config: PipelineConfig, features_dir, scenario: Scenario, criterion: str, out_dir
) -> Path:
    """Variance filter, correlation prune, repeated-CV Lasso ranking.

    Writes the ranked SelectionResult JSON plus the selected-set
    analyses (label-correlation/VIF stats JSON, pairwise-correlation
    heatmap CSV, effect-size CSV)."""
    X, y = prepared_scenario_matrix(config, features_dir, scenario)
    plan = _fold_plan(config, features_dir, X)
    try:
        result = select_features(
            X, y, criterion, plan, n_nonzero=config.n_nonzero, n_top=config.n_top
        )
    except ValueError as exc:
        raise DataError(f"scenario {scenario.key}: {exc}") from exc
    blob = {"scenario": scenario.key, **result.to_json_dict()}
    out_dir = Path(out_dir)
    slug = _slug(scenario, criterion)
    out_path = out_dir / f"selection_{slug}.json"
    _write_json(out_path, blob)

    label_to_col = {n.label: j for j, n in enumerate(X.names)}
    sel_idx = [label_to_col[name.label] for name, _ in result.ranked]
    _selected_feature_stats(X.select_columns(sel_idx), y, out_dir, slug)
    return out_path


def _sweep_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["n_features", "mean_r2", "r2_ci_lo", "r2_ci_hi", "mean_rrmse", "rrmse_ci_lo", "rrmse_ci_hi"]
    )
    for rep in reports:
        writer.writerow(
            [
                rep.n_features,
                repr(rep.mean_r2),
                repr(rep.ci95_r2[0]),
                repr(rep.ci95_r2[1]),
                repr(rep.mean_rrmse),
                repr(rep.ci95_rrmse[0]),
                repr(rep.ci95_rrmse[1]),
            ]
        )
    return buf.getvalue()


def _scatter_csv(report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["sample_id", "actual", "predicted", "repeat", "fold"])
    for p in report.predictions:
        writer.writerow([p.sample_id, repr(p.actual), repr(p.predicted), p.repeat, p.fold])
    return buf.getvalue()


def run_evaluate(
    config: PipelineConfig,
    features_dir,
    scenario: Scenario,
    criterion: str,
    kernel: str,
    out_dir,
    n_features_list=None,
) -> dict:
    """Sweep the number of selected features through repeated-CV SVR.

    Writes one report JSON per feature count, a sweep CSV, a scatter CSV
    for the best-R2 count, and a best-of JSON; returns the paths.
    """
    X, y = prepared_scenario_matrix(config, features_dir, scenario)
    if n_features_list is None:
        n_features_list = list(range(1, config.n_top + 1))
    plan = _fold_plan(config, features_dir, X)
    reports = sweep_evaluate(
        X.values,
        y,
        criterion,
        kernel,
        n_features_list,
        plan,
        grid=config.grid_for(kernel),
        sample_ids=list(X.sample_ids),
        scenario=scenario.key,
        rrmse_denominator=config.rrmse_denominator,
        n_nonzero=config.n_nonzero,
        n_top=config.n_top,
    )
    out_dir = Path(out_dir)
    slug = _slug(scenario, criterion, kernel)
    written = {"reports": []}
    for rep in reports:
        path = out_dir / f"report_{slug}_n{rep.n_features:02d}.json"
        _write_json(path, rep.to_json_dict())
        written["reports"].append(path)

    sweep_path = out_dir / f"sweep_{slug}.csv"
    _atomic_write_text(sweep_path, _sweep_csv(reports))
    written["sweep"] = sweep_path

    best_r2 = max(reports, key=lambda r: (r.mean_r2, -r.n_features))
    best_rrmse = min(reports, key=lambda r: (r.mean_rrmse, r.n_features))
    best = {
        "scenario": scenario.key,
        "criterion": criterion,
        "kernel": kernel,
        "best_r2": {
            "n_features": best_r2.n_features,
            "mean_r2": best_r2.mean_r2,
            "ci95": list(best_r2.ci95_r2),
            "formatted": format_ci(best_r2.mean_r2, *best_r2.ci95_r2),
        },
        "best_rrmse": {
            "n_features": best_rrmse.n_features,
            "mean_rrmse": best_rrmse.mean_rrmse,
            "ci95": list(best_rrmse.ci95_rrmse),
            "formatted": format_ci(best_rrmse.mean_rrmse, *best_rrmse.ci95_rrmse),
        },
    }
    best_path = out_dir / f"best_{slug}.json"
    _write_json(best_path, best)
    written["best"] = best_path

    scatter_path = out_dir / f"scatter_{slug}_n{best_r2.n_features:02d}.csv"
    _atomic_write_text(scatter_path, _scatter_csv(best_r2))
    written["scatter"] = scatter_path
    return written


# ---------------------------------------------------------------------------
# Stage: synth


def run_synth(spec: SyntheticSpec, out_dir) -> dict:
    """Generate a synthetic cohort: either feature CSVs + labels + truth
    (feature mode) or VOL1 volumes + manifest + truth (volume mode)."""
    out_dir = Path(out_dir)
    if spec.volume_mode:
        manifest = generate_volume_cohort(spec, out_dir)
        return {"manifest": manifest, "truth": out_dir / "truth.json"}
    cohort = generate_feature_cohort(spec)
    written = {}
    for tag, matrix in cohort.blocks.items():
        path = out_dir / f"{tag}.csv"
        _write_matrix_csv(matrix, path)
        written[tag] = path
    labels_path = out_dir / "labels.csv"
    _write_labels_csv(labels_path, cohort.sample_ids, cohort.labels)
    written["labels"] = labels_path
    patients_path = out_dir / "patients.csv"
    _write_patients_csv(patients_path, cohort.sample_ids, cohort.patient_ids)
    written["patients"] = patients_path
    truth_path = out_dir / "truth.json"
    _write_json(truth_path, cohort.truth)
    written["truth"] = truth_path
    return written


# ---------------------------------------------------------------------------
# Stage: report


def _scenario_sort_key(key: str) -> int:
    order = [s.key for s in Scenario]
    return order.index(key) if key in order else len(order)


def run_report(out_dir) -> dict:
    """Consolidate every best_*.json under ``out_dir`` into one summary
    (JSON + markdown tables, best kernel flagged per scenario)."""
    out_dir = Path(out_dir)
    best_files = sorted(out_dir.rglob("best_*.json"))
    if not best_files:
        raise DataError(f"no evaluation results (best_*.json) found under {out_dir}")
    cells = {}
    kernels, criteria = [], []
    for path in best_files:
        blob = json.loads(path.read_text(encoding="utf-8"))
        key = (blob["scenario"], blob["criterion"], blob["kernel"])
        cells[key] = blob
        if blob["kernel"] not in kernels:
            kernels.append(blob["kernel"])
        if blob["criterion"] not in criteria:
            criteria.append(blob["criterion"])
    kernels.sort(key=lambda k: KERNEL_KINDS.index(k) if k in KERNEL_KINDS else 99)

    summary = {"criteria": {}}
    lines = []
    for criterion in sorted(criteria):
        scenarios = sorted(
            {s for s, c, _ in cells if c == criterion}, key=_scenario_sort_key
        )
        rows_r2, rows_rrmse = [], []
        for scenario in scenarios:
            row_cells = {
                kernel: cells.get((scenario, criterion, kernel)) for kernel in kernels
            }
            present = {k: v for k, v in row_cells.items() if v is not None}
            best_kernel_r2 = max(
                present, key=lambda k: present[k]["best_r2"]["mean_r2"], default=None
            )
            best_kernel_rrmse = min(
                present, key=lambda k: present[k]["best_rrmse"]["mean_rrmse"], default=None
            )
            rows_r2.append((scenario, row_cells, best_kernel_r2))
            rows_rrmse.append((scenario, row_cells, best_kernel_rrmse))

        summary["criteria"][criterion] = {
            "kernels": kernels,
            "scenarios": scenarios,
            "r2": {
                s: {
                    k: (
                        {
                            "n_features": v["best_r2"]["n_features"],
                            "formatted": v["best_r2"]["formatted"],
                            "best": k == best_k,
                        }
                        if (v := row[k]) is not None
                        else None
                    )
                    for k in kernels
                }
                for s, row, best_k in rows_r2
            },
            "rrmse": {
                s: {
                    k: (
                        {
                            "n_features": v["best_rrmse"]["n_features"],
                            "formatted": v["best_rrmse"]["formatted"],
                            "best": k == best_k,
                        }
                        if (v := row[k]) is not None
                        else None
                    )
                    for k in kernels
                }
                for s, row, best_k in rows_rrmse
            },
        }

        for metric, rows, field_name in (
            ("R2", rows_r2, "best_r2"),
            ("RRMSE", rows_rrmse, "best_rrmse"),
        ):
            lines.append(f"## Best {metric} per scenario ({criterion})")
            lines.append("")
            lines.append("| Scenario | " + " | ".join(kernels) + " |")
            lines.append("|" + "---|" * (len(kernels) + 1))
            for scenario, row, best_k in rows:
                rendered = []
                for k in kernels:
                    cell = row[k]
                    if cell is None:
                        rendered.append("-")
                        continue
                    text = f"n={cell[field_name]['n_features']}: {cell[field_name]['formatted']}"
                    rendered.append(f"**{text}**" if k == best_k else text)
                lines.append(f"| {scenario} | " + " | ".join(rendered) + " |")
            lines.append("")

    json_path = out_dir / "summary.json"
    md_path = out_dir / "summary.md"
    _write_json(json_path, summary)
    _atomic_write_text(md_path, "\n".join(lines))
    return {"json": json_path, "markdown": md_path}
