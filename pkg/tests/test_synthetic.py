import numpy as np
import pytest

from omicsreg.features import BLOCK_TAGS
from omicsreg.pipeline import load_lesion, load_manifest
from omicsreg.synthetic import (
    SyntheticSpec,
    generate_feature_cohort,
    generate_volume_cohort,
)


class TestSpec:
    def test_validation(self):
        with pytest.raises(ValueError, match="n_samples"):
            SyntheticSpec(n_samples=1)
        with pytest.raises(ValueError, match="n_informative"):
            SyntheticSpec(n_features_per_block=2, n_informative=13)
        with pytest.raises(ValueError, match="noise_sd"):
            SyntheticSpec(noise_sd=-1.0)


class TestFeatureCohort:
    def test_blocks_and_shapes(self):
        spec = SyntheticSpec(n_samples=30, n_features_per_block=12, seed=1)
        cohort = generate_feature_cohort(spec)
        assert tuple(cohort.blocks) == BLOCK_TAGS
        for tag, matrix in cohort.blocks.items():
            assert matrix.values.shape == (30, 12)
            assert {n.tag for n in matrix.names} == {tag}
        assert cohort.labels.shape == (30,)

    def test_labels_in_clinical_range(self):
        spec = SyntheticSpec(n_samples=50, n_features_per_block=20, seed=2, noise_sd=0.5)
        cohort = generate_feature_cohort(spec)
        assert cohort.labels.min() > 0
        assert cohort.labels.max() <= 1.5

    def test_delta_blocks_follow_relative_change(self):
        spec = SyntheticSpec(n_samples=20, n_features_per_block=6, seed=3)
        cohort = generate_feature_cohort(spec)
        init = cohort.blocks["R_init"].values
        intra = cohort.blocks["R_intra"].values
        delta = cohort.blocks["R_delta"].values
        np.testing.assert_allclose(delta, (init - intra) / init, rtol=1e-12)

    def test_noiseless_labels_are_linear_in_planted_columns(self):
        spec = SyntheticSpec(n_samples=40, n_features_per_block=10, n_informative=4, seed=4)
        cohort = generate_feature_cohort(spec)
        cols = []
        for term in cohort.truth["informative"]:
            block = cohort.blocks[term["tag"]]
            cols.append(block.values[:, term["column"]])
        design = np.column_stack(cols + [np.ones(40)])
        coef, *_ = np.linalg.lstsq(design, cohort.labels, rcond=None)
        resid = cohort.labels - design @ coef
        assert np.abs(resid).max() < 1e-9

    def test_informative_spread_across_blocks(self):
        spec = SyntheticSpec(n_samples=30, n_features_per_block=10, n_informative=6, seed=5)
        cohort = generate_feature_cohort(spec)
        tags = {t["tag"] for t in cohort.truth["informative"]}
        assert tags == set(BLOCK_TAGS)

    def test_null_cohort_has_no_signal_but_varying_labels(self):
        spec = SyntheticSpec(
            n_samples=30, n_features_per_block=10, n_informative=0, noise_sd=1.0, seed=6
        )
        cohort = generate_feature_cohort(spec)
        assert cohort.truth["informative"] == []
        assert cohort.labels.std() > 0

    def test_same_seed_identical(self):
        spec = SyntheticSpec(n_samples=25, n_features_per_block=8, seed=7)
        a = generate_feature_cohort(spec)
        b = generate_feature_cohort(spec)
        for tag in BLOCK_TAGS:
            assert np.array_equal(a.blocks[tag].values, b.blocks[tag].values)
        assert np.array_equal(a.labels, b.labels)


class TestVolumeCohort:
    def test_writes_loadable_manifest(self, tmp_path):
        spec = SyntheticSpec(n_samples=5, volume_mode=True, seed=8)
        manifest_path = generate_volume_cohort(spec, tmp_path)
        manifest = load_manifest(manifest_path)
        assert len(manifest.lesions) == 5
        sample = load_lesion(manifest.lesions[0])
        assert sample.image_init.dims == (16, 16, 16)
        assert sample.image_init.spacing == (1.25, 1.0, 0.8)
        assert sample.mask_init.voxel_count > 0
        assert 0 < sample.label() <= 1.5

    def test_same_seed_identical_files(self, tmp_path):
        spec = SyntheticSpec(n_samples=4, volume_mode=True, seed=9)
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        generate_volume_cohort(spec, a_dir)
        generate_volume_cohort(spec, b_dir)
        a_files = sorted(p.relative_to(a_dir) for p in a_dir.rglob("*") if p.is_file())
        b_files = sorted(p.relative_to(b_dir) for p in b_dir.rglob("*") if p.is_file())
        assert a_files == b_files
        for rel in a_files:
            assert (a_dir / rel).read_bytes() == (b_dir / rel).read_bytes()
