import numpy as np
import pytest

from omicsreg.features import (
    ExtractionConfig,
    FeatureMatrix,
    FeatureName,
    FeatureVector,
    LesionSample,
    Scenario,
    assemble_scenario,
    catalogue,
    combine_blocks,
    delta_features,
    delta_matrix,
    discretize,
    extract_feature_vector,
    first_order,
    shape_features,
    texture_features,
    texture_matrix,
)
from omicsreg.volume import FilterSpec, Mask3D, Volume3D


def line_volume(values, spacing=(1.0, 1.0, 1.0)):
    arr = np.asarray(values, dtype=float).reshape(-1, 1, 1)
    return Volume3D(arr, spacing)


def full_mask(v):
    return Mask3D(np.ones(v.dims, dtype=bool), v.spacing, v.origin)


SMALL_CONFIG = ExtractionConfig(
    n_bins=8,
    filters=(FilterSpec("original"), FilterSpec("square")),
    families=("firstorder", "glcm", "glrlm"),
)


class TestDiscretize:
    def test_constant_region_maps_to_bin_one(self):
        v = Volume3D(np.full((3, 3, 3), 7.0), (1, 1, 1))
        labels = discretize(v, full_mask(v), 32)
        assert set(labels.ravel()) == {1}

    def test_four_levels(self):
        v = line_volume([0.0, 1.0, 2.0, 3.0])
        labels = discretize(v, full_mask(v), 4)
        np.testing.assert_array_equal(labels[:, 0, 0], [1, 2, 3, 4])

    def test_two_levels(self):
        v = line_volume([0.0, 10.0])
        labels = discretize(v, full_mask(v), 2)
        np.testing.assert_array_equal(labels[:, 0, 0], [1, 2])

    def test_outside_mask_is_zero(self):
        v = line_volume([0.0, 1.0, 2.0])
        mask = Mask3D(np.array([True, False, True]).reshape(-1, 1, 1), (1, 1, 1))
        labels = discretize(v, mask, 2)
        assert labels[1, 0, 0] == 0


class TestFirstOrder:
    def as_dict(self, fv):
        return {n.feature: val for n, val in zip(fv.names, fv.values)}

    def test_constant(self):
        v = line_volume([2.0, 2.0, 2.0])
        f = self.as_dict(first_order(v, full_mask(v)))
        assert f["Mean"] == 2.0
        assert f["Skewness"] == 0.0
        assert f["RootMeanSquared"] == 2.0
        assert f["Kurtosis"] == 0.0
        assert f["Entropy"] == 0.0

    def test_small_sample(self):
        v = line_volume([1.0, 2.0, 3.0, 4.0])
        f = self.as_dict(first_order(v, full_mask(v)))
        assert f["Mean"] == 2.5
        assert f["Median"] == 2.5
        assert f["Minimum"] == 1.0
        assert f["Maximum"] == 4.0
        assert f["Energy"] == 30.0

    def test_skewness_population_moments(self):
        v = line_volume([0.0, 0.0, 0.0, 4.0])
        f = self.as_dict(first_order(v, full_mask(v)))
        # (sum d^3/n) / (sum d^2/n)^1.5 with d = x - 1
        assert f["Skewness"] == pytest.approx(6.0 / 3.0**1.5, abs=1e-4)
        assert f["Skewness"] == pytest.approx(1.1547, abs=1e-4)

    def test_kurtosis_of_normal_is_three(self):
        rng = np.random.default_rng(0)
        v = Volume3D(rng.standard_normal((40, 40, 40)), (1, 1, 1))
        f = self.as_dict(first_order(v, full_mask(v)))
        assert f["Kurtosis"] == pytest.approx(3.0, abs=0.1)

    def test_single_voxel_mask(self):
        v = line_volume([5.0, 1.0])
        mask = Mask3D(np.array([True, False]).reshape(-1, 1, 1), (1, 1, 1))
        f = self.as_dict(first_order(v, mask))
        assert f["Skewness"] == 0.0
        assert f["Kurtosis"] == 0.0
        assert f["Mean"] == 5.0

    def test_invariant_under_voxel_reordering(self):
        rng = np.random.default_rng(1)
        vals = rng.normal(size=27)
        va = Volume3D(vals.reshape(3, 3, 3), (1, 1, 1))
        vb = Volume3D(rng.permutation(vals).reshape(3, 3, 3), (1, 1, 1))
        a = first_order(va, full_mask(va))
        b = first_order(vb, full_mask(vb))
        np.testing.assert_allclose(a.values, b.values, rtol=1e-12)


class TestGLCM:
    def test_constant_region_single_cell(self):
        v = Volume3D(np.full((3, 3, 3), 4.2), (1, 1, 1))
        labels = discretize(v, full_mask(v), 32)
        p = texture_matrix("glcm", labels, full_mask(v))
        assert p.shape == (1, 1)
        assert p[0, 0] == 1.0
        feats = texture_features("glcm", p)
        assert feats["Autocorrelation"] == 1.0
        assert feats["Correlation"] == 1.0

    def test_three_voxel_line(self):
        v = line_volume([1.0, 2.0, 3.0])
        labels = discretize(v, full_mask(v), 3)
        p = texture_matrix("glcm", labels, full_mask(v), directions=[(1, 0, 0)])
        expected = np.zeros((3, 3))
        expected[0, 1] = expected[1, 0] = expected[1, 2] = expected[2, 1] = 0.25
        np.testing.assert_allclose(p, expected)
        feats = texture_features("glcm", p)
        assert feats["Autocorrelation"] == pytest.approx(4.0, abs=1e-12)
        assert feats["Correlation"] == pytest.approx(0.0, abs=1e-12)
        assert feats["DifferenceEntropy"] == pytest.approx(0.0, abs=1e-12)
        assert feats["ClusterShade"] == pytest.approx(0.0, abs=1e-12)
        assert feats["ClusterProminence"] == pytest.approx(1.0, abs=1e-12)
        assert feats["Imc2"] == pytest.approx(np.sqrt(1 - np.exp(-2.0)), abs=1e-12)

    def test_symmetry_and_normalization_random(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            shape = tuple(rng.integers(2, 6, size=3))
            v = Volume3D(rng.normal(size=shape), (1, 1, 1))
            mask = Mask3D(rng.random(shape) > 0.3, (1, 1, 1)) if rng.random() > 0.5 else full_mask(v)
            labels = discretize(v, mask, int(rng.integers(2, 6)))
            p = texture_matrix("glcm", labels, mask)
            np.testing.assert_allclose(p, p.T, atol=1e-15)
            if p.sum() > 0:
                assert p.sum() == pytest.approx(1.0, abs=1e-12)


class TestGLRLM:
    def test_run_pair_fixture(self):
        v = line_volume([1.0, 1.0, 2.0, 2.0])
        labels = discretize(v, full_mask(v), 2)
        counts = texture_matrix("glrlm", labels, full_mask(v), directions=[(1, 0, 0)])
        expected = np.zeros((2, 4))
        expected[0, 1] = expected[1, 1] = 1.0
        np.testing.assert_array_equal(counts, expected)
        feats = texture_features("glrlm", counts)
        assert feats["LongRunEmphasis"] == pytest.approx(4.0)
        assert feats["ShortRunLowGrayLevelEmphasis"] == pytest.approx(0.15625)
        assert feats["LongRunLowGrayLevelEmphasis"] == pytest.approx(2.5)
        assert feats["LongRunHighGrayLevelEmphasis"] == pytest.approx(10.0)
        assert feats["LowGrayLevelRunEmphasis"] == pytest.approx(0.625)
        assert feats["HighGrayLevelRunEmphasis"] == pytest.approx(2.5)
        assert feats["RunLengthNonUniformity"] == pytest.approx(2.0)

    def test_all_directions_constant_line(self):
        # 3x1x1 constant volume: one x-run of 3, plus 3 singleton runs in
        # each of the other 12 directions
        v = line_volume([5.0, 5.0, 5.0])
        labels = discretize(v, full_mask(v), 4)
        counts = texture_matrix("glrlm", labels, full_mask(v))
        assert counts[0, 2] == 1.0  # the x-run
        assert counts[0, 0] == 36.0  # 12 directions x 3 voxels
        assert counts.sum() == 37.0


class TestGLSZM:
    def test_two_zone_fixture(self):
        v = line_volume([1.0, 1.0, 5.0])
        labels = discretize(v, full_mask(v), 2)
        counts = texture_matrix("glszm", labels, full_mask(v))
        expected = np.zeros((2, 2))
        expected[0, 1] = 1.0  # level 1, zone size 2
        expected[1, 0] = 1.0  # level 2, zone size 1
        np.testing.assert_array_equal(counts, expected)
        feats = texture_features("glszm", counts)
        assert feats["SmallAreaEmphasis"] == pytest.approx(0.625)
        assert feats["GrayLevelNonUniformity"] == pytest.approx(1.0)
        assert feats["ZoneVariance"] == pytest.approx(0.25)
        assert feats["SizeZoneNonUniformity"] == pytest.approx(1.0)

    def test_diagonal_zones_are_26_connected(self):
        arr = np.zeros((2, 2, 2))
        arr[0, 0, 0] = arr[1, 1, 1] = 1.0
        v = Volume3D(arr, (1, 1, 1))
        labels = discretize(v, full_mask(v), 2)
        counts = texture_matrix("glszm", labels, full_mask(v))
        # the two bright corner voxels touch diagonally: one zone of size 2
        assert counts[1, 1] == 1.0


class TestGLDM:
    def test_line_fixture(self):
        v = line_volume([1.0, 1.0, 2.0])
        labels = discretize(v, full_mask(v), 2)
        counts = texture_matrix("gldm", labels, full_mask(v))
        assert counts.shape == (2, 27)
        assert counts[0, 1] == 2.0  # two level-1 voxels with one equal neighbor
        assert counts[1, 0] == 1.0  # level-2 voxel with no equal neighbor
        feats = texture_features("gldm", counts)
        assert feats["DependenceNonUniformity"] == pytest.approx(5.0 / 3.0)
        assert feats["LargeDependenceHighGrayLevelEmphasis"] == pytest.approx(4.0)
        assert feats["DependenceEntropy"] == pytest.approx(0.9182958340544896)


class TestNGTDM:
    def test_line_fixture(self):
        v = line_volume([1.0, 1.0, 2.0])
        labels = discretize(v, full_mask(v), 2)
        m = texture_matrix("ngtdm", labels, full_mask(v))
        np.testing.assert_allclose(m[:, 0], [2.0, 1.0])  # n_i
        np.testing.assert_allclose(m[:, 1], [0.5, 1.0])  # s_i
        feats = texture_features("ngtdm", m)
        assert feats["Complexity"] == pytest.approx(4.0 / 9.0)
        assert feats["Strength"] == pytest.approx(4.0 / 3.0)

    def test_constant_region_degenerate(self):
        v = Volume3D(np.full((3, 3, 3), 1.0), (1, 1, 1))
        labels = discretize(v, full_mask(v), 8)
        feats = texture_features("ngtdm", texture_matrix("ngtdm", labels, full_mask(v)))
        assert feats["Complexity"] == 0.0
        assert feats["Strength"] == 0.0


class TestShape:
    def test_elongation_of_anisotropic_box(self):
        mask = np.zeros((9, 3, 3), dtype=bool)
        mask[:, :, :] = True
        m = Mask3D(mask, (1.0, 1.0, 1.0))
        f = shape_features(m)
        # principal axis variance from 9 positions, second from 3
        lam1 = np.var(np.arange(9.0))
        lam2 = np.var(np.arange(3.0))
        assert f["Elongation"] == pytest.approx(np.sqrt(lam2 / lam1))

    def test_sphere_is_isotropic(self):
        x, y, z = np.mgrid[-5:6, -5:6, -5:6]
        m = Mask3D(x**2 + y**2 + z**2 <= 25, (1.0, 1.0, 1.0))
        assert shape_features(m)["Elongation"] == pytest.approx(1.0, abs=1e-6)


class TestDelta:
    def names(self, k):
        return tuple(FeatureName("original", "firstorder", f"f{i}") for i in range(k))

    def test_no_change_is_zero(self):
        f = FeatureVector(self.names(3), [1.0, -2.0, 3.0])
        out = delta_features(f, f)
        np.testing.assert_array_equal(out.values, 0.0)

    def test_basic_ratio(self):
        a = FeatureVector(self.names(1), [2.0])
        b = FeatureVector(self.names(1), [1.0])
        assert delta_features(a, b).values[0] == 0.5

    def test_zero_init_capped_sentinel(self):
        a = FeatureVector(self.names(1), [0.0])
        b = FeatureVector(self.names(1), [5.0])
        assert delta_features(a, b).values[0] == -1e6

    def test_zero_init_zero_change(self):
        a = FeatureVector(self.names(1), [0.0])
        b = FeatureVector(self.names(1), [0.0])
        assert delta_features(a, b).values[0] == 0.0

    def test_name_mismatch_rejected(self):
        a = FeatureVector(self.names(2), [1.0, 2.0])
        b = FeatureVector(self.names(2)[::-1], [1.0, 2.0])
        with pytest.raises(ValueError, match="identical name"):
            delta_features(a, b)


def make_lesion(seed, lesion_id="L1", shape=(6, 6, 6)):
    rng = np.random.default_rng(seed)
    spacing = (1.0, 1.0, 1.0)
    mask_arr = np.zeros(shape, dtype=bool)
    mask_arr[1:5, 1:5, 1:5] = True

    def vol(scale):
        return Volume3D(rng.normal(loc=scale, scale=1.0, size=shape), spacing)

    return LesionSample(
        lesion_id=lesion_id,
        patient_id="P1",
        image_init=vol(10.0),
        image_intra=vol(9.0),
        dose_init=vol(20.0),
        dose_intra=vol(18.0),
        mask_init=Mask3D(mask_arr, spacing),
        mask_intra=Mask3D(mask_arr, spacing),
        gtv_init_mm3=64.0,
        gtv_followup_mm3=rng.uniform(10.0, 80.0),
    )


class TestExtraction:
    def test_catalogue_matches_vector(self):
        lesion = make_lesion(0)
        fv = extract_feature_vector(lesion.image_init, lesion.mask_init, SMALL_CONFIG)
        assert fv.names == catalogue(SMALL_CONFIG)

    def test_shape_only_under_original(self):
        config = ExtractionConfig(
            filters=(FilterSpec("original"), FilterSpec("logarithm")),
            families=("shape", "firstorder"),
        )
        names = catalogue(config)
        shape_filters = {n.filter for n in names if n.family == "shape"}
        assert shape_filters == {"original"}

    def test_deterministic_bitwise(self):
        lesion = make_lesion(1)
        a = extract_feature_vector(lesion.image_init, lesion.mask_init, SMALL_CONFIG)
        b = extract_feature_vector(lesion.image_init, lesion.mask_init, SMALL_CONFIG)
        assert np.array_equal(a.values, b.values)

    def test_invariant_to_outside_mask_values(self):
        lesion = make_lesion(2)
        config = ExtractionConfig(
            n_bins=8,
            filters=(FilterSpec("original"), FilterSpec("gradient"),
                     FilterSpec("wavelet", subband="HLH"),
                     FilterSpec("log_sigma", sigma_mm=1.0)),
            families=("firstorder", "glcm", "ngtdm"),
        )
        v = lesion.image_init
        m = lesion.mask_init
        a = extract_feature_vector(v, m, config)
        scrambled = v.values.copy()
        rng = np.random.default_rng(3)
        outside = ~m.values
        scrambled[outside] = rng.permutation(scrambled[outside])
        b = extract_feature_vector(Volume3D(scrambled, v.spacing, v.origin), m, config)
        np.testing.assert_array_equal(a.values, b.values)


class TestAssembly:
    def cohort(self, n=3):
        return [make_lesion(seed=10 + i, lesion_id=f"L{i}") for i in range(n)]

    def test_single_block_shape_and_tags(self):
        cohort = self.cohort()
        X, y = assemble_scenario(cohort, Scenario.R_INIT, SMALL_CONFIG)
        k = len(catalogue(SMALL_CONFIG))
        assert X.values.shape == (3, k)
        assert {n.tag for n in X.names} == {"R_init"}
        assert y.shape == (3,)
        assert np.all(y > 0)

    def test_triple_block_concatenation(self):
        cohort = self.cohort()
        X, _ = assemble_scenario(cohort, Scenario.R_COMBINED, SMALL_CONFIG)
        k = len(catalogue(SMALL_CONFIG))
        assert X.n_features == 3 * k
        tags = [n.tag for n in X.names]
        assert tags[:k] == ["R_init"] * k
        assert tags[k : 2 * k] == ["R_intra"] * k
        assert tags[2 * k :] == ["R_delta"] * k

    def test_six_block_sources(self):
        cohort = self.cohort(2)
        X, _ = assemble_scenario(cohort, Scenario.ALL, SMALL_CONFIG)
        k = len(catalogue(SMALL_CONFIG))
        assert X.n_features == 6 * k
        # dosiomic blocks come from dose volumes (mean ~20), radiomic from
        # images (mean ~10); check via the original-filter Mean feature
        labels = [n.label for n in X.names]
        r_mean = X.values[:, labels.index("R_init:original:firstorder:Mean")]
        d_mean = X.values[:, labels.index("D_init:original:firstorder:Mean")]
        assert np.all(d_mean > r_mean)

    def test_delta_block_matches_eq1(self):
        cohort = self.cohort(2)
        X, _ = assemble_scenario(cohort, Scenario.R_COMBINED, SMALL_CONFIG)
        k = len(catalogue(SMALL_CONFIG))
        init, intra, delta = X.values[:, :k], X.values[:, k : 2 * k], X.values[:, 2 * k :]
        ok = np.abs(init) >= 1e-8
        np.testing.assert_allclose(
            delta[ok], (init[ok] - intra[ok]) / init[ok], rtol=1e-12
        )

    def test_extraction_failure_names_lesion(self):
        cohort = self.cohort(2)
        bad = make_lesion(99, lesion_id="Lbad")
        object.__setattr__(
            bad, "mask_intra", Mask3D(np.ones((3, 3, 3), dtype=bool), (1, 1, 1))
        )
        with pytest.raises(ValueError, match="Lbad"):
            assemble_scenario(cohort + [bad], Scenario.R_COMBINED, SMALL_CONFIG)

    def test_scenario_parse(self):
        assert Scenario.parse("R_init") is Scenario.R_INIT
        assert Scenario.parse("R_init+R_intra+R_delta") is Scenario.R_COMBINED
        assert Scenario.parse("all") is Scenario.ALL
        assert len(Scenario) == 9
        with pytest.raises(ValueError, match="unknown scenario"):
            Scenario.parse("R_final")


class TestFeatureMatrixIO:
    def matrix(self):
        names = tuple(
            FeatureName("original", "firstorder", f, tag="R_init")
            for f in ("Mean", "Median")
        )
        return FeatureMatrix(("a", "b"), names, [[1.25, -3.5], [0.1, 2e-7]])

    def test_csv_roundtrip_exact(self, tmp_path):
        m = self.matrix()
        m.to_csv(tmp_path / "block.csv")
        back = FeatureMatrix.from_csv(tmp_path / "block.csv")
        assert back.sample_ids == m.sample_ids
        assert back.names == m.names
        np.testing.assert_array_equal(back.values, m.values)

    def test_header_format(self, tmp_path):
        m = self.matrix()
        m.to_csv(tmp_path / "block.csv")
        header = (tmp_path / "block.csv").read_text().splitlines()[0]
        assert header == (
            "sample_id,R_init:original:firstorder:Mean,R_init:original:firstorder:Median"
        )

    def test_duplicate_columns_rejected(self):
        names = (FeatureName("original", "firstorder", "Mean"),) * 2
        with pytest.raises(ValueError, match="duplicate"):
            FeatureMatrix(("a",), names, [[1.0, 2.0]])

    def test_combine_blocks_checks_ids(self):
        m = self.matrix()
        names2 = tuple(n.untagged().tagged("R_intra") for n in m.names)
        other = FeatureMatrix(("a", "c"), names2, [[0.0, 0.0], [1.0, 1.0]])
        blocks = {"R_init": m, "R_intra": other, "R_delta": m}
        with pytest.raises(ValueError, match="R_intra"):
            combine_blocks(blocks, Scenario.R_COMBINED)

    def test_delta_matrix_matches_elementwise(self):
        init = self.matrix()
        intra = FeatureMatrix(
            init.sample_ids,
            tuple(n.untagged().tagged("R_intra") for n in init.names),
            [[1.0, -3.0], [0.2, 0.0]],
        )
        delta = delta_matrix(init, intra, "R_delta")
        assert {n.tag for n in delta.names} == {"R_delta"}
        assert delta.values[0, 0] == pytest.approx((1.25 - 1.0) / 1.25)
