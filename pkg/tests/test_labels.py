"""Target-label mapping, CT preconditioning, and table-mask application."""

import json

import numpy as np
import pytest

from synthabd import (
    ABDOMINAL_VERTEBRAE,
    DEFAULT_SOURCE_LABELS,
    ConfigurationError,
    ContractError,
    DegenerateNormalizationError,
    LabelMapping,
    Volume,
    apply_mapping,
    apply_table_mask,
    build_target_mapping,
    load_target_spec,
    preprocess_ct_for_clustering,
)


class TestBuildTargetMapping:
    def test_exactly_26_targets(self):
        m = build_target_mapping()
        assert m.n_targets == 26
        assert set(m.target_names) == set(range(1, 27))
        assert len(set(m.target_names.values())) == 26

    def test_total_on_source_ids(self):
        m = build_target_mapping()
        for sid in DEFAULT_SOURCE_LABELS.values():
            assert sid in m.generation_to_target

    def test_vertebrae_merge_to_one_target(self):
        m = build_target_mapping()
        targets = {
            m.generation_to_target[DEFAULT_SOURCE_LABELS[name]] for name in ABDOMINAL_VERTEBRAE
        }
        assert len(targets) == 1
        (tid,) = targets
        assert m.target_names[tid] == "vertebrae"
        # non-abdominal vertebrae stay background
        assert m.generation_to_target[DEFAULT_SOURCE_LABELS["vertebrae_C3"]] == 0
        assert m.generation_to_target[DEFAULT_SOURCE_LABELS["vertebrae_T9"]] == 0

    def test_sacrum_is_its_own_target(self):
        m = build_target_mapping()
        tid = m.generation_to_target[DEFAULT_SOURCE_LABELS["sacrum"]]
        assert m.target_names[tid] == "sacrum"

    def test_unselected_structures_map_to_background(self):
        m = build_target_mapping()
        for name in ("aorta", "brain", "rib_left_4", "urinary_bladder", "femur_left"):
            assert m.generation_to_target[DEFAULT_SOURCE_LABELS[name]] == 0

    def test_missing_required_structure_raises(self):
        incomplete = {k: v for k, v in DEFAULT_SOURCE_LABELS.items() if k != "liver"}
        with pytest.raises(ConfigurationError):
            build_target_mapping(incomplete)

    def test_custom_spec_from_json(self, tmp_path):
        spec = {"liver": ["liver"], "kidneys": ["kidney_left", "kidney_right"]}
        p = tmp_path / "spec.json"
        p.write_text(json.dumps(spec))
        m = build_target_mapping(target_spec=load_target_spec(p))
        assert m.n_targets == 2
        kl = m.generation_to_target[DEFAULT_SOURCE_LABELS["kidney_left"]]
        kr = m.generation_to_target[DEFAULT_SOURCE_LABELS["kidney_right"]]
        assert kl == kr


class TestApplyMapping:
    def test_all_zero_stays_zero(self):
        m = build_target_mapping()
        v = Volume(np.zeros((3, 3, 3), np.int32), kind="label")
        out = apply_mapping(v, m)
        assert not out.data.any()

    def test_merged_vertebra_takes_single_target_id(self):
        m = build_target_mapping()
        src = DEFAULT_SOURCE_LABELS["vertebrae_L1"]
        src2 = DEFAULT_SOURCE_LABELS["vertebrae_L3"]
        v = Volume(np.array([[[src, src2, 0]]], np.int32), kind="label")
        out = apply_mapping(v, m)
        tid = m.generation_to_target[src]
        assert list(out.data[0, 0]) == [tid, tid, 0]

    def test_histogram_oracle_voxel_counts_compose(self, rng):
        m = build_target_mapping()
        data = rng.integers(0, 105, size=(12, 12, 12))
        v = Volume(data, kind="label")
        out = apply_mapping(v, m)
        # oracle: per-target count = sum of counts of its generation labels
        for tid in range(0, m.n_targets + 1):
            sources = [g for g, t in m.generation_to_target.items() if t == tid]
            expected = int(np.isin(v.data, sources).sum())
            assert int((out.data == tid).sum()) == expected

    def test_never_increases_distinct_labels(self, rng):
        m = build_target_mapping()
        data = rng.integers(0, 105, size=(10, 10, 10))
        v = Volume(data, kind="label")
        out = apply_mapping(v, m)
        assert len(np.unique(out.data)) <= len(np.unique(v.data))

    def test_unmapped_values_become_zero(self):
        m = LabelMapping({0: 0, 5: 1}, {1: "only"}, 1)
        v = Volume(np.array([[[5, 999, 0]]], np.int32), kind="label")
        out = apply_mapping(v, m)
        assert list(out.data[0, 0]) == [1, 0, 0]


class TestLabelMappingType:
    def test_rejects_noncontiguous_names(self):
        with pytest.raises(ContractError):
            LabelMapping({0: 0}, {2: "b"}, 1)

    def test_rejects_out_of_range_target(self):
        with pytest.raises(ContractError):
            LabelMapping({1: 5}, {1: "a"}, 1)

    def test_json_round_trip(self):
        m = build_target_mapping()
        m2 = LabelMapping.from_json_dict(json.loads(json.dumps(m.to_json_dict())))
        assert m2 == m


class TestPreprocessCt:
    def test_no_blur_gamma_one_is_minmax(self, rng):
        data = rng.normal(10, 5, size=(8, 8, 8))
        v = Volume(data, spacing=(1.5, 1.5, 1.5))
        out = preprocess_ct_for_clustering(v, blur_sigma=0.0, gamma=1.0)
        expect = (v.data - v.data.min()) / (v.data.max() - v.data.min())
        assert np.allclose(out.data, expect, atol=1e-6)
        assert out.data.min() == 0.0 and out.data.max() == 1.0

    def test_output_in_unit_interval(self, rng):
        v = Volume(rng.normal(size=(8, 8, 8)), spacing=(2, 2, 2))
        out = preprocess_ct_for_clustering(v, blur_sigma=2.0, gamma=0.6)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_monotone_when_unblurred(self, rng):
        v = Volume(rng.normal(size=(6, 6, 6)))
        out = preprocess_ct_for_clustering(v, blur_sigma=0.0, gamma=1.67)
        order_in = np.argsort(v.data.ravel(), kind="stable")
        order_out = np.argsort(out.data.ravel(), kind="stable")
        assert np.array_equal(order_in, order_out)

    def test_impulse_blur_matches_analytic_kernel(self):
        # oracle: dense convolution of a centered impulse with the separable
        # Gaussian evaluated analytically, reflect boundary negligible
        n = 21
        data = np.zeros((n, n, n))
        data[10, 10, 10] = 1.0
        v = Volume(data, spacing=(1.0, 1.0, 1.0))
        out = preprocess_ct_for_clustering(v, blur_sigma=1.0, gamma=1.0)

        idx = np.arange(n) - 10
        g = np.exp(-0.5 * idx**2)
        g /= g.sum()
        expect = np.einsum("i,j,k->ijk", g, g, g)
        expect = expect / expect.max()  # min-max normalization; min is ~0
        assert np.allclose(out.data, expect, atol=1e-4)

    def test_constant_image_degenerate(self):
        v = Volume(np.full((4, 4, 4), 7.0))
        with pytest.raises(DegenerateNormalizationError):
            preprocess_ct_for_clustering(v, 0.0, 1.0)

    def test_gamma_one_preserves_mean_of_normalized(self, rng):
        # oracle: blur + min-max computed directly; gamma=1 adds no contrast change
        from scipy.ndimage import gaussian_filter

        v = Volume(rng.normal(size=(8, 8, 8)), spacing=(2.0, 2.0, 2.0))
        out = preprocess_ct_for_clustering(v, blur_sigma=1.0, gamma=1.0)
        ref = gaussian_filter(v.data.astype(np.float64), sigma=0.5, mode="reflect")
        ref = (ref - ref.min()) / (ref.max() - ref.min())
        assert np.allclose(out.data.mean(), ref.mean(), atol=1e-6)

    def test_invalid_parameters(self, rng):
        v = Volume(rng.normal(size=(4, 4, 4)))
        with pytest.raises(ContractError):
            preprocess_ct_for_clustering(v, blur_sigma=-1.0, gamma=1.0)
        with pytest.raises(ContractError):
            preprocess_ct_for_clustering(v, blur_sigma=0.0, gamma=0.0)


class TestTableMask:
    def _pair(self, rng):
        lv = Volume(rng.integers(0, 5, size=(8, 8, 8)), kind="label")
        mask = Volume((rng.random((8, 8, 8)) < 0.3).astype(np.int32), kind="label")
        return lv, mask

    def test_remove_false_returns_unchanged(self, rng):
        lv, mask = self._pair(rng)
        out = apply_table_mask(lv, mask, remove=False)
        assert np.array_equal(out.data, lv.data)

    def test_empty_mask_changes_nothing(self, rng):
        lv, _ = self._pair(rng)
        empty = Volume(np.zeros((8, 8, 8), np.int32), kind="label")
        out = apply_table_mask(lv, empty, remove=True)
        assert np.array_equal(out.data, lv.data)

    def test_full_mask_zeroes_everything(self, rng):
        lv, _ = self._pair(rng)
        full = Volume(np.ones((8, 8, 8), np.int32), kind="label")
        out = apply_table_mask(lv, full, remove=True)
        assert not out.data.any()

    def test_changed_set_oracle(self, rng):
        lv, mask = self._pair(rng)
        out = apply_table_mask(lv, mask, remove=True)
        changed = out.data != lv.data
        expected = (mask.data == 1) & (lv.data != 0)
        assert np.array_equal(changed, expected)
        assert not out.data[mask.data == 1].any()

    def test_geometry_mismatch_raises(self, rng):
        lv, _ = self._pair(rng)
        other = Volume(np.zeros((8, 8, 8), np.int32), spacing=(2, 2, 2), kind="label")
        with pytest.raises(ContractError):
            apply_table_mask(lv, other, remove=True)

    def test_non_binary_mask_rejected(self, rng):
        lv, _ = self._pair(rng)
        bad = Volume(np.full((8, 8, 8), 2, np.int32), kind="label")
        with pytest.raises(ContractError):
            apply_table_mask(lv, bad, remove=True)
