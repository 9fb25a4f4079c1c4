"""Spatial transforms, intensity synthesis, corruption stages, and streams."""

import numpy as np
import pytest
from scipy import stats

from synthabd import (
    ContractError,
    DegenerateNormalizationError,
    GenerationConfig,
    Geometry,
    LabelMapping,
    SpatialTransform,
    Variant,
    Volume,
    apply_bias_field,
    apply_transform_label,
    draw_intensity_params,
    generate_many,
    generate_sample,
    normalize_gamma,
    sample_intensities,
    sample_stream,
    sample_transform,
    simulate_resolution,
)


def small_cfg(**overrides) -> GenerationConfig:
    """A cheap configuration for unit tests: tiny grid, tame ranges."""
    base = dict(
        output_shape=(16, 16, 16),
        output_spacing=(1.5, 1.5, 1.5),
        deform_grid=2,
        bias_grid=2,
        spacing_range=(1.5, 4.0),
    )
    base.update(overrides)
    return GenerationConfig(**base)


def identity_cfg(**overrides) -> GenerationConfig:
    """No geometric or photometric randomness at all."""
    base = dict(
        rotation_range=0.0,
        scale_range=(1.0, 1.0),
        shear_range=0.0,
        translation_range=0.0,
        deform_std=0.0,
        bias_std=0.0,
        gamma_std=0.0,
        spacing_range=(1.5, 1.5),
        bias_enabled=False,
        resolution_enabled=False,
        gamma_enabled=False,
    )
    base.update(overrides)
    return small_cfg(**base)


def simple_mapping(n_labels: int) -> LabelMapping:
    names = {i: f"region_{i}" for i in range(1, n_labels + 1)}
    gen = {0: 0} | {i: i for i in range(1, n_labels + 1)}
    return LabelMapping(gen, names, n_labels)


def boxes_label_volume(shape=(16, 16, 16), spacing=(1.5, 1.5, 1.5)) -> Volume:
    data = np.zeros(shape, np.int32)
    data[2:7, 2:7, 2:7] = 1
    data[9:14, 9:14, 9:14] = 2
    data[2:7, 9:14, 2:7] = 3
    return Volume(data, spacing, kind="label")


class TestSampleTransform:
    def test_deterministic(self):
        cfg = small_cfg()
        a = sample_transform(7, cfg)
        b = sample_transform(7, cfg)
        assert np.array_equal(a.affine, b.affine)
        assert np.array_equal(a.displacement, b.displacement)

    def test_seed_changes_draw(self):
        cfg = small_cfg()
        a = sample_transform(7, cfg)
        b = sample_transform(8, cfg)
        assert not np.array_equal(a.affine, b.affine)

    def test_zero_ranges_give_identity(self):
        cfg = identity_cfg()
        t = sample_transform(3, cfg)
        assert np.allclose(t.affine, np.eye(4), atol=1e-12)
        assert np.all(t.displacement == 0)

    def test_displacement_matches_output_shape(self):
        cfg = small_cfg()
        t = sample_transform(0, cfg)
        assert t.displacement.shape == (16, 16, 16, 3)

    def test_rotation_angles_uniform(self):
        # With unit scale and no shear the linear part is the rotation itself,
        # so Euler angles can be read back and tested for uniformity.
        cfg = small_cfg(
            output_shape=(2, 2, 2),
            scale_range=(1.0, 1.0),
            shear_range=0.0,
            deform_std=0.0,
        )
        r = np.deg2rad(cfg.rotation_range)
        angles = np.empty((2000, 3))
        for i in range(angles.shape[0]):
            m = sample_transform(i, cfg).affine[:3, :3]
            angles[i] = [
                np.arctan2(m[2, 1], m[2, 2]),
                -np.arcsin(np.clip(m[2, 0], -1, 1)),
                np.arctan2(m[1, 0], m[0, 0]),
            ]
        assert np.all(np.abs(angles) <= r + 1e-9)
        for axis in range(3):
            p = stats.kstest(angles[:, axis], stats.uniform(-r, 2 * r).cdf).pvalue
            assert p > 0.01

    def test_translation_bounds(self):
        cfg = small_cfg(rotation_range=0.0, scale_range=(1.0, 1.0), shear_range=0.0)
        for s in range(50):
            t = sample_transform(s, cfg)
            assert np.all(np.abs(t.affine[:3, 3]) <= cfg.translation_range)

    def test_rejects_singular_affine(self):
        with pytest.raises(ContractError):
            SpatialTransform(np.zeros((4, 4)), np.zeros((2, 2, 2, 3), np.float32))

    def test_rejects_nonfinite_displacement(self):
        d = np.zeros((2, 2, 2, 3), np.float32)
        d[0, 0, 0, 0] = np.nan
        with pytest.raises(ContractError):
            SpatialTransform(np.eye(4), d)


class TestApplyTransformLabel:
    def test_identity_is_exact_copy(self):
        lv = boxes_label_volume()
        t = SpatialTransform(np.eye(4), np.zeros((16, 16, 16, 3), np.float32))
        out = apply_transform_label(lv, t, lv.geometry)
        assert np.array_equal(out.data, lv.data)

    def test_pure_translation_shifts_object(self):
        # Moving the object +1 voxel along axis 0 means out[i] == in[i-1].
        lv = boxes_label_volume()
        step = lv.spacing[0]
        affine = np.eye(4)
        affine[0, 3] = step
        t = SpatialTransform(affine, np.zeros((16, 16, 16, 3), np.float32))
        out = apply_transform_label(lv, t, lv.geometry)
        expected = np.zeros_like(lv.data)
        expected[1:] = lv.data[:-1]
        assert np.array_equal(out.data, expected)

    def test_outside_pulls_become_zero(self):
        lv = boxes_label_volume()
        affine = np.eye(4)
        affine[0, 3] = 1000.0  # far outside the input extent
        t = SpatialTransform(affine, np.zeros((16, 16, 16, 3), np.float32))
        out = apply_transform_label(lv, t, lv.geometry)
        assert not out.data.any()

    def test_output_labels_subset_of_input(self, rng):
        lv = boxes_label_volume()
        cfg = small_cfg()
        for s in range(5):
            t = sample_transform(s, cfg)
            out = apply_transform_label(lv, t, lv.geometry)
            assert set(np.unique(out.data)) <= set(np.unique(lv.data)) | {0}

    def test_rejects_image_volume(self, rng):
        img = Volume(rng.normal(size=(16, 16, 16)))
        t = SpatialTransform(np.eye(4), np.zeros((16, 16, 16, 3), np.float32))
        with pytest.raises(ContractError):
            apply_transform_label(img, t, img.geometry)

    def test_rejects_shape_mismatch(self):
        lv = boxes_label_volume()
        t = SpatialTransform(np.eye(4), np.zeros((8, 8, 8, 3), np.float32))
        with pytest.raises(ContractError):
            apply_transform_label(lv, t, lv.geometry)

    def test_centers_aligned_across_grids(self):
        # A centered blob must stay centered when the output grid is smaller.
        data = np.zeros((17, 17, 17), np.int32)
        data[7:10, 7:10, 7:10] = 1
        lv = Volume(data, (1.0, 1.0, 1.0), kind="label")
        out_geom = Geometry((9, 9, 9), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), np.eye(3))
        t = SpatialTransform(np.eye(4), np.zeros((9, 9, 9, 3), np.float32))
        out = apply_transform_label(lv, t, out_geom)
        expected = np.zeros((9, 9, 9), np.int32)
        expected[3:6, 3:6, 3:6] = 1
        assert np.array_equal(out.data, expected)


class TestSampleIntensities:
    def test_deterministic(self):
        lv = boxes_label_volume()
        cfg = small_cfg()
        a = sample_intensities(lv, 5, cfg)
        b = sample_intensities(lv, 5, cfg)
        assert np.array_equal(a.data, b.data)

    def test_region_moments_match_drawn_params(self):
        lv = boxes_label_volume((32, 32, 32))
        data = lv.data.copy()
        data[16:, :, :16][data[16:, :, :16] == 0] = 0  # keep plenty of background
        cfg = small_cfg()
        img = sample_intensities(lv, 11, cfg)
        params = draw_intensity_params(np.unique(lv.data), 11, cfg)
        for k, (mu, sd) in params.items():
            region = img.data[lv.data == k]
            n = region.size
            assert abs(region.mean() - mu) < 5 * sd / np.sqrt(n)
            assert region.std() == pytest.approx(sd, rel=0.15)

    def test_params_within_ranges(self):
        cfg = small_cfg()
        for s in range(20):
            params = draw_intensity_params([0, 1, 2, 30], s, cfg)
            for mu, sd in params.values():
                assert cfg.mean_range[0] <= mu <= cfg.mean_range[1]
                assert cfg.std_range[0] <= sd <= cfg.std_range[1]

    def test_label_order_does_not_change_params(self):
        cfg = small_cfg()
        a = draw_intensity_params([3, 1, 0], 2, cfg)
        b = draw_intensity_params([0, 1, 3], 2, cfg)
        assert a == b

    def test_rejects_image_input(self, rng):
        img = Volume(rng.normal(size=(4, 4, 4)))
        with pytest.raises(ContractError):
            sample_intensities(img, 0, small_cfg())


class TestApplyBiasField:
    def test_deterministic(self, rng):
        img = Volume(rng.uniform(1, 2, (9, 9, 9)).astype(np.float32))
        cfg = small_cfg(bias_grid=3)
        a = apply_bias_field(img, 4, cfg)
        b = apply_bias_field(img, 4, cfg)
        assert np.array_equal(a.data, b.data)

    def test_field_is_positive(self, rng):
        img = Volume(np.ones((9, 9, 9), np.float32))
        for s in range(10):
            out = apply_bias_field(img, s, small_cfg(bias_grid=3, bias_std=1.0))
            assert np.all(out.data > 0)

    def test_zero_std_is_identity(self, rng):
        img = Volume(rng.normal(size=(5, 5, 5)))
        out = apply_bias_field(img, 0, small_cfg(bias_std=0.0))
        assert np.array_equal(out.data, img.data)

    def test_log_field_is_trilinear_from_corner_values(self):
        # With a 3x3x3 lattice over a 9^3 grid the lattice nodes land on
        # voxels {0,4,8}. Reconstructing the full log field from those
        # 27 node values with explicit trilinear weights must reproduce it.
        img = Volume(np.ones((9, 9, 9), np.float32))
        out = apply_bias_field(img, 7, small_cfg(bias_grid=3, bias_std=0.7))
        log_field = np.log(out.data.astype(np.float64))
        nodes = log_field[::4, ::4, ::4]

        pos = np.arange(9) / 4.0
        i0 = np.minimum(pos.astype(int), 1)
        w = pos - i0
        recon = np.zeros((9, 9, 9))
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    wx = np.where(dx == 0, 1 - w, w)[:, None, None]
                    wy = np.where(dy == 0, 1 - w, w)[None, :, None]
                    wz = np.where(dz == 0, 1 - w, w)[None, None, :]
                    vals = nodes[np.ix_(i0 + dx, i0 + dy, i0 + dz)]
                    recon += wx * wy * wz * vals
        assert np.allclose(log_field, recon, atol=1e-4)

    def test_rejects_label_input(self):
        lv = boxes_label_volume()
        with pytest.raises(ContractError):
            apply_bias_field(lv, 0, small_cfg())


class TestSimulateResolution:
    def test_constant_image_unchanged(self):
        img = Volume(np.full((12, 12, 12), 3.25, np.float32), (1.5, 1.5, 1.5))
        out = simulate_resolution(img, 3, small_cfg())
        assert out.shape == img.shape
        assert np.allclose(out.data, 3.25, atol=1e-4)

    def test_deterministic(self, rng):
        img = Volume(rng.normal(size=(12, 12, 12)).astype(np.float32), (1.5, 1.5, 1.5))
        cfg = small_cfg()
        assert np.array_equal(
            simulate_resolution(img, 6, cfg).data, simulate_resolution(img, 6, cfg).data
        )

    def test_reduces_high_frequency_content(self, rng):
        idx = np.indices((16, 16, 16)).sum(axis=0)
        img = Volume(((idx % 2) * 2.0 - 1.0).astype(np.float32), (1.5, 1.5, 1.5))
        out = simulate_resolution(img, 1, small_cfg(spacing_range=(4.0, 6.0)))
        assert out.data.var() < 0.25 * img.data.var()

    def test_grid_preserved(self, rng):
        img = Volume(rng.normal(size=(10, 12, 14)).astype(np.float32), (1.0, 2.0, 3.0))
        out = simulate_resolution(img, 0, small_cfg())
        assert out.shape == img.shape
        assert out.spacing == img.spacing

    def test_rejects_label_input(self):
        with pytest.raises(ContractError):
            simulate_resolution(boxes_label_volume(), 0, small_cfg())


class TestNormalizeGamma:
    def test_endpoints_exact(self, rng):
        img = Volume(rng.normal(size=(8, 8, 8)).astype(np.float32))
        out = normalize_gamma(img, 2, small_cfg())
        assert out.data.min() == 0.0
        assert out.data.max() == 1.0

    def test_zero_std_is_pure_minmax(self, rng):
        data = rng.normal(size=(8, 8, 8)).astype(np.float32)
        img = Volume(data)
        out = normalize_gamma(img, 0, small_cfg(gamma_std=0.0))
        ref = (data - data.min()) / (data.max() - data.min())
        assert np.allclose(out.data, ref, atol=1e-7)

    def test_preserves_intensity_order(self, rng):
        data = rng.normal(size=(6, 6, 6)).astype(np.float32)
        out = normalize_gamma(Volume(data), 9, small_cfg(gamma_std=1.0))
        assert np.array_equal(np.argsort(data.ravel()), np.argsort(out.data.ravel()))

    def test_constant_image_rejected(self):
        img = Volume(np.full((4, 4, 4), 2.0, np.float32))
        with pytest.raises(DegenerateNormalizationError):
            normalize_gamma(img, 0, small_cfg())


class TestGenerateSample:
    def test_bit_identical_rerun(self):
        lv = boxes_label_volume()
        mapping = simple_mapping(3)
        cfg = small_cfg()
        i1, l1 = generate_sample(lv, mapping, 42, cfg)
        i2, l2 = generate_sample(lv, mapping, 42, cfg)
        assert np.array_equal(i1.data, i2.data)
        assert np.array_equal(l1.data, l2.data)

    def test_seed_changes_output(self):
        lv = boxes_label_volume()
        mapping = simple_mapping(3)
        cfg = small_cfg()
        i1, _ = generate_sample(lv, mapping, 1, cfg)
        i2, _ = generate_sample(lv, mapping, 2, cfg)
        assert not np.array_equal(i1.data, i2.data)

    def test_labels_are_target_ids_on_output_grid(self):
        lv = boxes_label_volume()
        mapping = simple_mapping(3)
        cfg = small_cfg(output_shape=(20, 20, 20))
        img, lbl = generate_sample(lv, mapping, 3, cfg)
        assert img.shape == (20, 20, 20)
        assert lbl.shape == (20, 20, 20)
        assert set(np.unique(lbl.data)) <= {0, 1, 2, 3}
        assert img.geometry.close_to(lbl.geometry)

    def test_identity_config_reproduces_input_labels(self):
        lv = boxes_label_volume()
        mapping = simple_mapping(3)
        img, lbl = generate_sample(lv, mapping, 0, identity_cfg())
        assert np.array_equal(lbl.data, lv.data)

    def test_mapping_must_cover_labels(self):
        lv = boxes_label_volume()
        mapping = simple_mapping(2)  # label 3 missing
        with pytest.raises(ContractError):
            generate_sample(lv, mapping, 0, small_cfg())

    def test_photometric_stages_leave_labels_alone(self):
        lv = boxes_label_volume()
        mapping = simple_mapping(3)
        base = small_cfg()
        quiet = small_cfg(bias_enabled=False, resolution_enabled=False, gamma_enabled=False)
        _, l1 = generate_sample(lv, mapping, 5, base)
        _, l2 = generate_sample(lv, mapping, 5, quiet)
        assert np.array_equal(l1.data, l2.data)

    def test_collapses_generation_ids(self):
        lv = boxes_label_volume()
        gen = {0: 0, 1: 1, 2: 1, 3: 2}
        mapping = LabelMapping(gen, {1: "a", 2: "b"}, 2)
        _, lbl = generate_sample(lv, mapping, 4, small_cfg())
        assert set(np.unique(lbl.data)) <= {0, 1, 2}


def make_variants(n: int) -> list[Variant]:
    variants = []
    for i in range(n):
        data = np.zeros((16, 16, 16), np.int32)
        data[2 + i : 8 + i, 2:8, 2:8] = 1
        lv = Volume(data, (1.5, 1.5, 1.5), kind="label")
        variants.append(
            Variant(f"s{i}", 3, 1, 0, False, lv, simple_mapping(1))
        )
    return variants


class TestSampleStream:
    def test_restart_addressing(self):
        stream = sample_stream(make_variants(3), small_cfg(), base_seed=10)
        seq = [stream.sample(i) for i in range(4)]
        assert np.array_equal(stream.sample(2)[0].data, seq[2][0].data)
        assert np.array_equal(stream.sample(2)[1].data, seq[2][1].data)

    def test_epoch_covers_every_variant_once(self):
        variants = make_variants(5)
        stream = sample_stream(variants, small_cfg(), base_seed=3)
        seen = [stream.variant_for(i).name for i in range(5)]
        assert sorted(seen) == sorted(v.name for v in variants)
        next_epoch = [stream.variant_for(i).name for i in range(5, 10)]
        assert next_epoch == seen

    def test_iteration_matches_indexing(self):
        stream = sample_stream(make_variants(2), small_cfg(), base_seed=1)
        it = iter(stream)
        for i in range(3):
            img, lbl = next(it)
            assert np.array_equal(img.data, stream.sample(i)[0].data)
            assert np.array_equal(lbl.data, stream.sample(i)[1].data)

    def test_generate_many_window(self):
        stream = sample_stream(make_variants(2), small_cfg(), base_seed=2)
        window = generate_many(stream, 3, 2)
        assert len(window) == 2
        assert np.array_equal(window[0][0].data, stream.sample(3)[0].data)
        assert np.array_equal(window[1][1].data, stream.sample(4)[1].data)

    def test_worker_count_does_not_change_results(self):
        stream = sample_stream(make_variants(2), small_cfg(), base_seed=8)
        seq = generate_many(stream, 0, 4, workers=1)
        par = generate_many(stream, 0, 4, workers=2)
        for (i1, l1), (i2, l2) in zip(seq, par):
            assert np.array_equal(i1.data, i2.data)
            assert np.array_equal(l1.data, l2.data)

    def test_negative_index_rejected(self):
        stream = sample_stream(make_variants(1), small_cfg(), base_seed=0)
        with pytest.raises(ContractError):
            stream.sample(-1)

    def test_empty_variants_rejected(self):
        with pytest.raises(ContractError):
            sample_stream([], small_cfg(), 0)
