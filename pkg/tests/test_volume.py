"""Volume construction, resampling, and crop/pad contracts."""

import numpy as np
import pytest

from synthabd import ContractError, ValidationError, Volume, crop_or_pad, resample


class TestVolumeConstruction:
    def test_image_cast_to_float32(self):
        v = Volume(np.ones((2, 2, 2), dtype=np.float64))
        assert v.data.dtype == np.float32
        assert v.kind == "image"

    def test_label_cast_to_int32(self):
        v = Volume(np.ones((2, 2, 2), dtype=np.uint8), kind="label")
        assert v.data.dtype == np.int32

    def test_label_rejects_fractional_values(self):
        data = np.full((2, 2, 2), 2.5)
        with pytest.raises(ValidationError):
            Volume(data, kind="label")

    def test_label_rejects_negative_values(self):
        with pytest.raises(ValidationError):
            Volume(np.full((2, 2, 2), -1, dtype=np.int32), kind="label")

    def test_integral_float_labels_accepted(self):
        v = Volume(np.full((2, 2, 2), 3.0), kind="label")
        assert v.data.dtype == np.int32
        assert int(v.data[0, 0, 0]) == 3

    def test_rejects_non_3d(self):
        with pytest.raises(ContractError):
            Volume(np.zeros((2, 2)))

    def test_rejects_bad_spacing(self):
        with pytest.raises(ContractError):
            Volume(np.zeros((2, 2, 2)), spacing=(0.0, 1.0, 1.0))

    def test_rejects_non_orthonormal_direction(self):
        d = np.eye(3)
        d[0, 1] = 0.2
        with pytest.raises(ValidationError):
            Volume(np.zeros((2, 2, 2)), direction=d)

    def test_geometry_affine_maps_voxel_to_mm(self):
        v = Volume(np.zeros((4, 4, 4)), spacing=(2, 3, 4), origin=(10, 20, 30))
        p = v.geometry.voxel_to_physical(np.array([1, 1, 1]))
        assert np.allclose(p, [12, 23, 34])
        back = v.geometry.physical_to_voxel(p)
        assert np.allclose(back, [1, 1, 1])


class TestResample:
    def test_constant_field_preserved(self, rng):
        v = Volume(np.full((9, 7, 5), 3.25), spacing=(1.0, 2.0, 3.0))
        out = resample(v, (1.7, 0.9, 2.2))
        assert np.allclose(out.data, 3.25, atol=1e-6)

    def test_factor_two_shape_law(self):
        v = Volume(np.zeros((100, 100, 100)), spacing=(3.0, 3.0, 3.0))
        out = resample(v, (1.5, 1.5, 1.5))
        assert out.shape == (200, 200, 200)
        assert out.spacing == (1.5, 1.5, 1.5)

    def test_shape_law_rounding_and_min_one(self):
        v = Volume(np.zeros((5, 4, 1)), spacing=(1.0, 1.0, 1.0))
        out = resample(v, (2.0, 3.0, 10.0))
        # round(5/2)=2 (banker's rounding), round(4/3)=1, max(1, round(1/10))=1
        assert out.shape == (round(5 / 2), round(4 / 3), 1)

    def test_label_requires_nearest(self, phantom):
        _, lv = phantom
        with pytest.raises(ContractError):
            resample(lv, (2.0, 2.0, 2.0), interp="trilinear")

    def test_nearest_never_invents_labels(self, rng):
        data = rng.integers(0, 7, size=(11, 13, 9))
        v = Volume(data, spacing=(1.0, 1.5, 2.0), kind="label")
        out = resample(v, (0.7, 2.1, 1.1), interp="nearest")
        assert set(np.unique(out.data)) <= set(np.unique(v.data))

    def test_origin_and_direction_unchanged(self):
        v = Volume(np.zeros((8, 8, 8)), spacing=(2, 2, 2), origin=(5, 6, 7))
        out = resample(v, (1, 1, 1))
        assert out.origin == (5.0, 6.0, 7.0)
        assert np.array_equal(out.direction, v.direction)

    def test_trilinear_matches_linear_profile(self):
        # a linear ramp is reproduced exactly by trilinear interpolation
        x = np.arange(10, dtype=np.float64)
        v = Volume(np.broadcast_to(x[:, None, None], (10, 6, 6)).copy(), spacing=(2, 2, 2))
        out = resample(v, (1, 2, 2))
        expect = np.minimum(np.arange(out.shape[0]) * 0.5, 9.0)
        assert np.allclose(out.data[:, 0, 0], expect, atol=1e-6)


class TestCropOrPad:
    def test_identity_at_target_shape(self, phantom):
        ct, _ = phantom
        out = crop_or_pad(ct, ct.shape)
        assert np.array_equal(out.data, ct.data)
        assert out.origin == ct.origin

    def test_symmetric_pad_centers_data(self):
        v = Volume(np.ones((4, 4, 4)), kind="label")
        out = crop_or_pad(v, (6, 6, 6))
        assert out.shape == (6, 6, 6)
        assert out.data.sum() == 4**3
        assert np.all(out.data[1:5, 1:5, 1:5] == 1)

    def test_odd_remainder_extra_goes_high(self):
        v = Volume(np.arange(5, dtype=np.float32).reshape(5, 1, 1))
        # crop 5 -> 2: low cut (5-2)//2 = 1, keep indices 1..2
        out = crop_or_pad(v, (2, 1, 1))
        assert list(out.data[:, 0, 0]) == [1.0, 2.0]
        # pad 1 -> 4 on middle axis: low pad (4-1)//2 = 1, extra high
        v2 = Volume(np.ones((1, 1, 1)))
        out2 = crop_or_pad(v2, (1, 4, 1), fill=9)
        assert list(out2.data[0, :, 0]) == [9.0, 1.0, 9.0, 9.0]

    def test_crop_then_pad_restores_interior(self, rng):
        data = rng.normal(size=(30, 30, 25))
        v = Volume(data, spacing=(1.5, 1.5, 1.5))
        cropped = crop_or_pad(v, (25, 25, 25))
        restored = crop_or_pad(cropped, (30, 30, 25))
        lo = (30 - 25) // 2
        inner = restored.data[lo : lo + 25, lo : lo + 25, :]
        assert np.array_equal(inner, cropped.data)

    def test_origin_tracks_retained_voxels(self):
        v = Volume(np.zeros((10, 10, 10)), spacing=(2, 2, 2), origin=(0, 0, 0))
        out = crop_or_pad(v, (6, 14, 10))
        # crop low cut = 2 voxels -> +4 mm; pad low = 2 voxels -> -4 mm
        assert out.origin == (4.0, -4.0, 0.0)
        # the physical position of a retained voxel is unchanged
        p_in = v.geometry.voxel_to_physical(np.array([5, 5, 5]))
        p_out = out.geometry.voxel_to_physical(np.array([3, 7, 5]))
        assert np.allclose(p_in, p_out)

    def test_idempotent(self, rng):
        v = Volume(rng.normal(size=(9, 9, 9)))
        once = crop_or_pad(v, (12, 7, 9))
        twice = crop_or_pad(once, (12, 7, 9))
        assert np.array_equal(once.data, twice.data)
        assert once.origin == twice.origin

    def test_label_fill_is_integer_zero(self):
        v = Volume(np.ones((2, 2, 2), dtype=np.int32), kind="label")
        out = crop_or_pad(v, (4, 4, 4))
        assert out.data.dtype == np.int32
        assert set(np.unique(out.data)) == {0, 1}
