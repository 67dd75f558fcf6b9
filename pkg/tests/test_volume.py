import json

import numpy as np
import pytest

from eigenpatch.errors import ArgumentError, DegenerateInputError, FormatError, SizeError
from eigenpatch.volume import (
    Volume3,
    downsample,
    extract_patch,
    load_volume,
    make_patch_grid,
    save_volume,
    standardize,
)


def ramp_volume(dims, spacing=(1.0, 1.0, 1.0)):
    n = dims[0] * dims[1] * dims[2]
    return Volume3(dims, spacing, np.arange(n, dtype=np.float32).reshape(dims, order="F"))


def trilinear_oracle(data, x, y, z):
    """Scalar trilinear interpolation; corners outside the grid contribute 0."""
    nx, ny, nz = data.shape
    x0, y0, z0 = int(np.floor(x)), int(np.floor(y)), int(np.floor(z))
    fx, fy, fz = x - x0, y - y0, z - z0
    acc = 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                xi, yi, zi = x0 + dx, y0 + dy, z0 + dz
                if 0 <= xi < nx and 0 <= yi < ny and 0 <= zi < nz:
                    w = ((fx if dx else 1 - fx) * (fy if dy else 1 - fy) * (fz if dz else 1 - fz))
                    acc += w * float(data[xi, yi, zi])
    return acc


class TestVolume3:
    def test_data_length_must_match_dims(self):
        with pytest.raises(SizeError):
            Volume3((2, 2, 2), (1, 1, 1), np.zeros(7, dtype=np.float32))

    def test_rejects_nonfinite(self):
        data = np.zeros((2, 2, 2), dtype=np.float32)
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            Volume3((2, 2, 2), (1, 1, 1), data)

    def test_rejects_bad_spacing(self):
        with pytest.raises(ArgumentError):
            Volume3((2, 2, 2), (1, 0, 1), np.zeros((2, 2, 2), dtype=np.float32))


class TestIO:
    def test_zero_volume(self, tmp_path):
        p = tmp_path / "v.evr"
        np.zeros(64, dtype="<f4").tofile(p)
        (tmp_path / "v.json").write_text(
            json.dumps({"dims": [4, 4, 4], "spacing": [1, 1, 1], "version": 1})
        )
        v = load_volume(p)
        assert v.dims == (4, 4, 4)
        assert np.all(v.data == 0.0)

    def test_length_mismatch(self, tmp_path):
        p = tmp_path / "v.evr"
        np.zeros(7, dtype="<f4").tofile(p)
        (tmp_path / "v.json").write_text(
            json.dumps({"dims": [2, 2, 2], "spacing": [1, 1, 1], "version": 1})
        )
        with pytest.raises(SizeError):
            load_volume(p)

    def test_missing_header(self, tmp_path):
        p = tmp_path / "v.evr"
        np.zeros(8, dtype="<f4").tofile(p)
        with pytest.raises(FormatError):
            load_volume(p)

    def test_garbled_header(self, tmp_path):
        p = tmp_path / "v.evr"
        np.zeros(8, dtype="<f4").tofile(p)
        (tmp_path / "v.json").write_text("{not json")
        with pytest.raises(FormatError):
            load_volume(p)

    def test_unknown_version_rejected(self, tmp_path):
        p = tmp_path / "v.evr"
        np.zeros(8, dtype="<f4").tofile(p)
        (tmp_path / "v.json").write_text(
            json.dumps({"dims": [2, 2, 2], "spacing": [1, 1, 1], "version": 2})
        )
        with pytest.raises(FormatError):
            load_volume(p)

    def test_nonfinite_payload(self, tmp_path):
        p = tmp_path / "v.evr"
        np.full(8, np.inf, dtype="<f4").tofile(p)
        (tmp_path / "v.json").write_text(
            json.dumps({"dims": [2, 2, 2], "spacing": [1, 1, 1], "version": 1})
        )
        with pytest.raises(ValueError):
            load_volume(p)

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        v = Volume3((5, 6, 7), (0.5, 0.7, 1.1),
                    rng.standard_normal((5, 6, 7)).astype(np.float32))
        save_volume(v, tmp_path / "r.evr")
        back = load_volume(tmp_path / "r.evr")
        assert back.dims == v.dims
        assert back.spacing == v.spacing
        assert np.array_equal(back.data, v.data)

    def test_x_fastest_on_disk(self, tmp_path):
        v = ramp_volume((2, 2, 2))
        save_volume(v, tmp_path / "o.evr")
        raw = np.fromfile(tmp_path / "o.evr", dtype="<f4")
        # index = x + nx*(y + ny*z)
        assert list(raw) == [0, 1, 2, 3, 4, 5, 6, 7]
        assert v.data[1, 0, 0] == 1.0
        assert v.data[0, 1, 0] == 2.0
        assert v.data[0, 0, 1] == 4.0


class TestDownsample:
    def test_constant_stays_constant(self):
        v = Volume3((8, 8, 8), (1, 1, 1), np.full((8, 8, 8), 5.0, np.float32))
        out = downsample(v, (3, 5, 8))
        assert np.allclose(out.data, 5.0, atol=1e-6)

    def test_identity_target(self):
        rng = np.random.default_rng(3)
        v = Volume3((6, 5, 4), (1, 1, 1), rng.standard_normal((6, 5, 4)).astype(np.float32))
        out = downsample(v, v.dims)
        assert np.allclose(out.data, v.data, atol=1e-6)

    def test_matches_pointwise_oracle(self):
        rng = np.random.default_rng(11)
        src = rng.standard_normal((16, 16, 16)).astype(np.float32)
        v = Volume3((16, 16, 16), (1, 1, 1), src)
        target = (8, 8, 8)
        out = downsample(v, target)
        for xi in (0, 3, 7):
            for yi in (0, 4, 7):
                for zi in (1, 5, 7):
                    sx = xi * 15 / 7
                    sy = yi * 15 / 7
                    sz = zi * 15 / 7
                    assert out.data[xi, yi, zi] == pytest.approx(
                        trilinear_oracle(src, sx, sy, sz), abs=1e-5
                    )

    def test_spacing_rescaled(self):
        v = Volume3((8, 8, 8), (1.0, 2.0, 3.0), np.zeros((8, 8, 8), np.float32))
        out = downsample(v, (4, 2, 8))
        assert out.spacing == pytest.approx((2.0, 8.0, 3.0))

    def test_target_too_large(self):
        v = ramp_volume((4, 4, 4))
        with pytest.raises(ArgumentError):
            downsample(v, (5, 4, 4))


class TestStandardize:
    def test_small_ramp(self):
        v = ramp_volume((2, 2, 2))
        out = standardize(v)
        assert abs(float(out.data.mean(dtype=np.float64))) < 1e-6
        assert abs(float(out.data.std(dtype=np.float64)) - 1.0) < 1e-6

    def test_constant_rejected(self):
        v = Volume3((2, 2, 2), (1, 1, 1), np.full((2, 2, 2), 3.0, np.float32))
        with pytest.raises(DegenerateInputError):
            standardize(v)

    def test_two_pass_oracle(self):
        rng = np.random.default_rng(5)
        data = (rng.standard_normal((9, 8, 7)) * 40 + 100).astype(np.float32)
        v = Volume3((9, 8, 7), (1, 1, 1), data)
        out = standardize(v)
        # independent two-pass population statistics
        mu = sum(float(x) for x in data.reshape(-1)) / data.size
        var = sum((float(x) - mu) ** 2 for x in data.reshape(-1)) / data.size
        expected = (data.astype(np.float64) - mu) / np.sqrt(var)
        assert np.allclose(out.data, expected, atol=1e-5)

    def test_idempotent(self):
        rng = np.random.default_rng(9)
        v = Volume3((6, 6, 6), (1, 1, 1),
                    (rng.standard_normal((6, 6, 6)) * 7 + 3).astype(np.float32))
        once = standardize(v)
        twice = standardize(once)
        assert np.allclose(once.data, twice.data, atol=1e-6)


class TestPatchGrid:
    def test_128_side_32_gives_64_patches(self):
        grid = make_patch_grid((128, 128, 128), 32)
        assert grid.n_patches == 64

    def test_128_side_28_gives_64_patches(self):
        # floor(128/28) = 4 per axis
        grid = make_patch_grid((128, 128, 128), 28)
        assert grid.n_patches == 4 * 4 * 4

    def test_whole_volume_patch(self):
        grid = make_patch_grid((10, 10, 10), 10)
        assert grid.n_patches == 1
        assert grid.patch_origins[0] == (0, 0, 0)

    def test_side_too_large(self):
        with pytest.raises(ArgumentError):
            make_patch_grid((8, 8, 4), 5)

    def test_patch_count_matches_integer_division(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            dims = tuple(int(d) for d in rng.integers(4, 40, 3))
            s = int(rng.integers(1, min(dims) + 1))
            grid = make_patch_grid(dims, s)
            assert grid.n_patches == (dims[0] // s) * (dims[1] // s) * (dims[2] // s)

    def test_patches_fit_inside_volume(self):
        grid = make_patch_grid((13, 9, 21), 4)
        for ox, oy, oz in grid.patch_origins:
            assert ox + 4 <= 13 and oy + 4 <= 9 and oz + 4 <= 21


class TestExtractPatch:
    def test_identity_patch(self):
        v = ramp_volume((2, 2, 2))
        grid = make_patch_grid((2, 2, 2), 2)
        assert list(extract_patch(v, grid, 0)) == [0, 1, 2, 3, 4, 5, 6, 7]

    def test_matches_triple_loop(self):
        v = ramp_volume((4, 4, 4))
        grid = make_patch_grid((4, 4, 4), 2)
        for index in range(grid.n_patches):
            got = extract_patch(v, grid, index)
            ox, oy, oz = grid.patch_origins[index]
            expected = []
            for z in range(2):
                for y in range(2):
                    for x in range(2):
                        expected.append(float(v.data[ox + x, oy + y, oz + z]))
            assert list(got) == expected

    def test_out_of_range_index(self):
        v = ramp_volume((4, 4, 4))
        grid = make_patch_grid((4, 4, 4), 2)
        with pytest.raises(ArgumentError):
            extract_patch(v, grid, grid.n_patches)

    def test_patches_cover_subbox_once(self):
        dims = (7, 6, 9)
        v = ramp_volume(dims)
        grid = make_patch_grid(dims, 3)
        counts = np.zeros(dims, dtype=int)
        for index in range(grid.n_patches):
            ox, oy, oz = grid.patch_origins[index]
            counts[ox : ox + 3, oy : oy + 3, oz : oz + 3] += 1
        sub = counts[: (7 // 3) * 3, : (6 // 3) * 3, : (9 // 3) * 3]
        assert np.all(sub == 1)
        assert counts.sum() == sub.size
