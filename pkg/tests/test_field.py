import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from nerfaug.field import (FieldFormatError, FieldTruncatedError, FieldVersionError, VoxelRadianceField, activate,
                           load_field, save_field, trilinear_sample)
from oracles import corner_trilinear


def random_field(seed=0, res=(5, 4, 3), dtype=np.float64):
    rng = np.random.default_rng(seed)
    nx, ny, nz = res
    return VoxelRadianceField(res, (-0.3, -0.2, 0.1), (0.5, 0.4, 0.6),
                              rng.normal(size=(nz, ny, nx)).astype(dtype),
                              rng.normal(size=(nz, ny, nx, 3)).astype(dtype))


def test_validation():
    d = np.zeros((2, 2, 2))
    c = np.zeros((2, 2, 2, 3))
    with pytest.raises(ValueError):
        VoxelRadianceField((2, 2, 2), (0, 0, 0), (1, 0, 1), d, c)
    with pytest.raises(ValueError):
        VoxelRadianceField((1, 2, 2), (0, 0, 0), (1, 1, 1), d[:, :, :1], c[:, :, :1])
    bad = d.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        VoxelRadianceField((2, 2, 2), (0, 0, 0), (1, 1, 1), bad, c)
    with pytest.raises(ValueError):
        VoxelRadianceField((2, 2, 2), (0, 0, 0), (1, 1, 1), d, c[..., :2])


def test_filled_defaults():
    f = VoxelRadianceField.filled(4, (-1,) * 3, (1,) * 3)
    assert f.resolution == (4, 4, 4)
    assert np.all(f.raw_density == -2) and np.all(f.raw_rgb == 0)


# --- trilinear -----------------------------------------------------------------

def test_sample_at_voxel_center():
    f = random_field()
    for x, y, z in [(0, 0, 0), (4, 3, 2), (2, 1, 1)]:
        d, c = trilinear_sample(f, f.voxel_center(x, y, z))
        assert d == pytest.approx(f.raw_density[z, y, x], abs=1e-12)
        assert np.allclose(c, f.raw_rgb[z, y, x], atol=1e-12)


def test_midpoint_is_mean():
    f = random_field()
    p = 0.5 * (f.voxel_center(1, 2, 1) + f.voxel_center(2, 2, 1))
    d, c = trilinear_sample(f, p)
    assert d == pytest.approx(0.5 * (f.raw_density[1, 2, 1] + f.raw_density[1, 2, 2]), abs=1e-12)
    assert np.allclose(c, 0.5 * (f.raw_rgb[1, 2, 1] + f.raw_rgb[1, 2, 2]), atol=1e-12)


def test_matches_corner_oracle():
    f = random_field(1)
    rng = np.random.default_rng(2)
    pts = rng.uniform(f.bbox_min, f.bbox_max, size=(1000, 3))
    for p in pts:
        d, c = trilinear_sample(f, p)
        od, oc = corner_trilinear(f.raw_density, f.raw_rgb, f.bbox_min, f.bbox_max, p)
        assert abs(d - od) <= 1e-12
        assert np.max(np.abs(c - oc)) <= 1e-12


def test_outside_is_sentinel():
    f = random_field()
    d, c = trilinear_sample(f, [10, 0, 0])
    assert d == -np.inf and np.all(c == -np.inf)
    s = activate(d, c)
    assert s.sigma == 0.0 and np.all(s.rgb == 0.0)


def test_continuity():
    f = random_field(3)
    rng = np.random.default_rng(4)
    span = max(np.ptp(f.raw_density), np.ptp(f.raw_rgb))
    lip = 3 * span / np.min(f.voxel_size)  # generous bound on the gradient norm
    eps = 1e-4
    for _ in range(500):
        p = rng.uniform(f.bbox_min + eps, f.bbox_max - eps)
        q = p + rng.normal(size=3) * eps / np.sqrt(3)
        q = np.clip(q, f.bbox_min, f.bbox_max)
        dp, _ = trilinear_sample(f, p)
        dq, _ = trilinear_sample(f, q)
        assert abs(dp - dq) <= lip * np.linalg.norm(p - q) + 1e-12


# --- activation ----------------------------------------------------------------

def test_activation_examples():
    assert activate(0.0, np.zeros(3)).sigma == pytest.approx(np.log(2), abs=1e-15)
    assert np.all(activate(0.0, np.zeros(3)).rgb == 0.5)
    assert abs(activate(50.0, np.zeros(3)).sigma - 50.0) <= 1e-9


@given(st.floats(-1e6, 1e6), hnp.arrays(np.float64, 3, elements=st.floats(-1e6, 1e6)))
def test_activation_ranges(d, c):
    s = activate(d, c)
    assert s.sigma >= 0 and np.isfinite(s.sigma)
    assert np.all((s.rgb >= 0) & (s.rgb <= 1))


# --- serialization -------------------------------------------------------------

def test_round_trip_bit_exact(tmp_path):
    f = random_field(5, dtype=np.float32)
    save_field(f, tmp_path / "f.nfaf")
    g = load_field(tmp_path / "f.nfaf")
    assert g.resolution == f.resolution
    assert f.raw_density.tobytes() == g.raw_density.tobytes()
    assert f.raw_rgb.tobytes() == g.raw_rgb.tobytes()
    assert np.array_equal(f.bbox_min, g.bbox_min) and np.array_equal(f.bbox_max, g.bbox_max)


def test_layout_matches_format(tmp_path):
    f = random_field(6, res=(3, 2, 2), dtype=np.float32)
    save_field(f, tmp_path / "f.nfaf")
    data = (tmp_path / "f.nfaf").read_bytes()
    head = struct.unpack_from("<4sI3I6d", data)
    assert head[:5] == (b"NFAF", 1, 3, 2, 2)
    off = struct.calcsize("<4sI3I6d")
    x, y, z = 2, 1, 1
    i = (z * 2 + y) * 3 + x
    assert struct.unpack_from("<f", data, off + 4 * i)[0] == f.raw_density[z, y, x]
    rgb_off = off + 4 * 12
    assert struct.unpack_from("<3f", data, rgb_off + 12 * i) == tuple(f.raw_rgb[z, y, x])


@given(st.tuples(st.integers(2, 5), st.integers(2, 5), st.integers(2, 5)), st.integers(0, 1000))
def test_round_trip_property(tmp_path_factory, res, seed):
    f = random_field(seed, res=res, dtype=np.float32)
    p = tmp_path_factory.mktemp("rt") / "f.nfaf"
    save_field(f, p)
    g = load_field(p)
    assert f.raw_density.tobytes() == g.raw_density.tobytes()
    assert f.raw_rgb.tobytes() == g.raw_rgb.tobytes()


def test_bad_magic(tmp_path):
    save_field(random_field(dtype=np.float32), tmp_path / "f.nfaf")
    data = bytearray((tmp_path / "f.nfaf").read_bytes())
    data[:4] = b"XXXX"
    (tmp_path / "f.nfaf").write_bytes(bytes(data))
    with pytest.raises(FieldFormatError) as e:
        load_field(tmp_path / "f.nfaf")
    assert type(e.value) is FieldFormatError


def test_bad_version(tmp_path):
    save_field(random_field(dtype=np.float32), tmp_path / "f.nfaf")
    data = bytearray((tmp_path / "f.nfaf").read_bytes())
    data[4:8] = struct.pack("<I", 7)
    (tmp_path / "f.nfaf").write_bytes(bytes(data))
    with pytest.raises(FieldVersionError):
        load_field(tmp_path / "f.nfaf")


def test_truncated_mid_grid(tmp_path):
    save_field(random_field(dtype=np.float32), tmp_path / "f.nfaf")
    data = (tmp_path / "f.nfaf").read_bytes()
    (tmp_path / "f.nfaf").write_bytes(data[: len(data) // 2])
    with pytest.raises(FieldTruncatedError) as e:
        load_field(tmp_path / "f.nfaf")
    assert str(len(data)) in str(e.value) and str(len(data) // 2) in str(e.value)


def test_truncated_header(tmp_path):
    (tmp_path / "f.nfaf").write_bytes(b"NFAF\x01\x00")
    with pytest.raises(FieldTruncatedError):
        load_field(tmp_path / "f.nfaf")
