import math
import struct

import numpy as np
import pytest

import specgeo


def test_mp_support_and_cdf():
    lo, hi = specgeo.mp_support(2.0, 0.25)
    assert lo == pytest.approx(2.0 * 0.25)
    assert hi == pytest.approx(2.0 * 2.25)
    assert specgeo.mp_cdf(lo, 2.0, 0.25) == pytest.approx(0.0, abs=1e-12)
    assert specgeo.mp_cdf(hi, 2.0, 0.25) == pytest.approx(1.0, abs=1e-12)
    mid = specgeo.mp_quantile(0.5, 2.0, 0.25)
    assert specgeo.mp_cdf(mid, 2.0, 0.25) == pytest.approx(0.5, abs=1e-6)


def test_bbp_and_tw():
    assert specgeo.bbp_threshold(1.0, 0.25) == pytest.approx(1.5)
    ell = 3.0
    assert specgeo.bbp_outlier_location(ell, 1.0, 0.25) == pytest.approx(ell * (1 + 0.25 / (ell - 1)))
    assert 0.0 < specgeo.tw_tail_probability(0.0) < 1.0
    assert specgeo.tw_tail_probability(-6.0) > specgeo.tw_tail_probability(2.0)


def test_fit_recovers_noise_level():
    rng = np.random.default_rng(7)
    n, d = 2000, 500
    x = rng.normal(scale=math.sqrt(1.7), size=(n, d))
    eig = np.linalg.eigvalsh(x.T @ x / n)[::-1]
    fit = specgeo.fit_mp(eig.tolist(), n, d)
    assert fit["sigma2"] == pytest.approx(1.7, rel=0.05)
    assert fit["q"] == pytest.approx(0.25)
    assert len(specgeo.select_outliers(eig.tolist(), n, d, fit["sigma2"])) <= 3


def test_descriptor_shape_and_names():
    rng = np.random.default_rng(1)
    window = rng.normal(size=(32, 12))
    v = specgeo.descriptor(window)
    names = specgeo.feature_names()
    assert len(v) == specgeo.FEATURE_COUNT == len(names) == 22
    assert all(math.isfinite(x) for x in v)
    eig = specgeo.eigenspectrum(window)
    assert sum(eig) == pytest.approx(np.trace(window.T @ window / 32), rel=1e-10)
    assert v[names.index("trace")] == pytest.approx(sum(eig), rel=1e-10)


def test_descriptor_series_matches_windows():
    rng = np.random.default_rng(2)
    rows = rng.normal(size=(20, 6))
    steps, feats = specgeo.descriptor_series(rows, window=8, stride=3)
    assert list(steps) == [8, 11, 14, 17, 20]
    assert feats.shape == (5, 22)
    assert specgeo.expected_window_count(20, 8, 3) == 5
    np.testing.assert_allclose(feats[1], specgeo.descriptor(rows[3:11]), rtol=1e-12, atol=1e-12)


def test_container_bytes_match_hand_packing(tmp_path):
    rows = np.arange(6, dtype=np.float32).reshape(3, 2)
    hand = struct.pack("<4sHHII", b"SPAC", 1, 1, 3, 2) + rows.astype("<f4").tobytes()
    assert specgeo.encode_container(rows, structured=True) == hand
    back, structured = specgeo.decode_container(hand)
    assert structured
    np.testing.assert_array_equal(back, rows)
    path = tmp_path / "x.spac"
    specgeo.write_container(str(path), rows)
    again, structured = specgeo.read_container(str(path))
    assert not structured
    np.testing.assert_array_equal(again, rows)


def test_frame_layout():
    frame = specgeo.encode_frame([1.0, -2.0])
    assert frame == struct.pack("<Iff", 8, 1.0, -2.0)


def test_errors_are_python_exceptions():
    with pytest.raises(specgeo.FormatError, match="offset"):
        specgeo.decode_container(b"SPAC\x01\x00")
    assert issubclass(specgeo.FormatError, specgeo.DataError)
    assert issubclass(specgeo.DataError, ValueError)
    with pytest.raises(specgeo.DataError):
        specgeo.read_container("/nonexistent/specgeo.spac")
    with pytest.raises(ValueError):
        specgeo.mp_support(-1.0, 0.5)


def test_auroc():
    assert specgeo.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)
