import math

import numpy as np
import pytest

from nfula.diagnostics import (DiagnosticsReport, PSNR_CAP, acf, chain_acf_bands, gaussian_tv, haar_dwt2,
                               haar_idwt2, psnr, verify_finite_moments, verify_well_posedness,
                               wasserstein1_1d)
from nfula.exceptions import BadShapeError, DegenerateSeriesError, NonConvergenceError, ShapeMismatchError
from nfula.priors import GaussianPrior
from nfula.samplers import SampleStore
from nfula.tensor import Rng, gaussian_vector


def test_psnr_examples():
    x = Rng(0).uniform((8, 8))
    assert psnr(x, x) == PSNR_CAP == 200.0
    ref = np.zeros(100)
    assert psnr(np.full(100, 0.1), ref) == pytest.approx(20.0)
    assert psnr(np.full(100, 0.2), ref, max_val=2.0) == pytest.approx(20.0)
    with pytest.raises(ShapeMismatchError):
        psnr(np.zeros(3), np.zeros(4))


def test_acf_hand_computation():
    # mean 1.8, centered [-.8, -.8, 3.2, -.8, -.8], sum of squares 12.8
    w = acf([1, 1, 5, 1, 1], 4).values
    assert w[0] == 1.0
    assert w[1] == pytest.approx(-3.84 / 12.8, abs=1e-14)
    assert w[2] == pytest.approx(-4.48 / 12.8, abs=1e-14)
    assert w[3] == pytest.approx(1.28 / 12.8, abs=1e-14)
    assert w[4] == pytest.approx(0.64 / 12.8, abs=1e-14)


def test_acf_matches_direct_sum():
    y = gaussian_vector(Rng(1), 300).cumsum()
    c = y - y.mean()
    direct = [np.dot(c[l:], c[:c.size - l]) / np.dot(c, c) for l in range(21)]
    assert np.allclose(acf(y, 20).values, direct, atol=1e-12)


def test_acf_white_and_ar1():
    rng = Rng(2)
    w = acf(gaussian_vector(rng, 100_000), 50).values
    assert np.max(np.abs(w[1:])) <= 0.02
    noise = gaussian_vector(rng, 100_000)
    ar = np.empty_like(noise)
    ar[0] = noise[0] / math.sqrt(1 - 0.81)
    for t in range(1, ar.size):
        ar[t] = 0.9 * ar[t - 1] + noise[t]
    assert acf(ar, 5).values[5] == pytest.approx(0.59, abs=0.03)


def test_acf_errors():
    with pytest.raises(DegenerateSeriesError):
        acf(np.ones(10), 3)
    with pytest.raises(ValueError):
        acf(np.arange(5.0), 5)
    with pytest.raises(ValueError):
        acf(np.arange(5.0), 0)


def test_haar_constant_and_impulse():
    yl, yh = haar_dwt2(np.full((4, 4), 3.0))
    assert np.all(yh[0] == 0) and np.allclose(yl, 6.0)
    img = np.zeros((4, 4))
    img[1, 1] = 1.0
    yl, yh = haar_dwt2(img)
    expect_yl = np.zeros((2, 2))
    expect_yl[0, 0] = 0.5
    assert np.allclose(yl, expect_yl)
    assert np.allclose(yh[0][:, 0, 0], [-0.5, -0.5, 0.5])
    assert np.count_nonzero(yh[0]) == 3


def test_haar_parseval_and_inverse():
    img = gaussian_vector(Rng(3), (16, 8))
    for levels in (1, 2, 3):
        yl, yh = haar_dwt2(img, levels)
        energy = np.sum(yl ** 2) + sum(np.sum(b ** 2) for b in yh)
        assert abs(energy - np.sum(img ** 2)) <= 1e-10
        assert np.max(np.abs(haar_idwt2(yl, yh) - img)) <= 1e-10
    with pytest.raises(BadShapeError):
        haar_dwt2(np.zeros((6, 6)), 2)


def test_chain_acf_bands_white_noise():
    samples = gaussian_vector(Rng(4), (100_000, 4, 4))
    bands = chain_acf_bands(samples, n_dims_per_band=4, max_lag=20, rng=Rng(5))
    assert [b.band for b in bands] == ["YL", "YH"]
    for b in bands:
        assert b.skipped == 0 and len(b.curves) == 4
        assert np.max(np.abs(b.envelope_max[1:])) <= 0.02 and np.max(np.abs(b.envelope_min[1:])) <= 0.02


def test_chain_acf_bands_identical_images_skipped():
    store = SampleStore()
    for _ in range(30):
        store.append(np.full((4, 4), 0.5))
    bands = chain_acf_bands(store, n_dims_per_band=3, max_lag=5)
    for b in bands:
        assert b.skipped == 3 and b.curves == [] and np.all(np.isnan(b.envelope_median))


def test_w1_examples():
    a = gaussian_vector(Rng(6), 500)
    assert wasserstein1_1d(a, a) == 0.0
    assert wasserstein1_1d(np.zeros(10), np.full(7, 2.5)) == pytest.approx(2.5)
    rng = Rng(7)
    assert wasserstein1_1d(gaussian_vector(rng, 100_000), 1 + gaussian_vector(rng, 100_000)) == \
        pytest.approx(1.0, abs=0.02)
    with pytest.raises(ValueError):
        wasserstein1_1d([], [1.0])


def test_w1_metric_properties():
    rng = Rng(8)
    for _ in range(20):
        a, b, c = (gaussian_vector(rng, 200) * rng.uniform() + rng.uniform() for _ in range(3))
        assert wasserstein1_1d(a, b) == wasserstein1_1d(b, a)
        assert wasserstein1_1d(a, c) <= wasserstein1_1d(a, b) + wasserstein1_1d(b, c) + 1e-6


def test_finite_moments_examples():
    r = verify_finite_moments(1.0, (0.0, 0.0), k_max=4)
    assert r.passed
    assert r.measured["moments"][0] == pytest.approx(math.sqrt(2 * math.pi), abs=1e-8)
    assert r.measured["moments"][2] == pytest.approx(math.sqrt(2 * math.pi), abs=1e-8)
    r = verify_finite_moments(1.0, (0.0, 1.0), k_max=4)
    assert r.measured["moments"][0] == pytest.approx(1 + math.sqrt(2 * math.pi), abs=1e-6)
    assert verify_finite_moments(0.05, (-1.0, 2.0), k_max=4).passed


def test_finite_moments_nonconvergence():
    with pytest.raises(NonConvergenceError):
        verify_finite_moments(1e6, (0.0, 1.0), k_max=1, max_radius=100.0)
    with pytest.raises(ValueError):
        verify_finite_moments(0.0, (0.0, 1.0))


def test_well_posedness_gaussian():
    v, sigma = 0.5, 0.7
    prior = GaussianPrior(np.zeros(1), np.array([[v]]))
    post_var = 1 / (1 / v + 1 / sigma ** 2)
    gain = post_var / sigma ** 2
    pairs = [(0.3, 0.3), (0.3, 0.4), (0.3, 0.31), (0.3, 0.301)]
    r = verify_well_posedness(prior, sigma, pairs)
    assert r.measured["tv"][0] == pytest.approx(0.0, abs=1e-12)
    for (y1, y2), tv in zip(pairs[1:], r.measured["tv"][1:]):
        assert abs(tv - gaussian_tv(gain * y1, gain * y2, math.sqrt(post_var))) <= 1e-6
    s = np.asarray(r.measured["slopes"])
    assert s.max() / s.min() - 1 <= 0.05 and r.passed


def test_report_csv_round_trip(tmp_path):
    rep = DiagnosticsReport()
    rep.add("psnr", 23.5)
    rep.add("acf", 0.123456789012345678, band="YH", dim=7, lag=3)
    path = tmp_path / "r.csv"
    rep.to_csv(path)
    assert path.read_text().splitlines()[0] == "metric,band,dim,lag,value"
    assert DiagnosticsReport.from_csv(path).rows == rep.rows
