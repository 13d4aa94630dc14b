import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nfula.diagnostics import psnr
from nfula.exceptions import BadKernelError, WrongOperatorError
from nfula.operators import (IdentityOperator, RadonOperator, fbp_reconstruct, make_blur, make_mask, make_radon,
                             motion_blur_kernel, operator_norm, smallest_eigenvalue)
from nfula.phantoms import disk
from nfula.tensor import Rng, adjoint_mismatch, gaussian_vector


def adjoint_ok(op, n=100, seed=0):
    rng = Rng(seed, 9)
    worst = 0.0
    for _ in range(n):
        x = gaussian_vector(rng, op.input_shape)
        y = gaussian_vector(rng, op.output_shape)
        worst = max(worst, adjoint_mismatch(op.apply, op.adjoint, x, y))
    return worst


def test_motion_kernel_fifth_row():
    k = motion_blur_kernel(9)
    assert np.all(k[4] == 1 / 9)
    assert np.all(np.delete(k, 4, axis=0) == 0)


def test_blur_delta_kernel_is_identity():
    k = np.zeros((3, 3))
    k[1, 1] = 1.0
    op = make_blur((8, 8), k)
    x = gaussian_vector(Rng(1), (8, 8))
    assert np.allclose(op.apply(x), x, atol=1e-14)


def test_blur_rejects_even_kernel():
    with pytest.raises(BadKernelError):
        make_blur((8, 8), np.ones((2, 3)))


def test_blur_matches_direct_circular_convolution():
    rng = Rng(2)
    k = rng.uniform((3, 5))
    x = rng.uniform((7, 9))
    out = np.zeros_like(x)
    for i in range(7):
        for j in range(9):
            for a in range(3):
                for b in range(5):
                    out[i, j] += k[a, b] * x[(i - (a - 1)) % 7, (j - (b - 2)) % 9]
    assert np.allclose(make_blur(x.shape, k).apply(x), out, atol=1e-12)


def test_blur_adjoint_and_norm():
    op = make_blur((32, 32), motion_blur_kernel(9))
    assert adjoint_ok(op) <= 1e-10
    assert operator_norm(op) == pytest.approx(1.0, abs=1e-6)
    assert np.abs(op.transfer).max() == pytest.approx(1.0, abs=1e-12)


def test_mask_properties():
    op = make_mask((10, 10), 0.2, Rng(3))
    assert op.mask.sum() == 20
    x = gaussian_vector(Rng(4), (10, 10))
    assert np.array_equal(op.apply(x), op.adjoint(x))
    assert np.array_equal(op.apply(op.apply(x)), op.apply(x))
    assert operator_norm(op) == 1.0
    full = make_mask((4, 4), 1.0, Rng(0))
    assert np.array_equal(full.apply(x[:4, :4]), x[:4, :4])
    with pytest.raises(ValueError):
        make_mask((4, 4), 0.0, Rng(0))


def test_identity_norm():
    assert operator_norm(IdentityOperator((5,))) == pytest.approx(1.0, abs=1e-10)


def test_radon_central_chord():
    # radius 20 px disk of value 0.8, odd detector count so one bin sits on the centre
    img = disk(64, radius=20 / 32, value=0.8)
    op = RadonOperator(64, 4, 0.0, math.pi, n_detectors=91)
    sino = op.apply(img)
    mid = op.n_detectors // 2
    assert op.detectors[mid] == 0.0
    for a in range(4):
        assert sino[a, mid] == pytest.approx(0.8 * 40, rel=0.02)


def test_radon_adjoint_linearity_nonnegativity():
    op = make_radon(16, 12)
    assert adjoint_ok(op) <= 1e-10
    rng = Rng(5)
    x, z = gaussian_vector(rng, (2, 16, 16))
    a, b = 0.7, -1.3
    assert np.max(np.abs(op.apply(a * x + b * z) - (a * op.apply(x) + b * op.apply(z)))) <= 1e-12
    assert np.all(op.apply(rng.uniform((16, 16))) >= 0)


def test_radon_default_angles_and_detectors():
    op = make_radon(32, 60)
    assert op.n_detectors == 46
    assert op.angles[0] == pytest.approx(0.1 * math.pi)
    assert op.angles[-1] < 0.9 * math.pi


def test_radon_norm_matches_svd():
    op = make_radon(32, 60)
    sv = np.linalg.svd(op.to_dense(), compute_uv=False)[0]
    assert operator_norm(op) == pytest.approx(sv, abs=1e-4)


def test_fbp_examples():
    op = make_radon(16, 10)
    assert np.array_equal(fbp_reconstruct(op, np.zeros(op.output_shape)), np.zeros((16, 16)))
    with pytest.raises(WrongOperatorError):
        fbp_reconstruct(IdentityOperator((4, 4)), np.zeros((4, 4)))


def test_fbp_full_vs_limited_angle():
    x = disk(64)
    full = RadonOperator(64, 180, 0.0, math.pi)
    limited = RadonOperator(64, 144, 0.1 * math.pi, 0.9 * math.pi)
    p_full = psnr(fbp_reconstruct(full, full.apply(x)), x)
    p_lim = psnr(fbp_reconstruct(limited, limited.apply(x)), x)
    assert p_full >= 18.0
    assert p_lim < p_full


def test_smallest_eigenvalue():
    rng = Rng(6)
    a = gaussian_vector(rng, (6, 6))
    m = a @ a.T + 0.5 * np.eye(6)
    assert smallest_eigenvalue(m) == pytest.approx(np.linalg.eigvalsh(m)[0], rel=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(8, 14), st.integers(2, 8), st.integers(0, 1000))
def test_radon_adjoint_property(n, angles, seed):
    op = make_radon(n, angles)
    rng = Rng(seed)
    x = gaussian_vector(rng, op.input_shape)
    y = gaussian_vector(rng, op.output_shape)
    assert adjoint_mismatch(op.apply, op.adjoint, x, y) <= 1e-10
