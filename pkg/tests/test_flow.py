import math

import numpy as np
import pytest

from conftest import fd_grad, rel_err
from nfula.exceptions import NonFiniteError, SingularScaleError
from nfula.flow import (ActNorm, AdditiveCoupling, AffineCoupling, FlowModel, NormalizingFlowDensity, Permutation,
                        build_flow, certify_lipschitz, empirical_hessian_bound, flow_forward, flow_inverse,
                        grad_log_density, log_density, nll_loss_and_grad, train_flow)
from nfula.io import checkpoint_from_bytes, checkpoint_to_bytes
from nfula.tensor import Rng, gaussian_vector

LOG_2PI = math.log(2 * math.pi)
MEAN = np.array([0.5, 0.4])
COV = np.array([[0.04, 0.018], [0.018, 0.03]])


def gaussian_data(n, seed):
    z = gaussian_vector(Rng(seed, 1), (n, 2))
    return MEAN + z @ np.linalg.cholesky(COV).T


def random_model(d=4, coupling="additive", seed=0, init=True):
    model = build_flow(d, 3, coupling, permutations=True, hidden=16, rng=Rng(seed, 5))
    if init:
        # nontrivial ActNorm so gradients see a real scale and shift
        model.layers[0].initialize(0.5 + 0.3 * gaussian_vector(Rng(seed, 6), (64, d)))
    return model


@pytest.fixture(scope="module")
def trained_gaussian_flow():
    data = gaussian_data(10_000, 0)
    model = build_flow(2, 2, "additive", rng=Rng(0, 2))
    trace = train_flow(model, data, 200, batch_size=256, lr=1e-3, jitter_sigma=0.0, seed=0)
    return model, trace, data


def grid_density(model, grid):
    """Density on grid x grid, evaluated one row at a time to bound memory."""
    return np.stack([np.exp(model.log_density(np.stack([np.full_like(grid, g), grid], axis=1))) for g in grid])


# analytic examples ---------------------------------------------------------

def test_identity_flow():
    m = FlowModel(2)
    z, ld = flow_inverse(m, np.array([0.3, -1.0]))
    assert np.array_equal(z, [0.3, -1.0]) and ld == 0.0
    assert np.array_equal(flow_forward(m, np.zeros(2)), np.zeros(2))
    assert log_density(m, np.zeros(2)) == pytest.approx(-LOG_2PI, abs=1e-12)
    assert log_density(m, np.zeros(2)) == pytest.approx(-1.837877, abs=1e-6)
    x = np.array([0.7, -2.0])
    assert np.allclose(grad_log_density(m, x), -x)


def test_actnorm_examples():
    m = FlowModel(1, [ActNorm(scale=[2.0], bias=[0.0])])
    z, ld = flow_inverse(m, np.array([3.0]))
    assert z[0] == 6.0 and ld == pytest.approx(math.log(2))
    assert log_density(m, np.array([0.0])) == pytest.approx(-0.225791, abs=1e-6)
    # -s * (s * x + b) = -2 * 2 = -4
    assert grad_log_density(m, np.array([1.0]))[0] == pytest.approx(-4.0)
    m2 = FlowModel(1, [ActNorm(scale=[2.0], bias=[1.0])])
    assert flow_forward(m2, np.array([5.0]))[0] == pytest.approx(2.0)


def test_actnorm_singular_scale():
    m = FlowModel(1, [ActNorm(scale=[1e-13], bias=[0.0])])
    with pytest.raises(SingularScaleError):
        flow_forward(m, np.array([1.0]))


def test_nll_examples():
    loss, _ = nll_loss_and_grad(FlowModel(2), np.zeros((1, 2)))
    assert loss == pytest.approx(LOG_2PI)
    m = FlowModel(1, [ActNorm(scale=[1.0], bias=[0.0])])
    _, grads = nll_loss_and_grad(m, np.zeros((1, 1)))
    assert grads["layer000/actnorm/scale"][0] == pytest.approx(-1.0)


def test_nonfinite_detected():
    m = FlowModel(1, [ActNorm(scale=[1e308], bias=[0.0])])
    with pytest.raises(NonFiniteError):
        flow_inverse(m, np.array([1e10]))


# invariants --------------------------------------------------------------

@pytest.mark.parametrize("coupling", ["additive", "affine"])
def test_roundtrip(coupling):
    m = random_model(6, coupling)
    x = 3.0 * gaussian_vector(Rng(1), (50, 6))
    z, _ = m.inverse(x)
    back = m.forward(z)
    assert np.max(np.linalg.norm(back - x, axis=1) / (np.linalg.norm(x, axis=1) + 1)) <= 1e-8
    zz = gaussian_vector(Rng(2), (50, 6))
    assert np.max(np.abs(m.inverse(m.forward(zz))[0] - zz)) <= 1e-8


def test_log_density_both_directions_agree():
    m = random_model(4)
    z = gaussian_vector(Rng(3), (20, 4))
    x = m.forward(z)
    via_z = -0.5 * np.sum(z * z, axis=1) - 2 * LOG_2PI + m.actnorm_logdet()
    assert np.max(np.abs(m.log_density(x) - via_z)) <= 1e-8


def test_volume_preservation_without_actnorm():
    m = build_flow(4, 4, "additive", actnorm=False, permutations=True, rng=Rng(4))
    _, ld = m.inverse(gaussian_vector(Rng(5), (30, 4)))
    assert np.all(ld == 0.0)


@pytest.mark.parametrize("coupling", ["additive", "affine"])
def test_grad_log_density_finite_differences(coupling):
    m = random_model(4, coupling, seed=1)
    rng = Rng(7)
    for _ in range(20):
        x = gaussian_vector(rng, 4)
        g = m.grad_log_density(x)
        fd = fd_grad(lambda v: m.log_density(v), x, h=1e-5)
        assert rel_err(g, fd, floor=1e-3) <= 1e-4


@pytest.mark.parametrize("coupling", ["additive", "affine"])
def test_nll_parameter_gradients_finite_differences(coupling):
    m = random_model(4, coupling, seed=2)
    batch = gaussian_vector(Rng(8), (32, 4))
    _, grads = m.nll_loss_and_grad(batch)
    params = m.parameters()
    assert set(grads) == set(params)
    for name, arr in params.items():
        g_fd = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gf = g_fd.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + 1e-6
            lp = m.nll_loss_and_grad(batch)[0]
            flat[i] = old - 1e-6
            lm = m.nll_loss_and_grad(batch)[0]
            flat[i] = old
            gf[i] = (lp - lm) / 2e-6
        assert rel_err(grads[name], g_fd, floor=1e-4) <= 1e-4, name


def test_normalization_2d_quadrature():
    from nfula.tensor import quadrature_integrate_1d

    m = random_model(2, seed=3)
    grid = np.linspace(-10, 10, 1201)
    dens = grid_density(m, grid)
    inner = np.array([quadrature_integrate_1d(lambda _: row, -10, 10, grid.size) for row in dens])
    total = quadrature_integrate_1d(lambda _: inner, -10, 10, grid.size)
    assert total == pytest.approx(1.0, abs=1e-3)


def test_trained_normalization(trained_gaussian_flow):
    from nfula.tensor import quadrature_integrate_1d

    m, _, _ = trained_gaussian_flow
    grid = np.linspace(-10, 10, 1201)
    dens = grid_density(m, grid)
    inner = np.array([quadrature_integrate_1d(lambda _: row, -10, 10, grid.size) for row in dens])
    total = quadrature_integrate_1d(lambda _: inner, -10, 10, grid.size)
    assert 0.999 <= total <= 1.001


def test_upper_bounded_log_density():
    m = random_model(3, seed=4)
    rng = Rng(9)
    x = gaussian_vector(rng, (10_000, 3))
    x *= (1000.0 * rng.uniform(10_000) / np.linalg.norm(x, axis=1))[:, None]
    bound = -1.5 * LOG_2PI + m.actnorm_logdet()
    assert np.all(m.log_density(x) <= bound)


# training ----------------------------------------------------------------

def test_zero_learning_rate_keeps_parameters():
    data = gaussian_data(500, 1)
    m = build_flow(2, 2, rng=Rng(1))
    m.layers[0].initialize(data[:256])
    before = {k: v.copy() for k, v in m.parameters().items()}
    trace = train_flow(m, data, 4, lr=0.0, jitter_sigma=0.0)
    for k, v in m.parameters().items():
        assert np.array_equal(v, before[k])
    assert len(set(trace.epoch_losses)) == 1


def test_gaussian_training_reaches_entropy(trained_gaussian_flow):
    m, trace, _ = trained_gaussian_flow
    held = gaussian_data(20_000, 99)
    nll = -float(np.mean(m.log_density(held)))
    entropy = 0.5 * math.log(np.linalg.det(2 * math.pi * math.e * COV))
    assert abs(nll - entropy) <= 0.1
    tm = trace.trailing_means(5)
    assert tm[-1] < tm[0]


def test_mixture_beats_single_gaussian():
    rng = Rng(11)
    n = 6000
    labels = rng.uniform(n) < 0.5
    centers = np.where(labels[:, None], [0.25, 0.3], [0.75, 0.7])
    data = centers + 0.06 * gaussian_vector(rng, (n, 2))
    m = build_flow(2, 4, "additive", hidden=64, rng=Rng(12))
    trace = train_flow(m, data, 60, lr=2e-3, jitter_sigma=0.0, seed=1)
    mu = data.mean(axis=0)
    cov = np.cov(data, rowvar=False, bias=True)
    gauss_nll = 0.5 * math.log(np.linalg.det(2 * math.pi * cov)) + 1.0
    nll = -float(np.mean(m.log_density(data)))
    assert nll <= gauss_nll
    tm = trace.trailing_means(5)
    assert tm[-1] < tm[0]


def test_sampling_matches_training_moments(trained_gaussian_flow):
    m, _, data = trained_gaussian_flow
    s = m.sample(10_000, Rng(3, 3))
    n = s.shape[0]
    se_mean = np.sqrt(np.diag(COV) / n)
    assert np.all(np.abs(s.mean(axis=0) - data.mean(axis=0)) <= 3 * np.sqrt(2) * se_mean)
    cov_s = np.cov(s, rowvar=False)
    cov_d = np.cov(data, rowvar=False)
    # sd of a covariance entry: sqrt((C_ii C_jj + C_ij^2) / n), two samples
    se_cov = np.sqrt((np.outer(np.diag(COV), np.diag(COV)) + COV ** 2) / n) * np.sqrt(2)
    assert np.all(np.abs(cov_s - cov_d) <= 3 * se_cov)


def test_training_nonfinite_reports_step():
    data = np.array([[0.0, 0.0], [1e300, 1e300]])
    m = build_flow(2, 1, actnorm=False, rng=Rng(0))
    with pytest.raises(NonFiniteError) as exc:
        train_flow(m, data, 1, batch_size=2, jitter_sigma=0.0)
    assert exc.value.step == 0


def test_training_deterministic():
    data = gaussian_data(800, 2)
    out = []
    for _ in range(2):
        m = build_flow(2, 2, rng=Rng(4))
        train_flow(m, data, 3, seed=5)
        out.append(checkpoint_to_bytes(m.to_entries()))
    assert out[0] == out[1]


def test_checkpoint_roundtrip_preserves_density():
    m = random_model(4, "affine", seed=5)
    back = FlowModel.from_entries(checkpoint_from_bytes(checkpoint_to_bytes(m.to_entries())))
    x = gaussian_vector(Rng(6), (10, 4))
    assert np.array_equal(back.log_density(x), m.log_density(x))
    assert certify_lipschitz(back).certified is False


# certification -----------------------------------------------------------

def test_certification_rules():
    assert certify_lipschitz(FlowModel(3)).certified
    assert certify_lipschitz(random_model(4, "additive")).certified
    assert not certify_lipschitz(random_model(4, "affine")).certified
    tanh = build_flow(4, 2, activation="tanh", rng=Rng(0))
    assert not certify_lipschitz(tanh).certified


def test_hessian_bound_identity_and_actnorm():
    probes = gaussian_vector(Rng(1), (3, 2))
    assert empirical_hessian_bound(FlowModel(2), probes) == pytest.approx(1.0, abs=1e-6)
    m = FlowModel(1, [ActNorm(scale=[3.0], bias=[0.2])])
    assert empirical_hessian_bound(m, np.array([[0.4], [-2.0]])) == pytest.approx(9.0, abs=1e-4)


@pytest.mark.xfail(reason="ReLU flow curvature is heavy-tailed over [0,1]^2 (median ~64, 99th pct ~136, "
                          "max ~458), so the max over 50 probes varies by more than 5% between seeds",
                   strict=False)
def test_hessian_bound_reproducible_across_seeds(trained_gaussian_flow):
    m, _, _ = trained_gaussian_flow
    a = empirical_hessian_bound(m, Rng(1).uniform((50, 2)))
    b = empirical_hessian_bound(m, Rng(2).uniform((50, 2)))
    assert abs(a - b) <= 0.05 * max(a, b)


def test_hessian_bound_radius_stable_for_certified():
    m = random_model(3, seed=7)
    u = 2.0 * Rng(3).uniform((30, 3)) - 1.0
    b10 = empirical_hessian_bound(m, 10 * u, fd_step=1e-6)
    b1000 = empirical_hessian_bound(m, 1000 * u, fd_step=1e-6)
    assert b1000 / b10 <= 1.01


# estimator --------------------------------------------------------------

def test_estimator_api():
    from sklearn.base import clone

    data = gaussian_data(1000, 3)
    est = NormalizingFlowDensity(n_couplings=2, epochs=5, random_state=1)
    assert clone(est).get_params() == est.get_params()
    est.fit(data)
    assert est.score_samples(data[:5]).shape == (5,)
    z = est.transform(data[:5])
    assert np.allclose(est.inverse_transform(z), data[:5], atol=1e-10)
    assert est.sample(7).shape == (7, 2)
    assert est.certify().certified
    assert np.isfinite(est.score(data))
