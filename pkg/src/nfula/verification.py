"""Self-contained verification experiments on toy targets.

Each ``check_*`` function runs one experiment end to end and returns a
``CheckResult`` whose ``measured`` dict holds every quantity it judged.
They back both ``nfula verify`` and the acceptance tests.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass

import numpy as np

from .diagnostics import (CheckResult, psnr, acf, gaussian_tv, normal_quantile_sample, verify_finite_moments,
                          verify_well_posedness, wasserstein1_1d)
from .exceptions import ChainDivergedError
from .flow import build_flow, certify_lipschitz, empirical_hessian_bound, train_flow
from .likelihoods import GaussianLikelihood
from .likelihoods import PoissonLikelihood, simulate_observation
from .operators import (IdentityOperator, fbp_reconstruct, make_blur, make_mask, make_radon,
                        motion_blur_kernel)
from .phantoms import disk, random_blobs
from .priors import FlowPrior, GaussianMmseDenoiser, GaussianPrior, PatchPrior, ScorePrior, extract_patches
from .samplers import BoxSet, ChainState, SamplerConfig, kernel_step, run_chain
from .tensor import Rng, gaussian_vector

HUGE_BOX = BoxSet(-1e4, 1e4)


@dataclass
class ConjugateTarget:
    """Gaussian prior, identity operator, Gaussian noise: closed-form posterior."""

    prior_mean: np.ndarray
    prior_cov: np.ndarray
    sigma: float
    y: np.ndarray
    post_mean: np.ndarray
    post_cov: np.ndarray

    @property
    def d(self):
        return self.y.size

    @property
    def post_precision(self):
        return np.linalg.inv(self.post_cov)

    def likelihood(self):
        return GaussianLikelihood(IdentityOperator((self.d,)), self.y, self.sigma)

    def prior(self):
        return GaussianPrior(self.prior_mean, self.prior_cov)

    def ula_covariance(self, delta):
        """Stationary covariance of ULA at step ``delta``: ``(P - delta P^2 / 2)^-1``."""
        p = self.post_precision
        return np.linalg.inv(p - 0.5 * delta * p @ p)


def conjugate_target(d=4, sigma=1.0, seed=0, cov_eigs=(0.01, 0.05)):
    """Random SPD prior covariance with eigenvalues drawn from ``cov_eigs``."""
    rng = Rng(seed, 11)
    q, _ = np.linalg.qr(gaussian_vector(rng, (d, d)))
    lo, hi = cov_eigs
    eig = lo + (hi - lo) * rng.uniform(d)
    cov = q @ np.diag(eig) @ q.T
    cov = 0.5 * (cov + cov.T)
    mean = 0.5 + 0.1 * gaussian_vector(rng, d)
    x_true = mean + np.linalg.cholesky(cov) @ gaussian_vector(rng, d)
    y = x_true + sigma * gaussian_vector(rng, d)
    prec = np.linalg.inv(cov)
    post_cov = np.linalg.inv(prec + np.eye(d) / sigma ** 2)
    post_mean = post_cov @ (prec @ mean + y / sigma ** 2)
    return ConjugateTarget(mean, cov, sigma, y, post_mean, post_cov)


def batch_means_se(samples, n_batches=50):
    """Monte Carlo standard error per coordinate from non-overlapping batch means."""
    n = samples.shape[0] // n_batches * n_batches
    means = samples[:n].reshape((n_batches, -1) + samples.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(n_batches)


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def check_conjugate_recovery(seed=0, delta=1e-3, horizon=200.0, burn_time=5.0, cov_rtol=0.10, n_se=3.0):
    """NF-ULA with an analytic Gaussian prior recovers the conjugate posterior.

    Mean: within ``n_se`` batch-means standard errors per coordinate.
    Covariance: ``|C_hat_ij - C_ij| <= cov_rtol * sqrt(C_ii C_jj)``.
    """
    target = conjugate_target(seed=seed)
    k = int(round(horizon / delta))
    cfg = SamplerConfig(delta=delta, iterations=k, burn_in=int(round(burn_time / delta)), alpha=1.0, lam=5e-5,
                        box=HUGE_BOX, seed=seed, record_trace=False)
    t0 = time.time()
    state, store, _ = run_chain(cfg, target.likelihood(), target.prior(), target.post_mean.copy())
    samples = store.as_array()
    mean = samples.mean(axis=0)
    cov = np.cov(samples, rowvar=False)
    se = batch_means_se(samples)
    z = np.abs(mean - target.post_mean) / se
    scale = np.sqrt(np.outer(np.diag(target.post_cov), np.diag(target.post_cov)))
    cov_err = np.abs(cov - target.post_cov) / scale
    passed = bool(np.all(z <= n_se) and np.all(cov_err <= cov_rtol))
    return CheckResult("conjugate_gaussian", passed, {
        "max_z": float(z.max()), "max_cov_rel_err": float(cov_err.max()), "n_samples": samples.shape[0],
        "projection_active": state.projection_active_count, "seconds": time.time() - t0,
        "digest": _digest(samples)})


def coupled_distances(target, x1, x2, delta=1e-3, steps=100_000, seed=0, stop_below=1e-12):
    """Distance between two NF-ULA chains driven by the same noise sequence."""
    cfg = SamplerConfig(delta=delta, iterations=steps, alpha=1.0, lam=5e-5, box=HUGE_BOX, seed=seed,
                        record_trace=False)
    lik, prior = target.likelihood(), target.prior()
    s1 = ChainState(x=np.array(x1, dtype=np.float64), rng=Rng(seed, 0))
    s2 = ChainState(x=np.array(x2, dtype=np.float64), rng=Rng(seed, 0))
    dist = [float(np.linalg.norm(s1.x - s2.x))]
    for _ in range(steps):
        kernel_step(s1, lik, prior, cfg)
        kernel_step(s2, lik, prior, cfg)
        dist.append(float(np.linalg.norm(s1.x - s2.x)))
        if dist[-1] < stop_below:
            break
    return np.asarray(dist)


def check_contraction(seed=0, delta=1e-3, steps=100_000, separation=10.0, target_gap=1e-6):
    """Coupled chains from points ``separation`` apart contract geometrically."""
    target = conjugate_target(seed=seed)
    direction = gaussian_vector(Rng(seed, 21), target.d)
    direction *= separation / np.linalg.norm(direction)
    x1 = target.post_mean + 0.5 * direction
    x2 = target.post_mean - 0.5 * direction
    dist = coupled_distances(target, x1, x2, delta, steps, seed)
    hit = np.flatnonzero(dist <= target_gap)
    first_hit = int(hit[0]) if hit.size else None
    k = np.arange(dist.size)
    keep = dist > 1e-11
    slope, intercept = np.polyfit(k[keep], np.log(dist[keep]), 1)
    resid = np.log(dist[keep]) - (slope * k[keep] + intercept)
    ss_tot = np.sum((np.log(dist[keep]) - np.log(dist[keep]).mean()) ** 2)
    r2 = 1.0 - float(np.sum(resid ** 2) / ss_tot)
    rate = math.exp(slope)
    passed = bool(first_hit is not None and first_hit <= steps and rate < 1.0 and r2 >= 0.9)
    return CheckResult("contraction", passed, {"initial_distance": float(dist[0]), "steps_to_gap": first_hit,
                                               "rate": rate, "r2": r2})


def marginal_w1(target, delta, seed, horizon=200.0, burn_time=5.0, n_chains=32, coord=0):
    """W1 between the time-averaged first marginal of an NF-ULA chain ensemble
    and the exact posterior marginal."""
    k = int(round(horizon / delta))
    cfg = SamplerConfig(delta=delta, iterations=k, burn_in=int(round(burn_time / delta)), alpha=1.0, lam=5e-5,
                        box=HUGE_BOX, seed=seed, record_trace=False)
    x0 = np.tile(target.post_mean, (n_chains, 1))
    _, store, _ = run_chain(cfg, target.likelihood(), target.prior(), x0)
    a = store.as_array()[..., coord].reshape(-1)
    ref = normal_quantile_sample(target.post_mean[coord], math.sqrt(target.post_cov[coord, coord]), a.size)
    return wasserstein1_1d(a, ref)


def check_bias_ordering(deltas=(4e-3, 2e-3, 1e-3), seeds=range(5), horizon=200.0, n_chains=32, target_seed=0):
    """W1 to the exact marginal shrinks as the step size halves at fixed horizon."""
    target = conjugate_target(seed=target_seed)
    means = []
    per_seed = {}
    for delta in deltas:
        vals = [marginal_w1(target, delta, 1000 + s, horizon, n_chains=n_chains) for s in seeds]
        per_seed[delta] = vals
        means.append(float(np.mean(vals)))
    passed = all(a >= b for a, b in zip(means[:-1], means[1:]))
    analytic = [abs(math.sqrt(target.ula_covariance(d)[0, 0]) - math.sqrt(target.post_cov[0, 0]))
                * math.sqrt(2.0 / math.pi) for d in deltas]
    return CheckResult("bias_ordering", bool(passed), {"deltas": list(deltas), "mean_w1": means,
                                                       "per_seed": per_seed, "analytic_bias_w1": analytic})


def check_projection(delta=1e-3, steps=100_000, d=4, seed=0, alpha=1.0, sigma=10.0):
    """An expanding prior score ``+x`` stays bounded under the box projection
    and diverges without it."""
    y = np.full(d, 0.5)
    lik = GaussianLikelihood(IdentityOperator((d,)), y, sigma)
    prior = ScorePrior(lambda x: x)
    box = BoxSet(0.0, 1.0)
    cfg = SamplerConfig(delta=delta, iterations=steps, alpha=alpha, lam=delta, box=box, seed=seed,
                        record_trace=False, divergence_threshold=1e6)
    state, _, _ = run_chain(cfg, lik, prior, y.copy())
    bound = 1.0 + 10.0 * math.sqrt(2.0 * delta)
    bounded = state.max_abs <= bound
    free = SamplerConfig(delta=delta, iterations=steps, kernel="ula", alpha=alpha, seed=seed,
                         record_trace=False, divergence_threshold=1e6)
    diverged_at = None
    try:
        run_chain(free, lik, prior, y.copy())
    except ChainDivergedError as exc:
        diverged_at = exc.iteration
    passed = bool(bounded and state.projection_active_count > 0 and diverged_at is not None)
    return CheckResult("projection", passed, {"max_abs_projected": state.max_abs, "bound": bound,
                                              "projection_active": state.projection_active_count,
                                              "diverged_at": diverged_at})


def check_tweedie(n_points=1000, d=3, eps=2.0 ** -4, seed=0, steps=2000, delta=1e-3):
    """Tweedie's identity for the Gaussian MMSE denoiser and PnP-ULA / ULA trajectory equality.

    ``eps`` is a power of two so ``eps * v / eps`` is exact and the two
    kernels agree bit for bit.
    """
    rng = Rng(seed, 31)
    a = gaussian_vector(rng, (d, d))
    cov = a @ a.T / d + 0.1 * np.eye(d)
    mean = gaussian_vector(rng, d)
    den = GaussianMmseDenoiser(mean, cov, eps)
    smooth = GaussianPrior(mean, cov).smoothed(eps)
    pts = 3.0 * gaussian_vector(rng, (n_points, d))
    lhs = eps * smooth.grad_log(pts)
    rhs = den.denoise(pts) - pts
    tweedie_err = float(np.max(np.abs(lhs - rhs) / (1.0 + np.abs(lhs))))
    y = gaussian_vector(rng, d)
    lik = GaussianLikelihood(IdentityOperator((d,)), y, 1.0)
    cfg_p = SamplerConfig(delta=delta, iterations=steps, kernel="pnpula", eps=eps, box=HUGE_BOX, seed=seed,
                          record_trace=False)
    cfg_u = SamplerConfig(delta=delta, iterations=steps, kernel="ula", box=HUGE_BOX, seed=seed,
                          record_trace=False)
    _, store_p, _ = run_chain(cfg_p, lik, den, y.copy())
    _, store_u, _ = run_chain(cfg_u, lik, smooth, y.copy())
    identical = store_p.to_bytes() == store_u.to_bytes()
    passed = bool(tweedie_err <= 1e-10 and identical)
    return CheckResult("tweedie", passed, {"tweedie_max_err": tweedie_err, "trajectories_identical": identical})


def check_finite_moments(settings=(((0.0, 0.0), 1.0), ((0.0, 1.0), 1.0), ((-1.0, 2.0), 0.05)), k_max=4):
    values = {}
    for box, lam in settings:
        values[f"C=[{box[0]},{box[1]}],lam={lam}"] = verify_finite_moments(lam, box, k_max).measured["moments"]
    # C = {0}, lam = 1, k = 0 integrates a standard Gaussian kernel
    gauss = values[f"C=[0.0,0.0],lam=1.0"][0]
    unit = values[f"C=[0.0,1.0],lam=1.0"][0]
    ok = abs(gauss - math.sqrt(2 * math.pi)) <= 1e-8 and abs(unit - (1 + math.sqrt(2 * math.pi))) <= 1e-6
    return CheckResult("finite_moments", bool(ok), {"moments": values})


def check_well_posedness(prior_var=0.5, sigma=0.7, y0=0.3, steps=(1e-1, 1e-2, 1e-3), tol=0.05):
    """TV(p(.|y0), p(.|y0 + dy)) / dy stabilizes as dy shrinks (1-D Gaussian case)."""
    prior = GaussianPrior(np.zeros(1), np.array([[prior_var]]))
    pairs = [(y0, y0 + s) for s in steps]
    res = verify_well_posedness(prior, sigma, pairs)
    slopes = np.asarray(res.measured["slopes"])
    post_var = 1.0 / (1.0 / prior_var + 1.0 / sigma ** 2)
    gain = post_var / sigma ** 2
    exact = [gaussian_tv(gain * y1, gain * y2, math.sqrt(post_var)) for y1, y2 in pairs]
    quad_err = float(np.max(np.abs(np.asarray(res.measured["tv"]) - exact)))
    spread = float(slopes.max() / slopes.min() - 1.0)
    passed = bool(spread <= tol and quad_err <= 1e-6 and res.passed)
    return CheckResult("well_posedness", passed, {"slopes": slopes.tolist(), "slope_spread": spread,
                                                  "tv_quadrature_err": quad_err})


def check_acf(seed=0, n=100_000, max_lag=50, rho=0.9):
    rng = Rng(seed, 41)
    white = gaussian_vector(rng, n)
    w = acf(white, max_lag).values
    noise = gaussian_vector(rng, n)
    ar = np.empty(n)
    ar[0] = noise[0] / math.sqrt(1 - rho ** 2)
    for t in range(1, n):
        ar[t] = rho * ar[t - 1] + noise[t]
    a5 = float(acf(ar, 5).values[5])
    passed = bool(np.max(np.abs(w[1:])) <= 0.02 and abs(a5 - rho ** 5) <= 0.03)
    return CheckResult("acf", passed, {"white_max_abs": float(np.max(np.abs(w[1:]))), "ar1_lag5": a5,
                                       "ar1_lag5_exact": rho ** 5})


def gaussian_2d_data(n=10_000, seed=0):
    mean = np.array([0.5, 0.4])
    cov = np.array([[0.04, 0.018], [0.018, 0.03]])
    z = gaussian_vector(Rng(seed, 51), (n, 2))
    return mean, cov, mean + z @ np.linalg.cholesky(cov).T


def check_flow_prior_equivalence(seed=0, n_train=10_000, epochs=60, delta=1e-3, steps=100_000, sigma=0.1,
                                 tol=0.05):
    """NF-ULA with a flow trained on Gaussian data matches ULA with the exact Gaussian prior."""
    mean, cov, data = gaussian_2d_data(n_train, seed)
    model = build_flow(2, 4, "additive", rng=Rng(seed, 52))
    trace = train_flow(model, data, epochs, batch_size=256, lr=2e-3, jitter_sigma=0.0, seed=seed)
    y = np.array([0.6, 0.2])
    lik = GaussianLikelihood(IdentityOperator((2,)), y, sigma)
    burn = 2000
    cfg_nf = SamplerConfig(delta=delta, iterations=steps, burn_in=burn, kernel="nfula", box=HUGE_BOX, seed=seed,
                           record_trace=False)
    cfg_ula = SamplerConfig(delta=delta, iterations=steps, burn_in=burn, kernel="ula", seed=seed,
                            record_trace=False)
    st_nf, s_nf, _ = run_chain(cfg_nf, lik, FlowPrior(model), y.copy())
    _, s_ula, _ = run_chain(cfg_ula, lik, GaussianPrior(mean, cov), y.copy())
    w1 = wasserstein1_1d(s_nf.as_array()[:, 0], s_ula.as_array()[:, 0])
    certified = certify_lipschitz(model).certified
    passed = bool(w1 <= tol and certified)
    return CheckResult("flow_prior_equivalence", passed, {"w1": w1, "final_train_nll": trace.epoch_losses[-1],
                                                          "certified": certified,
                                                          "projection_active": st_nf.projection_active_count})


def check_certification(seed=0, n_probes=50):
    """Additive flows certify and keep a radius-independent Hessian bound;
    affine flows never certify."""
    mean, cov, data = gaussian_2d_data(2000, seed)
    additive = build_flow(2, 4, "additive", rng=Rng(seed, 61))
    train_flow(additive, data, 20, lr=2e-3, jitter_sigma=0.0, seed=seed)
    affine = build_flow(2, 4, "affine", rng=Rng(seed, 62))
    rng = Rng(seed, 63)
    u = 2.0 * rng.uniform((n_probes, 2)) - 1.0
    b10 = empirical_hessian_bound(additive, 10.0 * u, fd_step=1e-6)
    b1000 = empirical_hessian_bound(additive, 1000.0 * u, fd_step=1e-6)
    ratio = b1000 / b10
    cert_add = certify_lipschitz(additive).certified
    cert_aff = certify_lipschitz(affine).certified
    passed = bool(cert_add and not cert_aff and ratio <= 1.01)
    return CheckResult("certification", passed, {"additive_certified": cert_add, "affine_certified": cert_aff,
                                                 "bound_r10": b10, "bound_r1000": b1000, "ratio": ratio})


def relative_fd_error(f, grad, x, rng, n_dirs=5, h=1e-6):
    """Worst relative error of ``<grad, v>`` against a central difference over random directions."""
    x = np.asarray(x, dtype=np.float64)
    g = grad(x)
    worst = 0.0
    for _ in range(n_dirs):
        v = gaussian_vector(rng, x.shape)
        v /= np.linalg.norm(v)
        fd = (f(x + h * v) - f(x - h * v)) / (2 * h)
        an = float(np.sum(g * v))
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst


def check_gradients(seed=0, tol=1e-4):
    """Finite-difference oracles for every hand-written gradient."""
    rng = Rng(seed, 71)
    errs = {}
    for coupling in ("additive", "affine"):
        model = build_flow(6, 4, coupling, permutations=True, hidden=16, rng=rng.spawn(1))
        model.layers[0].initialize(gaussian_vector(rng, (64, 6)))
        x = gaussian_vector(rng, 6)
        errs[f"grad_log_density/{coupling}"] = relative_fd_error(
            lambda v: float(model.log_density(v[None])[0]), lambda v: model.grad_log_density(v[None])[0], x, rng)
        batch = gaussian_vector(rng, (16, 6))
        _, grads = model.nll_loss_and_grad(batch)
        worst = 0.0
        for name, arr in model.parameters().items():
            g = grads[name]
            v = gaussian_vector(rng, arr.shape)
            v /= np.linalg.norm(v)
            h = 1e-6
            base = arr.copy()
            arr[...] = base + h * v
            lp = model.nll_loss_and_grad(batch)[0]
            arr[...] = base - h * v
            lm = model.nll_loss_and_grad(batch)[0]
            arr[...] = base
            fd = (lp - lm) / (2 * h)
            an = float(np.sum(g * v))
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
        errs[f"nll_loss_and_grad/{coupling}"] = worst
    op = make_radon(8, 6)
    x_true = disk(8)
    y = simulate_observation("poisson", op, x_true, rng, n0=4096.0, mu=0.05)
    pois = PoissonLikelihood(op, y)
    errs["poisson"] = relative_fd_error(pois.log_likelihood, pois.grad_log_likelihood,
                                        x_true + 0.05 * gaussian_vector(rng, x_true.shape), rng)
    pmodel = build_flow(4, 4, "additive", hidden=16, rng=rng.spawn(2))
    pmodel.layers[0].initialize(gaussian_vector(rng, (64, 4)))
    for stride in (1, 2):
        prior = PatchPrior(pmodel, 2, stride)
        img = rng.uniform((6, 6))
        errs[f"patch_prior/stride{stride}"] = relative_fd_error(prior.patch_log_density, prior.grad_log, img, rng)
    passed = all(v <= tol for v in errs.values())
    return CheckResult("gradients", bool(passed), {"errors": errs})


# desk inverse problems: 32x32 disk, patch prior trained on random ellipse images
DESK = dict(side=32, patch=4, couplings=6, hidden=64, epochs=60, batch_size=256, lr=1e-3, jitter=0.02,
            stride=2, alpha=1.0, iterations=6000, burn_in=2000)


def train_patch_prior(seed=0, n_images=6, **over):
    cfg = dict(DESK, **over)
    rng = Rng(seed + 1, 0)
    imgs = [random_blobs(cfg["side"], rng) for _ in range(n_images)]
    data = np.concatenate([extract_patches(im, cfg["patch"], 1) for im in imgs])
    model = build_flow(cfg["patch"] ** 2, cfg["couplings"], "additive", permutations=True, hidden=cfg["hidden"],
                       rng=Rng(seed + 2))
    trace = train_flow(model, data, cfg["epochs"], cfg["batch_size"], cfg["lr"], cfg["jitter"], seed=seed + 3)
    return model, trace


def desk_problem(name, seed=0):
    """Forward operator, observation, likelihood, initial point and baseline image."""
    x = disk(DESK["side"])
    shape = x.shape
    if name == "deblur":
        op = make_blur(shape, motion_blur_kernel(9))
        y = simulate_observation("gaussian", op, x, Rng(seed + 5), sigma=0.02)
        return x, GaussianLikelihood(op, y, 0.02), y, y, 5e-5
    if name == "inpaint":
        op = make_mask(shape, 0.2, Rng(seed + 6))
        y = simulate_observation("gaussian", op, x, Rng(seed + 5), sigma=0.02)
        return x, GaussianLikelihood(op, y, 0.02), y, y, 5e-5
    if name == "ct":
        op = make_radon(DESK["side"], 30)
        ax = op.apply(x)
        sigma = 0.05 * float(ax.max())
        y = ax + sigma * gaussian_vector(Rng(seed + 7), ax.shape)
        x0 = fbp_reconstruct(op, y)
        return x, GaussianLikelihood(op, y, sigma), x0, x0, 1e-4
    raise ValueError(f"unknown desk problem {name!r}")


DESK_MARGINS = {"deblur": 3.0, "inpaint": 5.0, "ct": 2.0}


def check_desk(name, seed=0, model=None):
    """Posterior-mean PSNR beats the baseline (observation, zero fill or FBP) by the required margin."""
    t0 = time.time()
    if model is None:
        model, _ = train_patch_prior(seed)
    x, lik, x0, baseline, delta = desk_problem(name, seed)
    prior = PatchPrior(model, DESK["patch"], DESK["stride"])
    cfg = SamplerConfig(delta=delta, iterations=DESK["iterations"], burn_in=DESK["burn_in"], alpha=DESK["alpha"],
                        seed=seed, record_trace=False)
    state, _, _ = run_chain(cfg, lik, prior, x0)
    base = psnr(baseline, x)
    post = psnr(state.mean, x)
    passed = post >= base + DESK_MARGINS[name] and state.projection_active_count == 0
    return CheckResult(f"desk_{name}", bool(passed), {
        "baseline_psnr": base, "posterior_mean_psnr": post, "gain_db": post - base,
        "required_gain_db": DESK_MARGINS[name], "projection_active": state.projection_active_count,
        "escape_count": state.escape_count, "certified": certify_lipschitz(model).certified,
        "seconds": time.time() - t0, "digest": _digest(state.mean)})


def check_desk_all(seed=0):
    model, _ = train_patch_prior(seed)
    results = [check_desk(n, seed, model) for n in DESK_MARGINS]
    return CheckResult("desk", all(r.passed for r in results), {r.name: r.measured for r in results})


def check_determinism(seed=0):
    """Same seed, same bytes: a short sampler run and a short training run, each done twice."""
    target = conjugate_target(seed=seed)
    cfg = SamplerConfig(delta=1e-3, iterations=2000, box=HUGE_BOX, seed=seed, record_trace=False)
    runs = [run_chain(cfg, target.likelihood(), target.prior(), target.post_mean.copy())[1].to_bytes()
            for _ in range(2)]
    _, _, data = gaussian_2d_data(1000, seed)
    digests = []
    for _ in range(2):
        m = build_flow(2, 4, "additive", rng=Rng(seed, 52))
        train_flow(m, data, 3, jitter_sigma=0.01, seed=seed)
        digests.append(_digest(*m.parameters().values()))
    passed = runs[0] == runs[1] and digests[0] == digests[1]
    return CheckResult("determinism", bool(passed), {"sampler_identical": runs[0] == runs[1],
                                                     "training_identical": digests[0] == digests[1]})


SUITES = {
    "conjugate-gaussian": check_conjugate_recovery,
    "contraction": check_contraction,
    "bias-scaling": check_bias_ordering,
    "projection": check_projection,
    "tweedie": check_tweedie,
    "finite-moments": check_finite_moments,
    "well-posedness": check_well_posedness,
    "acf": check_acf,
    "flow-equivalence": check_flow_prior_equivalence,
    "certification": check_certification,
    "gradients": check_gradients,
    "desk": check_desk_all,
    "determinism": check_determinism,
}
