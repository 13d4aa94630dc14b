"""Projected Langevin kernels (ULA, NF-ULA, PnP-ULA, MYULA) and the chain driver."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import (ChainAbortedError, ChainDivergedError, EmptyStoreError,
                         NonFiniteError)
from .io import read_tensor, write_tensor
from .tensor import Rng, gaussian_vector

logger = logging.getLogger(__name__)

KERNELS = ("ula", "nfula", "pnpula", "myula")


@dataclass
class BoxSet:
    """Axis-aligned box ``[lo, hi]``; bounds are scalars or arrays broadcast over x."""

    lo: float | np.ndarray = -100.0
    hi: float | np.ndarray = 100.0

    def __post_init__(self):
        if not np.all(np.asarray(self.lo) < np.asarray(self.hi)):
            raise ValueError("box needs lo < hi componentwise")

    def project(self, x):
        return np.clip(x, self.lo, self.hi)

    def contains(self, x):
        return bool(np.all((x >= self.lo) & (x <= self.hi)))


def project_box(box, x):
    return box.project(np.asarray(x, dtype=np.float64))


def step_bound(L_y, alpha, L, lam):
    """Largest step covered by the contraction analysis: ``1 / (6 (L_y + alpha L + 1/lam))``."""
    if min(L_y, alpha, L, lam) <= 0:
        raise ValueError("all inputs must be positive")
    return (1.0 / 6.0) / (L_y + alpha * L + 1.0 / lam)


@dataclass
class SamplerConfig:
    """Hyperparameters of one Langevin run.

    ``lam`` weights the projection drift toward ``box``; ``eps`` is the
    denoiser noise level for PnP-ULA and ``prox_lambda`` the Moreau
    parameter for MYULA (defaults to ``delta``).  ``prior_lipschitz`` (if
    known) enables the step-size guard.
    """

    delta: float
    iterations: int
    kernel: str = "nfula"
    alpha: float = 1.0
    lam: float = 5e-5
    box: BoxSet = field(default_factory=BoxSet)
    burn_in: int = 0
    thinning: int = 1
    seed: int = 0
    stream: int = 0
    eps: float | None = None
    prox_lambda: float | None = None
    monitor: tuple = (-0.2, 1.2)
    divergence_threshold: float = 1e6
    prior_lipschitz: float | None = None
    record_trace: bool = True
    trace_every: int = 1

    def __post_init__(self):
        self.kernel = self.kernel.lower().replace("-", "").replace("_", "")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; expected one of {KERNELS}")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.lam <= 0 or self.alpha < 0:
            raise ValueError("lam must be positive and alpha nonnegative")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.kernel == "pnpula" and (self.eps is None or self.eps <= 0):
            raise ValueError("PnP-ULA needs eps > 0")

    @property
    def myula_lambda(self):
        return self.delta if self.prox_lambda is None else self.prox_lambda


@dataclass
class ChainState:
    x: np.ndarray
    rng: Rng
    k: int = 0
    n_retained: int = 0
    mean: np.ndarray | None = None
    m2: np.ndarray | None = None
    escaped: bool = False
    escape_count: int = 0
    projection_active_count: int = 0
    last_projection_active: bool = False
    max_abs: float = 0.0
    warnings: list = field(default_factory=list)

    def update_stats(self, x):
        """Welford update of the per-pixel running mean and sum of squares."""
        self.n_retained += 1
        if self.mean is None:
            self.mean = np.array(x, dtype=np.float64)
            self.m2 = np.zeros_like(self.mean)
            return
        delta = x - self.mean
        self.mean += delta / self.n_retained
        self.m2 += delta * (x - self.mean)

    @property
    def variance(self):
        if self.n_retained < 2:
            return np.zeros_like(self.mean)
        return self.m2 / (self.n_retained - 1)


class SampleStore:
    """Retained samples, kept in memory up to a budget and then spilled to
    NFT1 chunk files under ``spill_dir``."""

    def __init__(self, memory_budget=512 * 2**20, spill_dir=None, chunk_size=1000):
        self.memory_budget = int(memory_budget)
        self.spill_dir = spill_dir
        self.chunk_size = int(chunk_size)
        self._buffer = []
        self._chunks = []
        self._count = 0
        self._bytes = 0

    def __len__(self):
        return self._count

    def append(self, x):
        x = np.array(x, dtype=np.float64)
        self._buffer.append(x)
        self._count += 1
        self._bytes += x.nbytes
        if self.spill_dir is not None and (self._bytes > self.memory_budget or len(self._buffer) >= self.chunk_size
                                           and self._bytes > self.memory_budget // 2):
            self.flush()

    def flush(self):
        if not self._buffer or self.spill_dir is None:
            return
        os.makedirs(self.spill_dir, exist_ok=True)
        path = os.path.join(self.spill_dir, f"chunk_{len(self._chunks):05d}.nft")
        write_tensor(path, np.stack(self._buffer))
        self._chunks.append(path)
        self._buffer = []
        self._bytes = 0

    def iter_blocks(self):
        for path in self._chunks:
            yield read_tensor(path)
        if self._buffer:
            yield np.stack(self._buffer)

    def __iter__(self):
        for block in self.iter_blocks():
            yield from block

    def as_array(self):
        blocks = list(self.iter_blocks())
        if not blocks:
            raise EmptyStoreError("sample store is empty")
        return np.concatenate(blocks, axis=0)

    def to_bytes(self):
        return b"".join(np.ascontiguousarray(b, dtype="<f8").tobytes() for b in self.iter_blocks())

    @classmethod
    def from_directory(cls, path):
        store = cls(spill_dir=path)
        store._chunks = sorted(os.path.join(path, f) for f in os.listdir(path) if f.endswith(".nft"))
        store._count = sum(read_tensor(p).shape[0] for p in store._chunks)
        return store


@dataclass
class ChainTrace:
    iteration: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    log_likelihood: list = field(default_factory=list)
    projection_active: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,psnr,log_likelihood,projection_active\n")
            for row in zip(self.iteration, self.psnr, self.log_likelihood, self.projection_active):
                fh.write(f"{row[0]},{row[1]:.17g},{row[2]:.17g},{int(row[3])}\n")


def _drift(kind, x, lik, prior, cfg):
    """Drift of the kernel at ``x`` (without the step size) and whether the
    projection term is active."""
    g = lik.grad_log_likelihood(x) if lik is not None else np.zeros_like(x)
    active = False
    if kind == "ula":
        return g + cfg.alpha * prior.grad_log(x), active
    if kind == "myula":
        lam = cfg.myula_lambda
        return g + (prior.prox(x, lam * cfg.alpha) - x) / lam, active
    proj = cfg.box.project(x)
    active = not np.array_equal(proj, x)
    if kind == "nfula":
        prior_term = cfg.alpha * prior.grad_log(x)
    else:
        prior_term = (cfg.alpha / cfg.eps) * prior.residual(x)
    return g + prior_term + (proj - x) / cfg.lam, active


def kernel_step(state, lik, prior, cfg, noise=True):
    """Advance ``state`` by one Euler-Maruyama step of ``cfg.kernel``.

    ``prior`` is a Prior for ULA/NF-ULA/MYULA and a Denoiser for PnP-ULA.
    ``noise=False`` drops the Gaussian increment (test hook).
    """
    x = state.x
    drift, active = _drift(cfg.kernel, x, lik, prior, cfg)
    x_new = x + cfg.delta * drift
    if noise:
        x_new = x_new + math.sqrt(2.0 * cfg.delta) * gaussian_vector(state.rng, x.shape)
    state.k += 1
    m = float(np.max(np.abs(x_new)))
    if not math.isfinite(m):
        raise NonFiniteError("chain produced non-finite values", step=state.k)
    state.last_projection_active = active
    if active:
        state.projection_active_count += 1
    lo, hi = cfg.monitor
    if x_new.min() < lo or x_new.max() > hi:
        state.escaped = True
        state.escape_count += 1
    state.max_abs = max(state.max_abs, m)
    state.x = x_new
    if m > cfg.divergence_threshold:
        raise ChainDivergedError(f"|X|_inf = {m:.3e} exceeded {cfg.divergence_threshold:.1e}", state.k,
                                 state=state)
    return state


def check_step_size(cfg, lik):
    """Warnings for an NF-ULA step above the theoretical bound (not an error)."""
    out = []
    if cfg.kernel != "nfula" or lik is None or cfg.prior_lipschitz is None:
        return out
    ly = lik.lipschitz_constant()
    if ly is None:
        return out
    bound = step_bound(ly, max(cfg.alpha, 1e-300), cfg.prior_lipschitz, cfg.lam)
    if cfg.delta >= bound:
        out.append(f"delta={cfg.delta:.3e} exceeds the contraction bound {bound:.3e}; "
                   "convergence is not covered by the theory")
    return out


def _psnr(x, ref, max_val=1.0):
    mse = float(np.mean((x - ref) ** 2))
    return 200.0 if mse == 0 else min(200.0, 10.0 * math.log10(max_val ** 2 / mse))


def run_chain(cfg, lik, prior, x0, x_ref=None, store=None, trace=None, noise=True):
    """Run ``cfg.iterations`` kernel steps from ``x0``.

    Samples after ``cfg.burn_in`` are retained every ``cfg.thinning`` steps
    into ``store`` and folded into the running mean/variance.  Returns
    ``(state, store, trace)``.  A non-finite or diverging chain raises
    ChainAbortedError carrying the partial state and store.
    """
    state = ChainState(x=np.array(x0, dtype=np.float64), rng=Rng(cfg.seed, cfg.stream))
    store = SampleStore() if store is None else store
    trace = ChainTrace() if trace is None else trace
    state.warnings.extend(check_step_size(cfg, lik))
    for w in state.warnings:
        logger.warning(w)
    for _ in range(cfg.iterations):
        try:
            kernel_step(state, lik, prior, cfg, noise=noise)
        except ChainAbortedError as exc:
            store.flush()
            exc.store = store
            raise
        except NonFiniteError as exc:
            store.flush()
            raise ChainAbortedError(str(exc), state.k, state=state, store=store) from exc
        k = state.k
        if k > cfg.burn_in and (k - cfg.burn_in) % cfg.thinning == 0:
            store.append(state.x)
            state.update_stats(state.x)
        if cfg.record_trace and k % cfg.trace_every == 0:
            trace.iteration.append(k)
            trace.psnr.append(_psnr(state.x, x_ref) if x_ref is not None else float("nan"))
            trace.log_likelihood.append(float(lik.log_likelihood(state.x)) if lik is not None else 0.0)
            trace.projection_active.append(state.last_projection_active)
    store.flush()
    return state, store, trace


def posterior_summaries(store):
    """Per-pixel mean and sample standard deviation (``n - 1`` denominator)."""
    if len(store) == 0:
        raise EmptyStoreError("sample store is empty")
    n = 0
    mean = m2 = None
    for block in store.iter_blocks():
        for x in block:
            n += 1
            if mean is None:
                mean = np.array(x, dtype=np.float64)
                m2 = np.zeros_like(mean)
                continue
            d = x - mean
            mean += d / n
            m2 += d * (x - mean)
    std = np.sqrt(m2 / (n - 1)) if n > 1 else np.zeros_like(mean)
    return mean, std


def plateau_burn_in(psnr_trace, window=500, threshold=1e-4):
    """First iteration index after which the trailing-window PSNR slope drops
    below ``threshold`` dB/iteration, or None.  Advisory only."""
    p = np.asarray(psnr_trace, dtype=np.float64)
    if p.size < window:
        return None
    t = np.arange(window)
    tc = t - t.mean()
    for end in range(window, p.size + 1, max(1, window // 10)):
        seg = p[end - window:end]
        slope = float(tc @ (seg - seg.mean()) / (tc @ tc))
        if abs(slope) < threshold:
            return end
    return None


class LangevinSampler(BaseEstimator):
    """Posterior sampler with the scikit-learn parameter protocol.

    ``fit(likelihood, x0)`` runs one chain with the configured kernel and
    stores ``mean_``, ``std_``, ``state_``, ``samples_`` and ``trace_``;
    ``predict()`` returns the posterior mean.

    Parameters
    ----------
    prior : Prior or Denoiser
        Score provider; a Denoiser when ``kernel="pnpula"``.
    kernel : {"ula", "nfula", "pnpula", "myula"}
    delta, alpha, lam : float
        Step size, prior weight, projection weight.
    box_lo, box_hi : float
        Projection box.
    n_iter, burn_in, thinning : int
    eps, prox_lambda : float or None
        PnP denoiser level and MYULA Moreau parameter.
    random_state : int
    """

    def __init__(self, prior=None, kernel="nfula", delta=5e-5, alpha=1.0, lam=5e-5, box_lo=-100.0,
                 box_hi=100.0, n_iter=1000, burn_in=0, thinning=1, eps=None, prox_lambda=None,
                 prior_lipschitz=None, random_state=0):
        self.prior = prior
        self.kernel = kernel
        self.delta = delta
        self.alpha = alpha
        self.lam = lam
        self.box_lo = box_lo
        self.box_hi = box_hi
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thinning = thinning
        self.eps = eps
        self.prox_lambda = prox_lambda
        self.prior_lipschitz = prior_lipschitz
        self.random_state = random_state

    def _config(self):
        return SamplerConfig(delta=self.delta, iterations=self.n_iter, kernel=self.kernel, alpha=self.alpha,
                             lam=self.lam, box=BoxSet(self.box_lo, self.box_hi), burn_in=self.burn_in,
                             thinning=self.thinning, seed=self.random_state, eps=self.eps,
                             prox_lambda=self.prox_lambda, prior_lipschitz=self.prior_lipschitz)

    def fit(self, likelihood, x0=None, x_ref=None):
        if self.prior is None:
            raise ValueError("a prior (or denoiser) is required")
        cfg = self._config()
        if x0 is None:
            op = likelihood.operator
            x0 = likelihood.y if op.input_shape == op.output_shape else np.zeros(op.input_shape)
        self.state_, self.samples_, self.trace_ = run_chain(cfg, likelihood, self.prior, x0, x_ref=x_ref)
        self.mean_ = self.state_.mean
        self.std_ = np.sqrt(self.state_.variance)
        return self

    def predict(self, X=None):
        check_is_fitted(self, "mean_")
        return self.mean_
