"""Prior score providers, proximal maps and MMSE denoisers.

Priors expose a subset of ``grad_log``, ``log_density`` and ``prox``;
the ``has_*`` flags say which.  Gradients accept leading batch dimensions.
"""

from __future__ import annotations

import math

import numpy as np

from .exceptions import BadShapeError, CapabilityMissingError

LOG_2PI = math.log(2.0 * math.pi)


class Prior:
    kind = "abstract"
    has_grad = False
    has_prox = False
    has_density = False

    def grad_log(self, x):
        raise CapabilityMissingError(f"{self.kind} prior has no gradient")

    def log_density(self, x):
        raise CapabilityMissingError(f"{self.kind} prior has no density")

    def prox(self, x, lam):
        raise CapabilityMissingError(f"{self.kind} prior has no proximal map")


class FlowPrior(Prior):
    """Log-density and score of a normalizing flow over flattened images."""

    kind = "flow"
    has_grad = True
    has_density = True

    def __init__(self, model, image_shape=None):
        self.model = model
        self.image_shape = (model.d,) if image_shape is None else tuple(image_shape)
        if int(np.prod(self.image_shape)) != model.d:
            raise BadShapeError("image shape does not match flow dimension")

    def _flat(self, x):
        x = np.asarray(x, dtype=np.float64)
        batch = x.shape[:x.ndim - len(self.image_shape)]
        return x.reshape(-1, self.model.d), batch

    def grad_log(self, x):
        flat, batch = self._flat(x)
        return self.model.grad_log_density(flat).reshape(batch + self.image_shape)

    def log_density(self, x):
        flat, batch = self._flat(x)
        lp = self.model.log_density(flat)
        return float(lp[0]) if batch == () else lp.reshape(batch)


def patch_positions(n, p, stride):
    pos = list(range(0, n - p + 1, stride))
    return np.asarray(pos, dtype=np.int64)


def extract_patches(x, p, stride):
    """All ``p x p`` patches at the given stride, as ``batch + (n_patches, p*p)``."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    rows = patch_positions(h, p, stride)
    cols = patch_positions(w, p, stride)
    win = np.lib.stride_tricks.sliding_window_view(x, (p, p), axis=(-2, -1))
    sel = win[..., rows[:, None], cols[None, :], :, :]
    return sel.reshape(x.shape[:-2] + (rows.size * cols.size, p * p))


def scatter_patches(patches, image_shape, p, stride):
    """Overlap-add patches back into an image: the adjoint of ``extract_patches``."""
    patches = np.asarray(patches, dtype=np.float64)
    h, w = image_shape
    rows = patch_positions(h, p, stride)
    cols = patch_positions(w, p, stride)
    batch = patches.shape[:-2]
    grid = patches.reshape(batch + (rows.size, cols.size, p, p))
    out = np.zeros(batch + (h, w))
    span_r = rows[-1] + 1
    span_c = cols[-1] + 1
    for i in range(p):
        for j in range(p):
            out[..., i:i + span_r:stride, j:j + span_c:stride] += grid[..., :, :, i, j]
    return out


class PatchPrior(Prior):
    """Sum of flow log-densities over image patches (patchNR style).

    The reported gradient scatters each patch score back and sums overlaps.
    The summed patch log-density is kept under ``patch_log_density``; it is
    not a normalized density on the image, so ``has_density`` is False.
    """

    kind = "patch"
    has_grad = True

    def __init__(self, model, patch_size, stride=1, image_shape=None):
        if model.d != patch_size * patch_size:
            raise BadShapeError("flow dimension must equal patch_size**2")
        self.model = model
        self.patch_size = int(patch_size)
        self.stride = int(stride)
        self.image_shape = None if image_shape is None else tuple(image_shape)

    def grad_log(self, x):
        x = np.asarray(x, dtype=np.float64)
        patches = extract_patches(x, self.patch_size, self.stride)
        g = self.model.grad_log_density(patches.reshape(-1, self.model.d))
        return scatter_patches(g.reshape(patches.shape), x.shape[-2:], self.patch_size, self.stride)

    def patch_log_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        patches = extract_patches(x, self.patch_size, self.stride)
        lp = self.model.log_density(patches.reshape(-1, self.model.d)).reshape(patches.shape[:-1])
        total = lp.sum(axis=-1)
        return float(total) if np.ndim(total) == 0 else total


class GaussianPrior(Prior):
    """``N(mean, cov)`` with a full (small) or diagonal covariance."""

    kind = "gaussian"
    has_grad = True
    has_density = True

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=np.float64)
        cov = np.asarray(cov, dtype=np.float64)
        self.shape = self.mean.shape
        d = self.mean.size
        if not (cov.ndim == 2 and cov.shape == (d, d) and cov.shape != self.shape):
            if cov.size != d:
                raise BadShapeError("diagonal covariance size mismatch")
            self.diagonal = True
            self.cov = cov.reshape(-1)
            self.precision = 1.0 / self.cov
            self._logdet = float(np.sum(np.log(self.cov)))
        else:
            self.diagonal = False
            self.cov = cov
            self.precision = np.linalg.inv(cov)
            self.precision = 0.5 * (self.precision + self.precision.T)
            sign, logdet = np.linalg.slogdet(cov)
            if sign <= 0:
                raise ValueError("covariance is not positive definite")
            self._logdet = float(logdet)
        self.d = d

    def _centered(self, x):
        x = np.asarray(x, dtype=np.float64)
        batch = x.shape[:x.ndim - len(self.shape)]
        return (x - self.mean).reshape(batch + (self.d,)), batch

    def grad_log(self, x):
        r, batch = self._centered(x)
        g = -(r * self.precision) if self.diagonal else -(r @ self.precision)
        return g.reshape(batch + self.shape)

    def log_density(self, x):
        r, batch = self._centered(x)
        q = np.sum(r * r * self.precision, axis=-1) if self.diagonal else np.einsum("...i,ij,...j->...", r, self.precision, r)
        lp = -0.5 * q - 0.5 * self.d * LOG_2PI - 0.5 * self._logdet
        return float(lp) if batch == () else lp

    def full_covariance(self):
        return np.diag(self.cov) if self.diagonal else self.cov

    def smoothed(self, eps):
        """The Gaussian-smoothed prior ``N(mean, cov + eps I)``."""
        return GaussianPrior(self.mean, self.full_covariance() + eps * np.eye(self.d))


class L1Prior(Prior):
    """``U(x) = weight * ||x||_1``; only its proximal map is used."""

    kind = "l1"
    has_prox = True

    def __init__(self, weight=1.0):
        if weight < 0:
            raise ValueError("weight must be nonnegative")
        self.weight = float(weight)

    def prox(self, x, lam):
        if lam <= 0:
            raise ValueError("lam must be positive")
        x = np.asarray(x, dtype=np.float64)
        t = lam * self.weight
        return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


class ScorePrior(Prior):
    """Wrap an arbitrary score function, e.g. for stress tests of the projection."""

    kind = "score"
    has_grad = True

    def __init__(self, score):
        self.score = score

    def grad_log(self, x):
        return self.score(np.asarray(x, dtype=np.float64))


class FlatPrior(Prior):
    kind = "flat"
    has_grad = True

    def grad_log(self, x):
        return np.zeros_like(np.asarray(x, dtype=np.float64))


def prior_grad_log(prior, x):
    if not prior.has_grad:
        raise CapabilityMissingError(f"{prior.kind} prior has no gradient")
    return prior.grad_log(x)


def prior_prox(prior, x, lam):
    if not prior.has_prox:
        raise CapabilityMissingError(f"{prior.kind} prior has no proximal map")
    return prior.prox(x, lam)


def prior_log_density(prior, x):
    if not prior.has_density:
        raise CapabilityMissingError(f"{prior.kind} prior has no density")
    return prior.log_density(x)


class Denoiser:
    """Gaussian denoiser at noise variance ``eps``.

    ``residual(x) = D(x) - x`` is the primitive; samplers use it directly so
    the score ``residual / eps`` avoids cancellation in ``D(x) - x``.
    """

    kind = "abstract"

    def __init__(self, eps):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.eps = float(eps)

    def residual(self, x):
        raise NotImplementedError

    def denoise(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x + self.residual(x)


class GaussianMmseDenoiser(Denoiser):
    """Exact posterior mean under a Gaussian prior:
    ``D(x) = m + S (S + eps I)^-1 (x - m)``, written as
    ``x - eps (S + eps I)^-1 (x - m)``."""

    kind = "gaussian_mmse"

    def __init__(self, mean, cov, eps):
        super().__init__(eps)
        self.mean = np.asarray(mean, dtype=np.float64)
        cov = np.asarray(cov, dtype=np.float64)
        d = self.mean.size
        if cov.ndim == 1:
            cov = np.diag(cov)
        if cov.shape != (d, d):
            raise BadShapeError("covariance shape mismatch")
        self.cov = cov
        self.shape = self.mean.shape
        # same construction as GaussianPrior(mean, cov + eps I).precision
        p = np.linalg.inv(cov + self.eps * np.eye(d))
        self.smoothed_precision = 0.5 * (p + p.T)

    def residual(self, x):
        x = np.asarray(x, dtype=np.float64)
        batch = x.shape[:x.ndim - len(self.shape)]
        r = (x - self.mean).reshape(batch + (self.mean.size,))
        return (-self.eps * (r @ self.smoothed_precision)).reshape(x.shape)


class ExternalDenoiser(Denoiser):
    """Black-box denoiser callable ``fn(x) -> D(x)``."""

    kind = "external"

    def __init__(self, fn, eps):
        super().__init__(eps)
        self.fn = fn

    def residual(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.asarray(self.fn(x), dtype=np.float64) - x

    def denoise(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=np.float64)), dtype=np.float64)


def denoise(d, x):
    return d.denoise(x)
