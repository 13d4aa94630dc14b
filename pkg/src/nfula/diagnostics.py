"""Chain and reconstruction diagnostics plus numerical theory checks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .exceptions import (BadShapeError, DegenerateSeriesError, NonConvergenceError,
                         ShapeMismatchError)
from .tensor import quadrature_integrate_1d

PSNR_CAP = 200.0


def psnr(x, ref, max_val=1.0):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ShapeMismatchError(f"shapes differ: {x.shape} vs {ref.shape}")
    if max_val <= 0:
        raise ValueError("max_val must be positive")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(max_val ** 2 / mse))


@dataclass
class AcfCurve:
    values: np.ndarray
    label: str = ""

    @property
    def lags(self):
        return np.arange(self.values.size)


def acf(series, max_lag, label=""):
    """Sample autocorrelation with the single global mean of the series."""
    y = np.asarray(series, dtype=np.float64).reshape(-1)
    n = y.size
    if not 1 <= max_lag < n:
        raise ValueError("need 1 <= max_lag < len(series)")
    c = y - y.mean()
    denom = float(c @ c)
    if denom == 0.0:
        raise DegenerateSeriesError("series has zero variance")
    nfft = 1 << int(math.ceil(math.log2(2 * n)))
    f = np.fft.rfft(c, nfft)
    ac = np.fft.irfft(f * np.conj(f), nfft)[:max_lag + 1]
    vals = ac / denom
    vals[0] = 1.0
    return AcfCurve(vals, label)


def haar_dwt2(image, levels=1):
    """Orthonormal 2-D Haar transform.

    Returns ``(YL, YH)`` where ``YH[j]`` stacks the three detail bands
    (horizontal, vertical, diagonal) of level ``j + 1``, finest first.
    """
    a = np.asarray(image, dtype=np.float64)
    if a.ndim < 2:
        raise BadShapeError("need at least a 2-D array")
    h, w = a.shape[-2:]
    if levels < 1 or h % (2 ** levels) or w % (2 ** levels):
        raise BadShapeError(f"sides {h}x{w} not divisible by 2**{levels}")
    yh = []
    for _ in range(levels):
        p00 = a[..., 0::2, 0::2]
        p01 = a[..., 0::2, 1::2]
        p10 = a[..., 1::2, 0::2]
        p11 = a[..., 1::2, 1::2]
        ll = (p00 + p01 + p10 + p11) / 2.0
        lh = (p00 - p01 + p10 - p11) / 2.0
        hl = (p00 + p01 - p10 - p11) / 2.0
        hh = (p00 - p01 - p10 + p11) / 2.0
        yh.append(np.stack([lh, hl, hh], axis=-3))
        a = ll
    return a, yh


def haar_idwt2(yl, yh):
    a = np.asarray(yl, dtype=np.float64)
    for bands in reversed(yh):
        lh, hl, hh = bands[..., 0, :, :], bands[..., 1, :, :], bands[..., 2, :, :]
        out = np.empty(a.shape[:-2] + (2 * a.shape[-2], 2 * a.shape[-1]))
        out[..., 0::2, 0::2] = (a + lh + hl + hh) / 2.0
        out[..., 0::2, 1::2] = (a - lh + hl - hh) / 2.0
        out[..., 1::2, 0::2] = (a + lh - hl - hh) / 2.0
        out[..., 1::2, 1::2] = (a - lh - hl + hh) / 2.0
        a = out
    return a


@dataclass
class BandAcf:
    band: str
    curves: list
    dims: list
    skipped: int
    envelope_min: np.ndarray
    envelope_median: np.ndarray
    envelope_max: np.ndarray


def chain_acf_bands(samples, n_dims_per_band=100, max_lag=100, rng=None, levels=1):
    """ACF curves of random wavelet coordinates in the YL band and the finest YH level.

    ``samples`` is an array ``(n, H, W)`` or an iterable of images.  Zero-
    variance coordinates are skipped and counted.
    """
    from .tensor import Rng

    arr = samples.as_array() if hasattr(samples, "as_array") else np.asarray(samples, dtype=np.float64)
    if arr.shape[0] < max_lag + 2:
        raise ValueError("need at least max_lag + 2 samples")
    rng = Rng(0) if rng is None else rng
    yl, yh = haar_dwt2(arr, levels)
    bands = {"YL": yl.reshape(arr.shape[0], -1), "YH": yh[0].reshape(arr.shape[0], -1)}
    out = []
    for name, coeffs in bands.items():
        k = min(n_dims_per_band, coeffs.shape[1])
        dims = np.sort(rng.choice(coeffs.shape[1], k))
        curves, kept, skipped = [], [], 0
        for j in dims:
            try:
                curves.append(acf(coeffs[:, j], max_lag, label=f"{name}:{j}"))
                kept.append(int(j))
            except DegenerateSeriesError:
                skipped += 1
        if curves:
            stack = np.stack([c.values for c in curves])
            env = (stack.min(axis=0), np.median(stack, axis=0), stack.max(axis=0))
        else:
            env = tuple(np.full(max_lag + 1, np.nan) for _ in range(3))
        out.append(BandAcf(name, curves, kept, skipped, *env))
    return out


def _resample_sorted(values, n):
    s = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if s.size == n:
        return s
    return np.quantile(s, (np.arange(n) + 0.5) / n)


def wasserstein1_1d(a, b):
    """W1 between two empirical 1-D distributions via sorted samples.

    Unequal sample sizes are brought to the larger size by quantile
    interpolation of the shorter sample.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be nonempty")
    n = max(a.size, b.size)
    return float(np.mean(np.abs(_resample_sorted(a, n) - _resample_sorted(b, n))))


def normal_quantile_sample(mean, std, n):
    """Deterministic size-``n`` stand-in for ``N(mean, std^2)`` at mid-quantiles."""
    from scipy.stats import norm

    return norm.ppf((np.arange(n) + 0.5) / n, loc=mean, scale=std)


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)


def _piecewise_integral(f, breaks, n_per_unit=2000, n_min=2001):
    total = 0.0
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        if hi > lo:
            n = max(n_min, int(n_per_unit * (hi - lo)) | 1)
            total += quadrature_integrate_1d(f, lo, hi, n)
    return total


def moment_integral(k, box, lam, radius):
    """``int |x|^k exp(-dist(x, C)^2 / (2 lam))`` over ``[lo - radius, hi + radius]``."""
    lo, hi = box

    def f(x):
        dist = x - np.clip(x, lo, hi)
        return np.abs(x) ** k * np.exp(-dist * dist / (2.0 * lam))

    a, b = lo - radius, hi + radius
    breaks = sorted({a, b, lo, hi} | ({0.0} if a < 0.0 < b else set()))
    scale = max(1.0, 1.0 / math.sqrt(lam))
    return _piecewise_integral(f, breaks, n_per_unit=2000 * scale)


def verify_finite_moments(lam, box, k_max=4, tol=1e-12, max_radius=1e3):
    """Check that ``|x|^k`` has finite integral against the projection weight
    ``exp(-(x - P_C x)^2 / (2 lam))`` for ``k <= k_max``.

    The domain widens by doubling until the added tail mass is below
    ``tol``; NonConvergenceError if that never happens before ``max_radius``.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    values = {}
    for k in range(k_max + 1):
        radius = math.sqrt(lam)
        prev = moment_integral(k, box, lam, radius)
        while True:
            radius *= 2.0
            if radius > max_radius:
                raise NonConvergenceError(f"moment k={k} tail not decaying by |x| = {max_radius}")
            cur = moment_integral(k, box, lam, radius)
            if abs(cur - prev) < tol:
                break
            prev = cur
        values[k] = cur
    return CheckResult("finite_moments", True, {"lam": lam, "box": tuple(box), "moments": values})


def _posterior_grid(log_prior, sigma, y, lam, box, grid):
    lo, hi = box
    dist = grid - np.clip(grid, lo, hi)
    logp = -(y - grid) ** 2 / (2 * sigma ** 2) + log_prior(grid) - dist * dist / (2 * lam)
    return logp - logp.max()


def tv_distance_1d(log_prior, sigma, y1, y2, lam=5e-5, box=(-100.0, 100.0), lo=-20.0, hi=20.0, n=200001):
    """Total variation between two 1-D regularized posteriors by Simpson quadrature."""
    grid = np.linspace(lo, hi, n)
    p1 = np.exp(_posterior_grid(log_prior, sigma, y1, lam, box, grid))
    p2 = np.exp(_posterior_grid(log_prior, sigma, y2, lam, box, grid))

    def integ(vals):
        return quadrature_integrate_1d(lambda _: vals, lo, hi, n)

    p1 /= integ(p1)
    p2 /= integ(p2)
    return 0.5 * integ(np.abs(p1 - p2))


def verify_well_posedness(prior, sigma, y_pairs, lam=5e-5, box=(-100.0, 100.0), lo=-20.0, hi=20.0,
                          n=200001, max_slope_ratio=10.0):
    """Local Lipschitz dependence of the posterior on the data in total variation.

    ``prior`` must provide a 1-D ``log_density``.  Reports ``TV / |dy|`` per
    pair and passes when the slopes stay within ``max_slope_ratio``.
    """

    def log_prior(x):
        return np.asarray(prior.log_density(x[:, None]), dtype=np.float64).reshape(-1)

    slopes, tvs = [], []
    for y1, y2 in y_pairs:
        tv = tv_distance_1d(log_prior, sigma, y1, y2, lam, box, lo, hi, n)
        tvs.append(tv)
        dy = abs(y1 - y2)
        if dy > 0:
            slopes.append(tv / dy)
    slopes = np.asarray(slopes)
    ratio = float(slopes.max() / slopes.min()) if slopes.size and slopes.min() > 0 else float("inf")
    passed = bool(slopes.size == 0 or ratio <= max_slope_ratio)
    return CheckResult("well_posedness", passed, {"tv": tvs, "slopes": slopes.tolist(), "slope_ratio": ratio})


def gaussian_tv(mu1, mu2, std):
    """TV between ``N(mu1, std^2)`` and ``N(mu2, std^2)``."""
    return float(erf(abs(mu1 - mu2) / (2.0 * std * math.sqrt(2.0))))


@dataclass
class DiagnosticsReport:
    """Flat ``metric,band,dim,lag,value`` rows."""

    rows: list = field(default_factory=list)

    def add(self, metric, value, band="", dim=-1, lag=-1):
        self.rows.append((str(metric), str(band), int(dim), int(lag), float(value)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("metric,band,dim,lag,value\n")
            for m, b, d, l, v in self.rows:
                fh.write(f"{m},{b},{d},{l},{v:.17g}\n")

    @classmethod
    def from_csv(cls, path):
        rep = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rep.add(row["metric"], float(row["value"]), row["band"], int(row["dim"]), int(row["lag"]))
        return rep
