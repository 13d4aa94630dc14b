"""Linear forward operators with exact adjoints.

Every operator maps arrays of shape ``batch + input_shape`` to
``batch + output_shape``; the leading batch dimensions are optional.
"""

from __future__ import annotations

import math

import numpy as np

from .exceptions import BadKernelError, BadShapeError, WrongOperatorError
from .tensor import Rng, SparseMatrix, power_iteration_spectral_norm


class ForwardOperator:
    kind = "abstract"

    def __init__(self, input_shape, output_shape):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.output_shape = tuple(int(s) for s in output_shape)
        self._norm = None

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, y):
        raise NotImplementedError

    def __call__(self, x):
        return self.apply(x)

    def _check(self, x, shape, what):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[x.ndim - len(shape):] != shape or x.ndim < len(shape):
            raise BadShapeError(f"{what} shape {x.shape} does not end with {shape}")
        return x

    def norm(self, iters=1000, tol=1e-12):
        """Power-iteration estimate of the operator norm (cached)."""
        if self._norm is None:
            self._norm = power_iteration_spectral_norm(self.apply, self.adjoint, self.input_shape,
                                                       iters=iters, tol=tol)
        return self._norm

    def to_dense(self):
        """Explicit matrix, for small operators only."""
        d = int(np.prod(self.input_shape))
        eye = np.eye(d).reshape((d,) + self.input_shape)
        return self.apply(eye).reshape(d, -1).T


def operator_norm(op):
    return op.norm()


class IdentityOperator(ForwardOperator):
    kind = "identity"

    def __init__(self, shape):
        super().__init__(shape, shape)

    def apply(self, x):
        return self._check(x, self.input_shape, "input").copy()

    def adjoint(self, y):
        return self._check(y, self.output_shape, "output").copy()


class BlurOperator(ForwardOperator):
    """Circular 2-D convolution with an odd-sized kernel centred on its middle tap."""

    kind = "blur"

    def __init__(self, image_shape, kernel):
        image_shape = tuple(image_shape)
        super().__init__(image_shape, image_shape)
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
            raise BadKernelError(f"kernel must be 2-D with odd sides, got {kernel.shape}")
        if kernel.shape[0] > image_shape[0] or kernel.shape[1] > image_shape[1]:
            raise BadKernelError("kernel larger than image")
        self.kernel = kernel
        pad = np.zeros(image_shape)
        kh, kw = kernel.shape
        pad[:kh, :kw] = kernel
        pad = np.roll(pad, (-(kh // 2), -(kw // 2)), axis=(0, 1))
        self.transfer = np.fft.fft2(pad)

    def apply(self, x):
        x = self._check(x, self.input_shape, "input")
        return np.real(np.fft.ifft2(np.fft.fft2(x) * self.transfer))

    def adjoint(self, y):
        y = self._check(y, self.output_shape, "output")
        return np.real(np.fft.ifft2(np.fft.fft2(y) * np.conj(self.transfer)))


def motion_blur_kernel(size=9, row=None):
    """Horizontal averaging kernel: one full row of ``1/size``, zeros elsewhere."""
    k = np.zeros((size, size))
    k[size // 2 if row is None else row, :] = 1.0 / size
    return k


def make_blur(image_shape, kernel):
    return BlurOperator(image_shape, kernel)


class MaskOperator(ForwardOperator):
    """Diagonal 0/1 projector keeping a subset of pixels."""

    kind = "mask"

    def __init__(self, mask):
        mask = np.asarray(mask, dtype=np.float64)
        super().__init__(mask.shape, mask.shape)
        self.mask = (mask != 0).astype(np.float64)

    def apply(self, x):
        return self._check(x, self.input_shape, "input") * self.mask

    def adjoint(self, y):
        return self._check(y, self.output_shape, "output") * self.mask

    def norm(self, iters=1000, tol=1e-12):
        if self._norm is None:
            self._norm = 1.0 if self.mask.any() else 0.0
        return self._norm


def make_mask(image_shape, keep_fraction, rng):
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    d = int(np.prod(image_shape))
    n_keep = int(round(keep_fraction * d))
    mask = np.zeros(d)
    mask[rng.choice(d, n_keep)] = 1.0
    return MaskOperator(mask.reshape(image_shape))


class RadonOperator(ForwardOperator):
    """Parallel-beam line integrals as an explicit sparse system matrix.

    Coordinates are in pixel units with the origin at the image centre;
    ``x`` grows with the column index and ``y`` with the row index.  The
    ray for angle ``theta`` and detector offset ``s`` is
    ``{s (cos, sin) + t (-sin, cos)}``, sampled every ``step`` pixels with
    bilinear interpolation weights.  Detectors are evenly spaced and span
    the image diagonal.
    """

    kind = "radon"

    def __init__(self, image_side, n_angles, angle_lo=0.1 * math.pi, angle_hi=0.9 * math.pi,
                 n_detectors=None, step=0.5):
        if image_side < 8:
            raise ValueError("image_side must be >= 8")
        if n_angles < 2:
            raise ValueError("n_angles must be >= 2")
        n = int(image_side)
        if n_detectors is None:
            n_detectors = int(math.ceil(n * math.sqrt(2.0)))
        super().__init__((n, n), (n_angles, n_detectors))
        self.image_side = n
        self.n_angles = int(n_angles)
        self.n_detectors = int(n_detectors)
        self.angle_lo = float(angle_lo)
        self.angle_hi = float(angle_hi)
        # half-open sweep: the last angle stays below angle_hi
        self.angles = angle_lo + (angle_hi - angle_lo) * np.arange(n_angles) / n_angles
        self.detector_spacing = n * math.sqrt(2.0) / n_detectors
        self.detectors = (np.arange(n_detectors) - (n_detectors - 1) / 2.0) * self.detector_spacing
        self.step = float(step)
        self.matrix = self._assemble()
        self.matrix_t = self.matrix.transpose()

    def _assemble(self):
        n = self.image_side
        c = (n - 1) / 2.0
        half = n * math.sqrt(2.0) / 2.0 + 1.0
        ts = np.arange(-half, half + 1e-12, self.step)
        rows, cols, vals = [], [], []
        for a, theta in enumerate(self.angles):
            ct, st = math.cos(theta), math.sin(theta)
            px = self.detectors[:, None] * ct - ts[None, :] * st + c
            py = self.detectors[:, None] * st + ts[None, :] * ct + c
            ray = np.broadcast_to(a * self.n_detectors + np.arange(self.n_detectors)[:, None], px.shape)
            x0 = np.floor(px)
            y0 = np.floor(py)
            fx = px - x0
            fy = py - y0
            for dy, dx, w in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                              (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
                xi = x0 + dx
                yi = y0 + dy
                ok = (xi >= 0) & (xi < n) & (yi >= 0) & (yi < n) & (w > 0)
                rows.append(ray[ok])
                cols.append((yi[ok] * n + xi[ok]).astype(np.int64))
                vals.append(w[ok] * self.step)
        return SparseMatrix(self.n_angles * self.n_detectors, n * n,
                            (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)))

    def apply(self, x):
        x = self._check(x, self.input_shape, "input")
        flat = x.reshape(x.shape[:-2] + (-1,))
        return self.matrix.matvec(flat).reshape(x.shape[:-2] + self.output_shape)

    def adjoint(self, y):
        y = self._check(y, self.output_shape, "output")
        flat = y.reshape(y.shape[:-2] + (-1,))
        return self.matrix.rmatvec(flat).reshape(y.shape[:-2] + self.input_shape)

    def to_dense(self):
        return self.matrix.to_dense()


def make_radon(image_side, n_angles, angle_lo=0.1 * math.pi, angle_hi=0.9 * math.pi, n_detectors=None):
    return RadonOperator(image_side, n_angles, angle_lo, angle_hi, n_detectors)


def ramp_filter_kernel(n, spacing):
    """Spatial Ram-Lak kernel sampled on ``-n+1 .. n-1``."""
    k = np.arange(-(n - 1), n)
    h = np.zeros(k.size)
    h[k == 0] = 1.0 / (4.0 * spacing ** 2)
    odd = (k % 2) != 0
    h[odd] = -1.0 / (math.pi ** 2 * spacing ** 2 * k[odd].astype(np.float64) ** 2)
    return h


def fbp_reconstruct(op, sinogram, clip=(0.0, 1.0)):
    """Ram-Lak filtered backprojection; meant for chain initialization."""
    if not isinstance(op, RadonOperator):
        raise WrongOperatorError("filtered backprojection needs a RadonOperator")
    sino = np.asarray(sinogram, dtype=np.float64)
    if sino.shape != op.output_shape:
        raise BadShapeError(f"sinogram shape {sino.shape} != {op.output_shape}")
    tau = op.detector_spacing
    h = ramp_filter_kernel(op.n_detectors, tau)
    nfft = int(2 ** math.ceil(math.log2(sino.shape[1] + h.size - 1)))
    filt = np.fft.rfft(h, nfft)
    conv = np.fft.irfft(np.fft.rfft(sino, nfft, axis=1) * filt, nfft, axis=1)
    start = op.n_detectors - 1
    filtered = tau * conv[:, start:start + op.n_detectors]

    n = op.image_side
    c = (n - 1) / 2.0
    yy, xx = np.mgrid[0:n, 0:n]
    xs = (xx - c).ravel()
    ys = (yy - c).ravel()
    dtheta = (op.angle_hi - op.angle_lo) / op.n_angles
    img = np.zeros(n * n)
    for a, theta in enumerate(op.angles):
        s = xs * math.cos(theta) + ys * math.sin(theta)
        img += np.interp(s, op.detectors, filtered[a], left=0.0, right=0.0)
    img *= dtheta
    img = img.reshape(n, n)
    if clip is not None:
        img = np.clip(img, *clip)
    return img


def smallest_eigenvalue(matrix, iters=500, tol=1e-12, shift=None):
    """Smallest eigenvalue of a symmetric PSD matrix by shifted inverse iteration."""
    import scipy.linalg

    m = np.asarray(matrix, dtype=np.float64)
    d = m.shape[0]
    if shift is None:
        shift = 1e-12 * max(np.abs(m).max(), 1.0)
    lu = scipy.linalg.lu_factor(m + shift * np.eye(d))
    v = Rng(0, 0).normal(d)
    v /= np.linalg.norm(v)
    mu = 0.0
    for _ in range(iters):
        w = scipy.linalg.lu_solve(lu, v)
        new = float(np.linalg.norm(w))
        v = w / new
        if abs(new - mu) <= tol * new:
            mu = new
            break
        mu = new
    rayleigh = float(v @ m @ v)
    return rayleigh
