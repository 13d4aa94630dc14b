"""Numerical primitives: validated float64 arrays, seeded streams, sparse
matrices, power iteration and Simpson quadrature.

Dense tensors are plain ``numpy.ndarray`` objects of dtype float64; the
helpers here only enforce the conventions (dtype, finiteness) at the
boundaries where user data enters.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .exceptions import NonConvergenceError, NonFiniteError

__all__ = [
    "as_tensor",
    "Rng",
    "box_muller",
    "gaussian_vector",
    "SparseMatrix",
    "power_iteration_spectral_norm",
    "quadrature_integrate_1d",
    "adjoint_mismatch",
]


def as_tensor(x, name="x", copy=False):
    """Return ``x`` as a float64 array, rejecting NaN and Inf."""
    arr = np.array(x, dtype=np.float64, copy=copy) if copy else np.asarray(x, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


class Rng:
    """Counter-based random stream identified by ``(seed, stream)``.

    Backed by the Philox generator, keyed with both integers so parallel
    chains get independent streams without re-seeding tricks.
    """

    def __init__(self, seed=0, stream=0):
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream & 0xFFFFFFFFFFFFFFFF],
                       dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key)
        self.generator = np.random.Generator(self._bitgen)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"

    def uniform(self, size=None):
        return self.generator.random(size)

    def normal(self, shape):
        return gaussian_vector(self, shape)

    def choice(self, n, k):
        """``k`` distinct indices from ``range(n)``."""
        return self.generator.choice(n, size=k, replace=False)

    def permutation(self, n):
        return self.generator.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def poisson(self, lam):
        return self.generator.poisson(lam)

    def spawn(self, stream):
        return Rng(self.seed, stream)

    def get_state(self):
        return self._bitgen.state

    def set_state(self, state):
        self._bitgen.state = state


def box_muller(u1, u2):
    """Map uniforms in [0, 1) to two independent standard normals.

    Uses ``1 - u1`` inside the logarithm so ``u1 = 0`` stays finite.
    """
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = 2.0 * np.pi * u2
    return r * np.cos(theta), r * np.sin(theta)


def gaussian_vector(rng, d):
    """Draw i.i.d. N(0, 1) values; ``d`` is a count or a shape tuple."""
    shape = (int(d),) if np.isscalar(d) else tuple(int(s) for s in d)
    n = int(np.prod(shape))
    if n < 1:
        raise ValueError("need at least one draw")
    m = (n + 1) // 2
    u = rng.uniform(2 * m)
    c, s = box_muller(u[:m], u[m:])
    return np.concatenate([c, s])[:n].reshape(shape)


class SparseMatrix:
    """Real sparse matrix assembled from (row, col, value) triplets.

    Duplicate coordinates are summed and explicit zeros dropped at
    construction.  Products accept a leading batch dimension.
    """

    def __init__(self, rows, cols, triplets=None, *, csr=None):
        self.rows = int(rows)
        self.cols = int(cols)
        if csr is None:
            if triplets is None:
                r = c = np.zeros(0, dtype=np.int64)
                v = np.zeros(0)
            else:
                r, c, v = triplets
            r = np.asarray(r, dtype=np.int64)
            c = np.asarray(c, dtype=np.int64)
            v = np.asarray(v, dtype=np.float64)
            if r.size and (r.min() < 0 or r.max() >= self.rows or c.min() < 0 or c.max() >= self.cols):
                raise IndexError("triplet index out of bounds")
            csr = sp.coo_matrix((v, (r, c)), shape=(self.rows, self.cols)).tocsr()
        csr.sum_duplicates()
        csr.eliminate_zeros()
        self._csr = csr
        self._csr_t = None

    @property
    def nnz(self):
        return self._csr.nnz

    def triplets(self):
        coo = self._csr.tocoo()
        return coo.row.copy(), coo.col.copy(), coo.data.copy()

    def transpose(self):
        return SparseMatrix(self.cols, self.rows, csr=self._csr.T.tocsr())

    @property
    def T(self):
        return self.transpose()

    def matvec(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return self._csr @ x
        return (self._csr @ x.reshape(-1, self.cols).T).T.reshape(x.shape[:-1] + (self.rows,))

    def rmatvec(self, y):
        """Product with the transpose, ``M^T y``."""
        if self._csr_t is None:
            self._csr_t = self._csr.T.tocsr()
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            return self._csr_t @ y
        return (self._csr_t @ y.reshape(-1, self.rows).T).T.reshape(y.shape[:-1] + (self.cols,))

    def __matmul__(self, x):
        return self.matvec(x)

    def to_dense(self):
        return self._csr.toarray()


def power_iteration_spectral_norm(apply, applyT, d, iters=500, tol=1e-10, rng=None,
                                  return_history=False):
    """Largest singular value of the linear map ``apply`` by power iteration.

    Iterates ``v <- A^T A v / ||A^T A v||`` and tracks ``||A v||``; for an
    adjoint pair that estimate is nondecreasing.  ``d`` is the input size or
    shape.  Raises NonConvergenceError when the last relative change still
    exceeds ``tol`` after ``iters`` iterations.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    shape = (int(d),) if np.isscalar(d) else tuple(d)
    rng = Rng(0, 0) if rng is None else rng
    v = gaussian_vector(rng, shape)
    v /= np.linalg.norm(v)
    history = []
    est = 0.0
    rel = np.inf
    for _ in range(iters):
        av = apply(v)
        new = float(np.linalg.norm(av))
        if not math.isfinite(new):
            raise NonFiniteError("power iteration produced a non-finite norm")
        history.append(new)
        rel = abs(new - est) / max(new, 1e-300)
        est = new
        if new == 0.0:
            break
        w = applyT(av)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
        if rel <= tol:
            break
    if rel > tol:
        raise NonConvergenceError(
            f"power iteration: relative change {rel:.3e} > tol {tol:.1e} after {iters} iterations")
    if return_history:
        return est, history
    return est


def quadrature_integrate_1d(f, lo, hi, n=1001):
    """Composite Simpson rule for ``f`` on ``[lo, hi]``.

    ``n`` is the number of sample points; an even count is bumped to the
    next odd one so every panel is a full Simpson pair.  ``f`` must accept
    a numpy array.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    if n < 2:
        raise ValueError("need n >= 2")
    n = int(n)
    if n % 2 == 0:
        n += 1
    x = np.linspace(lo, hi, n)
    fx = np.asarray(f(x), dtype=np.float64)
    if fx.shape == ():
        fx = np.full(n, float(fx))
    h = (hi - lo) / (n - 1)
    return float(h / 3.0 * (fx[0] + fx[-1] + 4.0 * fx[1:-1:2].sum() + 2.0 * fx[2:-1:2].sum()))


def adjoint_mismatch(apply, applyT, x, y):
    """|<Ax, y> - <x, A^T y>| scaled by ``||x|| ||y|| + 1``."""
    lhs = float(np.vdot(apply(x), y))
    rhs = float(np.vdot(x, applyT(y)))
    return abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y) + 1.0)
