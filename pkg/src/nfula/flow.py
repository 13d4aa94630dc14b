"""NICE/Glow-style normalizing flows with hand-written reverse-mode gradients.

Direction convention: a model's layer list runs from the data side to the
latent side.  ``inverse`` maps an image ``x`` to a latent ``z`` (the
density-evaluation direction), ``forward`` maps ``z`` back to ``x``
(the sampling direction).  All layer kernels work on 2-D batches
``(n, d)``; the public helpers accept a single ``(d,)`` vector too.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import NonFiniteError, SingularScaleError
from .tensor import Rng, gaussian_vector, power_iteration_spectral_norm

LOG_2PI = math.log(2.0 * math.pi)


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


class MlpSubnet:
    """Fully connected network: hidden activations, linear output layer."""

    def __init__(self, sizes, rng=None, activation="relu", out_scale=0.1):
        if activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        rng = Rng(0) if rng is None else rng
        self.weights = []
        self.biases = []
        n_layers = len(self.sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = i == n_layers - 1
            scale = out_scale / math.sqrt(fan_in) if last else math.sqrt(2.0 / fan_in)
            self.weights.append(scale * gaussian_vector(rng, (fan_in, fan_out)))
            self.biases.append(0.01 * gaussian_vector(rng, fan_out) if not last else np.zeros(fan_out))

    def _act(self, a):
        return np.maximum(a, 0.0) if self.activation == "relu" else np.tanh(a)

    def forward(self, h):
        inputs = []
        pre = []
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            a = h @ w + b
            if i < n - 1:
                pre.append(a)
                h = self._act(a)
            else:
                h = a
        return h, (inputs, pre)

    def backward(self, cache, gout):
        inputs, pre = cache
        gws = [None] * len(self.weights)
        gbs = [None] * len(self.weights)
        g = gout
        for i in range(len(self.weights) - 1, -1, -1):
            gws[i] = inputs[i].T @ g
            gbs[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                a = pre[i - 1]
                if self.activation == "relu":
                    g = g * (a > 0.0)
                else:
                    g = g * (1.0 - np.tanh(a) ** 2)
        return g, gws, gbs

    def params(self, prefix):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}/w{i}"] = w
            out[f"{prefix}/b{i}"] = b
        return out

    def grads_dict(self, prefix, gws, gbs):
        out = {}
        for i, (gw, gb) in enumerate(zip(gws, gbs)):
            out[f"{prefix}/w{i}"] = gw
            out[f"{prefix}/b{i}"] = gb
        return out

    @classmethod
    def from_params(cls, entries, prefix, activation="relu"):
        net = cls.__new__(cls)
        net.activation = activation
        net.weights = []
        net.biases = []
        i = 0
        while f"{prefix}/w{i}" in entries:
            net.weights.append(np.array(entries[f"{prefix}/w{i}"], dtype=np.float64))
            net.biases.append(np.array(entries[f"{prefix}/b{i}"], dtype=np.float64).reshape(-1))
            i += 1
        if not net.weights:
            raise KeyError(f"no subnet weights under {prefix!r}")
        net.sizes = [net.weights[0].shape[0]] + [w.shape[1] for w in net.weights]
        return net


def default_hidden(n_passive):
    return max(32, 2 * n_passive)


class _Coupling:
    def __init__(self, mask):
        mask = np.asarray(mask).astype(bool).reshape(-1)
        if mask.all() or not mask.any():
            raise ValueError("coupling mask needs both active and passive coordinates")
        self.mask = mask
        self.active = np.flatnonzero(mask)
        self.passive = np.flatnonzero(~mask)
        self.d = mask.size


class AdditiveCoupling(_Coupling):
    """``z_active = x_active + eta(x_passive)``; unit Jacobian determinant."""

    kind = "additive"

    def __init__(self, mask, hidden=None, n_hidden=2, rng=None, activation="relu", subnet=None):
        super().__init__(mask)
        if subnet is None:
            width = default_hidden(self.passive.size) if hidden is None else hidden
            sizes = [self.passive.size] + [width] * n_hidden + [self.active.size]
            subnet = MlpSubnet(sizes, rng, activation)
        self.subnet = subnet

    def inverse(self, x):
        shift, net_cache = self.subnet.forward(x[:, self.passive])
        z = x.copy()
        z[:, self.active] += shift
        return z, np.zeros(x.shape[0]), net_cache

    def forward(self, z):
        shift, _ = self.subnet.forward(z[:, self.passive])
        x = z.copy()
        x[:, self.active] -= shift
        return x

    def backward(self, cache, gz, glogdet):
        gx = gz.copy()
        gin, gws, gbs = self.subnet.backward(cache, gz[:, self.active])
        gx[:, self.passive] += gin
        return gx, self.subnet.grads_dict("net", gws, gbs)

    def params(self):
        return self.subnet.params("net")


class AffineCoupling(_Coupling):
    """``z_active = x_active * sigmoid(h(x_passive) + 2) + t(x_passive)``.

    Glow's sigmoid-scaled affine coupling; its log-density gradient is not
    globally Lipschitz, so models containing it never certify.
    """

    kind = "affine"

    def __init__(self, mask, hidden=None, n_hidden=2, rng=None, activation="relu",
                 scale_subnet=None, shift_subnet=None):
        super().__init__(mask)
        width = default_hidden(self.passive.size) if hidden is None else hidden
        sizes = [self.passive.size] + [width] * n_hidden + [self.active.size]
        self.scale_subnet = scale_subnet or MlpSubnet(sizes, rng, activation)
        self.shift_subnet = shift_subnet or MlpSubnet(sizes, rng, activation)

    def _scale(self, xp):
        h, cache = self.scale_subnet.forward(xp)
        a = h + 2.0
        s = 1.0 / (1.0 + np.exp(-a))
        log_s = -np.logaddexp(0.0, -a)
        return s, log_s, cache

    def inverse(self, x):
        xp = x[:, self.passive]
        s, log_s, scache = self._scale(xp)
        t, tcache = self.shift_subnet.forward(xp)
        z = x.copy()
        z[:, self.active] = x[:, self.active] * s + t
        return z, log_s.sum(axis=1), (xp, x[:, self.active], s, scache, tcache)

    def forward(self, z):
        xp = z[:, self.passive]
        s, _, _ = self._scale(xp)
        t, _ = self.shift_subnet.forward(xp)
        x = z.copy()
        x[:, self.active] = (z[:, self.active] - t) / s
        return x

    def backward(self, cache, gz, glogdet):
        xp, xa, s, scache, tcache = cache
        gza = gz[:, self.active]
        gx = gz.copy()
        gx[:, self.active] = gza * s
        # d/dh of log sigmoid(h + 2) is 1 - s; of sigmoid(h + 2) is s(1 - s)
        gh = gza * xa * s * (1.0 - s) + glogdet[:, None] * (1.0 - s)
        gin_s, gws_s, gbs_s = self.scale_subnet.backward(scache, gh)
        gin_t, gws_t, gbs_t = self.shift_subnet.backward(tcache, gza)
        gx[:, self.passive] += gin_s + gin_t
        grads = self.scale_subnet.grads_dict("scale_net", gws_s, gbs_s)
        grads.update(self.shift_subnet.grads_dict("shift_net", gws_t, gbs_t))
        return gx, grads

    def params(self):
        out = self.scale_subnet.params("scale_net")
        out.update(self.shift_subnet.params("shift_net"))
        return out


class ActNorm:
    """Per-coordinate affine map ``z = scale * x + bias``."""

    kind = "actnorm"

    def __init__(self, d=None, scale=None, bias=None):
        if scale is None:
            if d is None:
                raise ValueError("need d or scale")
            scale = np.ones(d)
            self.initialized = False
        else:
            self.initialized = True
        self.scale = np.array(scale, dtype=np.float64).reshape(-1)
        self.bias = np.zeros_like(self.scale) if bias is None else np.array(bias, dtype=np.float64).reshape(-1)
        self.d = self.scale.size

    def initialize(self, x):
        """Data-dependent init: standardize the first batch per coordinate."""
        std = x.std(axis=0)
        std = np.where(std > 1e-6, std, 1.0)
        self.scale[:] = 1.0 / std
        self.bias[:] = -x.mean(axis=0) / std
        self.initialized = True

    def logdet(self):
        return float(np.sum(np.log(np.abs(self.scale))))

    def inverse(self, x):
        z = x * self.scale + self.bias
        return z, np.full(x.shape[0], self.logdet()), x

    def forward(self, z):
        if np.any(np.abs(self.scale) < 1e-12):
            raise SingularScaleError("ActNorm scale below 1e-12")
        return (z - self.bias) / self.scale

    def backward(self, cache, gz, glogdet):
        x = cache
        gx = gz * self.scale
        gscale = (gz * x).sum(axis=0) + glogdet.sum() / self.scale
        return gx, {"scale": gscale, "bias": gz.sum(axis=0)}

    def params(self):
        return {"scale": self.scale, "bias": self.bias}


class Permutation:
    """Coordinate shuffle ``z = x[:, perm]``."""

    kind = "permutation"

    def __init__(self, perm):
        self.perm = np.asarray(perm, dtype=np.int64).reshape(-1)
        if not np.array_equal(np.sort(self.perm), np.arange(self.perm.size)):
            raise ValueError("perm is not a bijection")
        self.inv_perm = np.argsort(self.perm)
        self.d = self.perm.size

    def inverse(self, x):
        return x[:, self.perm], np.zeros(x.shape[0]), None

    def forward(self, z):
        return z[:, self.inv_perm]

    def backward(self, cache, gz, glogdet):
        return gz[:, self.inv_perm], {}

    def params(self):
        return {}


@dataclass
class CertificationReport:
    certified: bool
    reasons: list = field(default_factory=list)
    empirical_hessian_bound: float | None = None


class FlowModel:
    """Stack of invertible layers over a standard normal base on R^d."""

    def __init__(self, d, layers=()):
        self.d = int(d)
        self.layers = list(layers)
        for layer in self.layers:
            if getattr(layer, "d", self.d) != self.d:
                raise ValueError("layer dimension does not match model dimension")

    # batch kernels -----------------------------------------------------
    def _inverse_batch(self, x, keep_cache=False):
        caches = []
        logdet = np.zeros(x.shape[0])
        h = x
        for i, layer in enumerate(self.layers):
            h, ld, cache = layer.inverse(h)
            _check_finite(h, f"layer {i} ({layer.kind}) output")
            logdet = logdet + ld
            if keep_cache:
                caches.append(cache)
        return h, logdet, caches

    def _backward(self, caches, gz, glogdet, want_params=True):
        grads = {}
        g = gz
        for i in range(len(self.layers) - 1, -1, -1):
            g, pg = self.layers[i].backward(caches[i], g, glogdet)
            if want_params:
                for name, val in pg.items():
                    grads[f"layer{i:03d}/{self.layers[i].kind}/{name}"] = val
        return g, grads

    # public API --------------------------------------------------------
    def inverse(self, x):
        x2, single = _as_batch(x, self.d)
        z, logdet, _ = self._inverse_batch(x2)
        return (z[0], float(logdet[0])) if single else (z, logdet)

    def forward(self, z):
        z2, single = _as_batch(z, self.d)
        h = z2
        for layer in reversed(self.layers):
            h = layer.forward(h)
            _check_finite(h, f"{layer.kind} forward output")
        return h[0] if single else h

    def log_density(self, x):
        x2, single = _as_batch(x, self.d)
        z, logdet, _ = self._inverse_batch(x2)
        lp = -0.5 * np.sum(z * z, axis=1) - 0.5 * self.d * LOG_2PI + logdet
        return float(lp[0]) if single else lp

    def grad_log_density(self, x):
        x2, single = _as_batch(x, self.d)
        z, _, caches = self._inverse_batch(x2, keep_cache=True)
        gx, _ = self._backward(caches, -z, np.ones(x2.shape[0]), want_params=False)
        return gx[0] if single else gx

    def nll_loss_and_grad(self, batch):
        x = np.asarray(batch, dtype=np.float64).reshape(-1, self.d)
        n = x.shape[0]
        if n == 0:
            raise ValueError("empty batch")
        z, logdet, caches = self._inverse_batch(x, keep_cache=True)
        loss = float(np.mean(0.5 * np.sum(z * z, axis=1) + 0.5 * self.d * LOG_2PI - logdet))
        _, grads = self._backward(caches, z / n, np.full(n, -1.0 / n))
        return loss, grads

    def parameters(self):
        """Ordered mapping of parameter name to the live array."""
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[f"layer{i:03d}/{layer.kind}/{name}"] = arr
        return out

    def sample(self, n, rng):
        return self.forward(gaussian_vector(rng, (n, self.d)))

    def actnorm_logdet(self):
        return sum(layer.logdet() for layer in self.layers if isinstance(layer, ActNorm))

    # serialization -----------------------------------------------------
    def to_entries(self):
        entries = {"meta/d": np.array([float(self.d)])}
        for i, layer in enumerate(self.layers):
            p = f"layer{i:03d}/{layer.kind}"
            if isinstance(layer, ActNorm):
                entries[f"{p}/scale"] = layer.scale
                entries[f"{p}/bias"] = layer.bias
                entries[f"{p}/initialized"] = np.array([float(layer.initialized)])
            elif isinstance(layer, Permutation):
                entries[f"{p}/perm"] = layer.perm.astype(np.float64)
            else:
                entries[f"{p}/mask"] = layer.mask.astype(np.float64)
                act = layer.subnet.activation if isinstance(layer, AdditiveCoupling) else layer.scale_subnet.activation
                entries[f"{p}/activation"] = np.array([1.0 if act == "relu" else 2.0])
                for name, arr in layer.params().items():
                    entries[f"{p}/{name}"] = arr
        return entries

    @classmethod
    def from_entries(cls, entries):
        d = int(entries["meta/d"][0])
        groups = {}
        for name, arr in entries.items():
            m = re.match(r"layer(\d+)/(\w+)/(.+)$", name)
            if m:
                groups.setdefault((int(m.group(1)), m.group(2)), {})[m.group(3)] = arr
        layers = []
        for (idx, kind) in sorted(groups):
            g = groups[(idx, kind)]
            if kind == "actnorm":
                layer = ActNorm(scale=g["scale"], bias=g["bias"])
                layer.initialized = bool(g.get("initialized", [1.0])[0])
            elif kind == "permutation":
                layer = Permutation(np.rint(g["perm"]).astype(np.int64))
            elif kind in ("additive", "affine"):
                act = "relu" if g.get("activation", [1.0])[0] == 1.0 else "tanh"
                if kind == "additive":
                    layer = AdditiveCoupling(g["mask"], subnet=MlpSubnet.from_params(g, "net", act))
                else:
                    layer = AffineCoupling(g["mask"],
                                           scale_subnet=MlpSubnet.from_params(g, "scale_net", act),
                                           shift_subnet=MlpSubnet.from_params(g, "shift_net", act))
            else:
                raise KeyError(f"unknown layer kind {kind!r}")
            layers.append(layer)
        return cls(d, layers)


def _as_batch(x, d):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.size != d:
            raise ValueError(f"expected length {d}, got {x.size}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected shape (n, {d}), got {x.shape}")
    return x, False


def alternating_masks(d, n):
    """Parity masks that alternate which half of the coordinates is active."""
    even = (np.arange(d) % 2 == 0)
    return [even if i % 2 == 0 else ~even for i in range(n)]


def build_flow(d, n_couplings=4, coupling="additive", actnorm=True, permutations=False,
               hidden=None, n_hidden=2, activation="relu", rng=None):
    """ActNorm followed by ``n_couplings`` alternating-mask couplings.

    With ``permutations=True`` a random permutation precedes every coupling
    after the first.
    """
    rng = Rng(0) if rng is None else rng
    layers = [ActNorm(d)] if actnorm else []
    layer_cls = {"additive": AdditiveCoupling, "affine": AffineCoupling}[coupling]
    for i, mask in enumerate(alternating_masks(d, n_couplings)):
        if permutations and i > 0:
            layers.append(Permutation(rng.permutation(d)))
        layers.append(layer_cls(mask, hidden=hidden, n_hidden=n_hidden, rng=rng, activation=activation))
    return FlowModel(d, layers)


# operation-level helpers --------------------------------------------------

def flow_inverse(model, x):
    return model.inverse(x)


def flow_forward(model, z):
    return model.forward(z)


def log_density(model, x):
    return model.log_density(x)


def grad_log_density(model, x):
    return model.grad_log_density(x)


def nll_loss_and_grad(model, batch):
    return model.nll_loss_and_grad(batch)


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def to_entries(self):
        out = {"adam/t": np.array([float(self.t)])}
        for name in self.m:
            out[f"adam/m/{name}"] = self.m[name]
            out[f"adam/v/{name}"] = self.v[name]
        return out

    @classmethod
    def from_entries(cls, entries):
        opt = cls()
        if "adam/t" in entries:
            opt.t = int(entries["adam/t"][0])
        for key, arr in entries.items():
            if key.startswith("adam/m/"):
                opt.m[key[7:]] = np.array(arr)
            elif key.startswith("adam/v/"):
                opt.v[key[7:]] = np.array(arr)
        return opt


@dataclass
class TrainingTrace:
    epoch_losses: list = field(default_factory=list)
    steps: int = 0

    def trailing_means(self, window=5):
        e = np.asarray(self.epoch_losses)
        if e.size < window:
            return e.copy()
        return np.convolve(e, np.ones(window) / window, mode="valid")


def train_flow(model, data, epochs, batch_size=256, lr=1e-3, jitter_sigma=1.0 / 255.0, seed=0,
               optimizer=None, start_epoch=0, trace=None):
    """Maximum-likelihood training with Adam on shuffled minibatches.

    Epoch ``e`` draws its shuffle and jitter from ``Rng(seed, e + 1)``, so a
    run resumed at ``start_epoch`` with the saved optimizer state replays
    exactly what an uninterrupted run would do.  Returns the
    ``TrainingTrace`` (sample-weighted mean loss per epoch).
    """
    data = np.asarray(data, dtype=np.float64).reshape(-1, model.d)
    if data.shape[0] == 0:
        raise ValueError("empty dataset")
    if lr < 0:
        raise ValueError("lr must be nonnegative")
    opt = Adam() if optimizer is None else optimizer
    trace = TrainingTrace() if trace is None else trace
    n = data.shape[0]
    bs = min(int(batch_size), n)
    for layer in model.layers:
        if isinstance(layer, ActNorm) and not layer.initialized:
            first = data[Rng(seed, 0).permutation(n)[:bs]]
            # ActNorm layers later in the stack see the partially transformed batch
            h = first
            for other in model.layers:
                if other is layer:
                    break
                h, _, _ = other.inverse(h)
            layer.initialize(h)
    params = model.parameters()
    for epoch in range(start_epoch, start_epoch + int(epochs)):
        rng = Rng(seed, epoch + 1)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            batch = data[idx]
            if jitter_sigma > 0:
                batch = batch + jitter_sigma * gaussian_vector(rng, batch.shape)
            try:
                loss, grads = model.nll_loss_and_grad(batch)
            except NonFiniteError as exc:
                raise NonFiniteError("training diverged", step=trace.steps) from exc
            if not math.isfinite(loss):
                raise NonFiniteError("training loss is not finite", step=trace.steps)
            total += loss * idx.size
            if lr > 0:
                opt.step(params, grads, lr)
            trace.steps += 1
        trace.epoch_losses.append(total / n)
    return trace


def certify_lipschitz(model):
    """Structural check that the log-density gradient is globally Lipschitz.

    Every coupling must be additive with ReLU subnets (piecewise-constant
    derivatives); scaling may only come from ActNorm constants.
    """
    reasons = []
    certified = True
    for i, layer in enumerate(model.layers):
        if isinstance(layer, AdditiveCoupling):
            if layer.subnet.activation != "relu":
                certified = False
                reasons.append(f"layer {i}: additive coupling with {layer.subnet.activation} subnet "
                               "(derivatives not piecewise constant)")
            else:
                reasons.append(f"layer {i}: additive coupling, ReLU subnet: ok")
        elif isinstance(layer, AffineCoupling):
            certified = False
            reasons.append(f"layer {i}: affine coupling with input-dependent scale: not certified")
        elif isinstance(layer, ActNorm):
            reasons.append(f"layer {i}: actnorm, constant scale: ok")
        elif isinstance(layer, Permutation):
            reasons.append(f"layer {i}: permutation: ok")
        else:
            certified = False
            reasons.append(f"layer {i}: unknown layer type {type(layer).__name__}")
    if not model.layers:
        reasons.append("empty flow: standard normal score is 1-Lipschitz")
    return CertificationReport(certified, reasons)


def hessian_spectral_norm(grad, x, fd_step=1e-7, iters=300, tol=1e-8, rng=None):
    """Spectral norm of the Jacobian of ``grad`` at ``x`` via central-difference
    Hessian-vector products and power iteration."""
    x = np.asarray(x, dtype=np.float64)

    def hvp(v):
        return (grad(x + fd_step * v) - grad(x - fd_step * v)) / (2.0 * fd_step)

    return power_iteration_spectral_norm(hvp, hvp, x.shape, iters=iters, tol=tol, rng=rng)


def empirical_hessian_bound(model, probes, fd_step=1e-7, iters=300, tol=1e-8):
    """Largest Hessian spectral norm of ``log q`` over the probe points."""
    probes = np.asarray(probes, dtype=np.float64).reshape(-1, model.d)
    if probes.shape[0] == 0:
        raise ValueError("need at least one probe")
    best = 0.0
    for j, x in enumerate(probes):
        val = hessian_spectral_norm(model.grad_log_density, x, fd_step, iters, tol, rng=Rng(0, j))
        best = max(best, val)
    return best


class NormalizingFlowDensity(DensityMixin, BaseEstimator):
    """Density estimator backed by an additive (or affine) coupling flow.

    Follows the scikit-learn estimator protocol: ``fit`` trains by maximum
    likelihood, ``score_samples`` returns log-densities, ``transform`` maps
    data to latents and ``inverse_transform`` maps latents back.

    Parameters
    ----------
    n_couplings : int
        Number of coupling layers, with alternating masks.
    coupling : {"additive", "affine"}
        Additive couplings keep the log-density gradient globally Lipschitz.
    actnorm : bool
        Prepend a data-initialized ActNorm layer.
    hidden : int or None
        Subnet width; ``None`` means ``max(32, 2 * n_passive)``.
    epochs, batch_size, learning_rate, jitter_sigma :
        Adam training schedule and per-sample Gaussian jitter.
    permutations : bool
        Insert random permutations between couplings.
    random_state : int
        Seed for initialization, shuffling and jitter.
    """

    def __init__(self, n_couplings=4, coupling="additive", actnorm=True, hidden=None,
                 n_hidden=2, epochs=100, batch_size=256, learning_rate=1e-3,
                 jitter_sigma=1.0 / 255.0, permutations=False, random_state=0):
        self.n_couplings = n_couplings
        self.coupling = coupling
        self.actnorm = actnorm
        self.hidden = hidden
        self.n_hidden = n_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.jitter_sigma = jitter_sigma
        self.permutations = permutations
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        d = X.shape[1]
        if d < 2 and self.n_couplings > 0:
            raise ValueError("coupling layers need at least 2 features")
        self.model_ = build_flow(d, self.n_couplings, self.coupling, self.actnorm, self.permutations,
                                 self.hidden, self.n_hidden, rng=Rng(self.random_state, 2**32))
        self.trace_ = train_flow(self.model_, X, self.epochs, self.batch_size, self.learning_rate,
                                 self.jitter_sigma, seed=self.random_state)
        self.n_features_in_ = d
        return self

    def score_samples(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return self.model_.log_density(X)

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def score_gradient(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return self.model_.grad_log_density(X)

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.inverse(check_array(X, dtype=np.float64))[0]

    def inverse_transform(self, Z):
        check_is_fitted(self, "model_")
        return self.model_.forward(check_array(Z, dtype=np.float64))

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "model_")
        seed = self.random_state if random_state is None else random_state
        return self.model_.sample(n_samples, Rng(seed, 7))

    def certify(self):
        check_is_fitted(self, "model_")
        return certify_lipschitz(self.model_)
