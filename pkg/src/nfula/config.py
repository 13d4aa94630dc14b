"""Experiment configuration: line-based ``key = value`` files.

Blank lines and ``#`` comments are ignored; sections are dotted key
prefixes (``sampler.delta = 5e-5``).  Every key has a default and unknown
keys are rejected with the offending line.  ``auto`` values are resolved
from ``problem`` so the echoed file is fully explicit.
"""

from __future__ import annotations

import math

from .exceptions import ConfigError

PROBLEMS = ("deblur", "inpaint", "ct", "toy2d")

# key: (type, default, help)
SCHEMA = {
    "problem": (str, "deblur", "deblur | inpaint | ct | toy2d"),
    "seed": (int, 0, "seed for every random draw"),
    "image_side": (int, 32, "side of the square ground-truth image"),
    "phantom": (str, "disk", "built-in phantom name or path to an NFT1/PGM image"),
    "likelihood": (str, "gaussian", "gaussian | poisson"),
    "sigma": (float, 0.02, "Gaussian noise std; for ct with sigma_rel > 0 it is recomputed"),
    "sigma_rel": (float, 0.0, "if > 0, sigma = sigma_rel * max(A x_true)"),
    "n0": (float, 4096.0, "Poisson photon count"),
    "mu": (float, 0.05, "Poisson attenuation scale"),
    "prior": (str, "flow", "flow | patch | gaussian | l1"),
    "checkpoint": (str, "", "NFCK checkpoint of the flow"),
    "patch_size": (int, 4, "patch side for the patch prior"),
    "stride": (int, 2, "patch stride for the patch prior"),
    "alpha": (float, 1.5, "prior weight"),
    "gaussian_mean": (float, 0.5, "mean of the isotropic Gaussian prior"),
    "gaussian_var": (float, 0.1, "variance of the isotropic Gaussian prior"),
    "l1_weight": (float, 1.0, "weight of the l1 prior"),
    "operator.kind": (str, "auto", "blur | mask | radon | identity; auto follows problem"),
    "operator.kernel_size": (int, 9, "odd side of the horizontal motion blur"),
    "operator.keep_fraction": (float, 0.2, "fraction of observed pixels for inpainting"),
    "operator.n_angles": (int, 30, "projection angles"),
    "operator.angle_lo": (float, 0.1 * math.pi, "first angle (radians)"),
    "operator.angle_hi": (float, 0.9 * math.pi, "end of the half-open angle range"),
    "operator.n_detectors": (int, 0, "detector bins; 0 means ceil(side * sqrt 2)"),
    "sampler.kernel": (str, "nfula", "ula | nfula | pnpula | myula"),
    "sampler.delta": (float, 5e-5, "step size"),
    "sampler.lam": (float, 5e-5, "projection weight lambda"),
    "sampler.box_lo": (float, -100.0, "lower corner of the projection box"),
    "sampler.box_hi": (float, 100.0, "upper corner of the projection box"),
    "sampler.iterations": (int, 15000, "total iterations K"),
    "sampler.burn_in": (int, 5000, "discarded iterations"),
    "sampler.thinning": (int, 1, "keep every n-th sample after burn-in"),
    "sampler.eps": (float, 0.0, "denoiser noise level (pnpula)"),
    "sampler.prox_lambda": (float, 0.0, "prox parameter (myula); 0 means delta"),
    "sampler.init": (str, "auto", "observation | fbp | zeros | mean; auto follows problem"),
    "sampler.save_chain": (bool, False, "write retained samples under chain/"),
    "sampler.trace_every": (int, 1, "trace row interval"),
    "flow.coupling": (str, "additive", "additive | affine"),
    "flow.n_couplings": (int, 4, "number of coupling layers"),
    "flow.actnorm": (bool, True, "leading ActNorm layer"),
    "flow.permutations": (bool, False, "random permutations between couplings"),
    "flow.hidden": (int, 0, "subnet width; 0 means max(32, 2 * passive)"),
    "flow.n_hidden": (int, 2, "subnet hidden layers"),
    "flow.activation": (str, "relu", "relu | tanh"),
    "flow.epochs": (int, 60, "training epochs"),
    "flow.batch_size": (int, 256, "minibatch size"),
    "flow.lr": (float, 1e-3, "Adam learning rate"),
    "flow.jitter_sigma": (float, 1.0 / 255.0, "training jitter std"),
    "flow.dataset": (str, "auto", "gaussian | mixture | blobs | directory of images"),
    "flow.mode": (str, "auto", "full | patch; auto follows prior"),
    "flow.n_train": (int, 10000, "toy samples drawn for gaussian / mixture"),
    "flow.n_images": (int, 6, "images drawn for the blobs dataset"),
    "paths.data": (str, "", "image directory for training"),
    "paths.observation": (str, "", "directory holding y.nft and x_true.nft"),
    "paths.output": (str, "out", "output directory"),
}

CHOICES = {
    "problem": PROBLEMS,
    "likelihood": ("gaussian", "poisson"),
    "prior": ("flow", "patch", "gaussian", "l1"),
    "operator.kind": ("auto", "blur", "mask", "radon", "identity"),
    "sampler.kernel": ("ula", "nfula", "pnpula", "myula"),
    "sampler.init": ("auto", "observation", "fbp", "zeros", "mean"),
    "flow.coupling": ("additive", "affine"),
    "flow.activation": ("relu", "tanh"),
    "flow.mode": ("auto", "full", "patch"),
}

_AUTO_OPERATOR = {"deblur": "blur", "inpaint": "mask", "ct": "radon", "toy2d": "identity"}


def _convert(key, raw, lineno):
    typ = SCHEMA[key][0]
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} = {raw!r} is not a valid {typ.__name__}") from None


class ExperimentConfig(dict):
    """Mapping of every schema key to its value."""

    @classmethod
    def defaults(cls):
        return cls({k: v[1] for k, v in SCHEMA.items()})

    @classmethod
    def parse(cls, text, source="<config>"):
        cfg = cls.defaults()
        seen = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{source} line {lineno}: expected 'key = value', got {line.strip()!r}")
            key, raw = (s.strip() for s in body.split("=", 1))
            if key not in SCHEMA:
                raise ConfigError(f"{source} line {lineno}: unknown key {key!r}")
            if key in seen:
                raise ConfigError(f"{source} line {lineno}: {key!r} already set on line {seen[key]}")
            seen[key] = lineno
            value = _convert(key, raw, lineno)
            if key in CHOICES and value not in CHOICES[key]:
                raise ConfigError(f"{source} line {lineno}: {key} must be one of {CHOICES[key]}, got {value!r}")
            cfg[key] = value
        return cfg.resolved()

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.parse(fh.read(), source=str(path))

    def override(self, **kv):
        out = ExperimentConfig(self)
        for k, v in kv.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown key {k!r}")
            out[k] = v
        return out.resolved()

    def resolved(self):
        out = ExperimentConfig(self)
        if out["operator.kind"] == "auto":
            out["operator.kind"] = _AUTO_OPERATOR[out["problem"]]
        if out["sampler.init"] == "auto":
            out["sampler.init"] = "fbp" if out["operator.kind"] == "radon" else "observation"
        if out["flow.mode"] == "auto":
            out["flow.mode"] = "patch" if out["prior"] == "patch" else "full"
        if out["flow.dataset"] == "auto":
            out["flow.dataset"] = "gaussian" if out["problem"] == "toy2d" else "blobs"
        if out["sampler.burn_in"] >= out["sampler.iterations"]:
            raise ConfigError("sampler.burn_in must be smaller than sampler.iterations")
        return out

    def section(self, prefix):
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.items() if k.startswith(p)}

    def dumps(self):
        lines = []
        for key in SCHEMA:
            v = self[key]
            if isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, float):
                s = "%.17g" % v
            else:
                s = str(v)
            lines.append(f"{key} = {s}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())


def load_config(path):
    return ExperimentConfig.load(path)
