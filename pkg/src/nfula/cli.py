"""Command-line entry point: ``nfula <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import verification
from .config import ExperimentConfig
from .diagnostics import DiagnosticsReport, acf, chain_acf_bands, psnr
from .exceptions import ChainAbortedError, ConfigError, DegenerateSeriesError, NfulaError
from .flow import (Adam, FlowModel, TrainingTrace, build_flow, certify_lipschitz, empirical_hessian_bound,
                   train_flow)
from .io import read_checkpoint, read_image, read_tensor, write_checkpoint, write_tensor
from .likelihoods import GaussianLikelihood, PoissonLikelihood, simulate_observation
from .operators import (IdentityOperator, RadonOperator, fbp_reconstruct, make_blur, make_mask, make_radon,
                        motion_blur_kernel)
from .phantoms import PHANTOMS, phantom, random_blobs
from .priors import FlowPrior, GaussianMmseDenoiser, GaussianPrior, L1Prior, PatchPrior, extract_patches
from .samplers import BoxSet, SampleStore, SamplerConfig, posterior_summaries, run_chain, step_bound
from .tensor import Rng, gaussian_vector

log = logging.getLogger("nfula")

# Rng streams per seed, so each artifact draws from its own sequence
STREAM_MASK, STREAM_NOISE, STREAM_TRUTH, STREAM_DATA, STREAM_INIT = 101, 102, 103, 104, 105


def fmt(v):
    return "%.17g" % v


# problem assembly --------------------------------------------------------

def ground_truth(cfg):
    if cfg["problem"] == "toy2d":
        mean, cov, _ = verification.gaussian_2d_data(1)
        z = gaussian_vector(Rng(cfg["seed"], STREAM_TRUTH), 2)
        return mean + np.linalg.cholesky(cov) @ z
    name = cfg["phantom"]
    if name in PHANTOMS:
        return phantom(name, cfg["image_side"])
    return read_image(name)


def build_operator(cfg, shape):
    kind = cfg["operator.kind"]
    op = cfg.section("operator")
    if kind == "identity":
        return IdentityOperator(shape)
    if kind == "blur":
        return make_blur(shape, motion_blur_kernel(op["kernel_size"]))
    if kind == "mask":
        return make_mask(shape, op["keep_fraction"], Rng(cfg["seed"], STREAM_MASK))
    if kind == "radon":
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ConfigError("radon operator needs a square image")
        return make_radon(shape[0], op["n_angles"], op["angle_lo"], op["angle_hi"], op["n_detectors"] or None)
    raise ConfigError(f"unknown operator.kind {kind!r}")


def noise_sigma(cfg, op, x_true):
    if cfg["sigma_rel"] > 0:
        return cfg["sigma_rel"] * float(np.max(op.apply(x_true)))
    return cfg["sigma"]


def degrade(cfg, x_true):
    op = build_operator(cfg, x_true.shape)
    rng = Rng(cfg["seed"], STREAM_NOISE)
    if cfg["likelihood"] == "gaussian":
        sigma = noise_sigma(cfg, op, x_true)
        y = simulate_observation("gaussian", op, x_true, rng, sigma=sigma)
    else:
        sigma = 0.0
        y = simulate_observation("poisson", op, x_true, rng, n0=cfg["n0"], mu=cfg["mu"])
    return op, y, sigma


def build_likelihood(cfg, op, y, x_true):
    if cfg["likelihood"] == "gaussian":
        return GaussianLikelihood(op, y, noise_sigma(cfg, op, x_true) if x_true is not None else cfg["sigma"])
    return PoissonLikelihood(op, y, cfg["n0"], cfg["mu"])


def load_flow(path):
    return FlowModel.from_entries(read_checkpoint(path))


def build_prior(cfg, shape):
    kind = cfg["prior"]
    d = int(np.prod(shape))
    if kind in ("flow", "patch"):
        if not cfg["checkpoint"]:
            raise ConfigError(f"prior = {kind} needs a checkpoint")
        model = load_flow(cfg["checkpoint"])
        if kind == "flow":
            return FlowPrior(model, shape)
        return PatchPrior(model, cfg["patch_size"], cfg["stride"])
    mean = np.full(shape, cfg["gaussian_mean"])
    if kind == "gaussian":
        if cfg["sampler.kernel"] == "pnpula":
            return GaussianMmseDenoiser(mean.reshape(-1), np.full(d, cfg["gaussian_var"]), cfg["sampler.eps"])
        return GaussianPrior(mean, np.full(d, cfg["gaussian_var"]))
    return L1Prior(cfg["l1_weight"])


def initial_point(cfg, op, y, shape):
    init = cfg["sampler.init"]
    if init == "fbp":
        if not isinstance(op, RadonOperator):
            raise ConfigError("sampler.init = fbp needs operator.kind = radon")
        return fbp_reconstruct(op, y)
    if init == "observation":
        if y.shape != shape:
            raise ConfigError("sampler.init = observation needs y in image space")
        return np.array(y, dtype=np.float64)
    if init == "mean":
        return np.full(shape, cfg["gaussian_mean"])
    return np.zeros(shape)


def sampler_config(cfg, stream=0):
    s = cfg.section("sampler")
    return SamplerConfig(delta=s["delta"], iterations=s["iterations"], kernel=s["kernel"], alpha=cfg["alpha"],
                         lam=s["lam"], box=BoxSet(s["box_lo"], s["box_hi"]), burn_in=s["burn_in"],
                         thinning=s["thinning"], seed=cfg["seed"], stream=stream,
                         eps=s["eps"] or None, prox_lambda=s["prox_lambda"] or None,
                         trace_every=s["trace_every"])


# training data -------------------------------------------------------------

def toy_dataset(name, n, seed):
    if name == "gaussian":
        return verification.gaussian_2d_data(n, seed)[2]
    rng = Rng(seed, STREAM_DATA)
    centers = np.array([[0.3, 0.3], [0.7, 0.65]])
    labels = (rng.uniform(n) < 0.5).astype(np.int64)
    return centers[labels] + 0.06 * gaussian_vector(rng, (n, 2))


def training_images(cfg):
    name = cfg["flow.dataset"]
    if name == "blobs":
        rng = Rng(cfg["seed"], STREAM_DATA)
        return [random_blobs(cfg["image_side"], rng) for _ in range(cfg["flow.n_images"])]
    folder = cfg["paths.data"] or name
    if not os.path.isdir(folder):
        raise ConfigError(f"flow.dataset {name!r} is neither a generator nor a directory")
    files = sorted(f for f in os.listdir(folder) if f.endswith((".nft", ".pgm")))
    if not files:
        raise ConfigError(f"no .nft or .pgm images in {folder}")
    return [read_image(os.path.join(folder, f)) for f in files]


def training_data(cfg):
    if cfg["flow.dataset"] in ("gaussian", "mixture"):
        return toy_dataset(cfg["flow.dataset"], cfg["flow.n_train"], cfg["seed"])
    imgs = training_images(cfg)
    if cfg["flow.mode"] == "patch":
        return np.concatenate([extract_patches(im, cfg["patch_size"], 1) for im in imgs])
    return np.stack([im.reshape(-1) for im in imgs])


# commands ------------------------------------------------------------------

def cmd_phantom(args):
    img = phantom(args.name, args.side)
    write_tensor(args.out, img)
    print(f"wrote {args.out} shape {img.shape[0]}x{img.shape[1]}")
    return 0


def _load(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.defaults().resolved()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.override(seed=args.seed)
    return cfg


def cmd_degrade(args):
    cfg = _load(args)
    out = args.out or cfg["paths.output"]
    os.makedirs(out, exist_ok=True)
    x_true = ground_truth(cfg)
    op, y, sigma = degrade(cfg, x_true)
    write_tensor(os.path.join(out, "x_true.nft"), x_true)
    write_tensor(os.path.join(out, "y.nft"), y)
    with open(os.path.join(out, "operator.txt"), "w") as fh:
        fh.write(f"kind = {cfg['operator.kind']}\n")
        for k, v in cfg.section("operator").items():
            if k != "kind":
                fh.write(f"{k} = {fmt(v) if isinstance(v, float) else v}\n")
        fh.write(f"input_shape = {'x'.join(map(str, op.input_shape))}\n")
        fh.write(f"output_shape = {'x'.join(map(str, op.output_shape))}\n")
        fh.write(f"sigma = {fmt(sigma)}\n")
    if cfg["operator.kind"] == "mask":
        write_tensor(os.path.join(out, "mask.nft"), op.mask.astype(np.float64))
    cfg.write(os.path.join(out, "config.txt"))
    if y.shape == x_true.shape:
        print(f"observation_psnr = {fmt(psnr(y, x_true))}")
    print(f"sigma = {fmt(sigma)}")
    return 0


def _write_trace(path, trace):
    with open(path, "w") as fh:
        fh.write("epoch,loss,trailing5\n")
        tm = trace.trailing_means(5)
        offset = len(trace.epoch_losses) - tm.size
        for i, loss in enumerate(trace.epoch_losses):
            t = tm[i - offset] if i >= offset else float("nan")
            fh.write(f"{i},{fmt(loss)},{fmt(t)}\n")


def cmd_train_flow(args):
    cfg = _load(args)
    f = cfg.section("flow")
    out = args.out
    data = training_data(cfg)
    if args.resume and os.path.exists(out):
        entries = read_checkpoint(out)
        model = FlowModel.from_entries(entries)
        opt = Adam.from_entries(entries)
        start = int(entries["train/epoch"][0])
        trace = TrainingTrace(list(entries["train/losses"]), int(entries["train/steps"][0]))
        if model.d != data.shape[1]:
            raise ConfigError("checkpoint dimension does not match the training data")
    else:
        model = build_flow(data.shape[1], f["n_couplings"], f["coupling"], f["actnorm"], f["permutations"],
                           f["hidden"] or None, f["n_hidden"], f["activation"], Rng(cfg["seed"], STREAM_INIT))
        opt, start, trace = Adam(), 0, TrainingTrace()
    todo = max(0, f["epochs"] - start)
    if args.epochs is not None:
        todo = min(todo, args.epochs)
    train_flow(model, data, todo, f["batch_size"], f["lr"], f["jitter_sigma"], seed=cfg["seed"], optimizer=opt,
               start_epoch=start, trace=trace)
    entries = model.to_entries()
    entries.update(opt.to_entries())
    entries["train/epoch"] = np.array([float(start + todo)])
    entries["train/steps"] = np.array([float(trace.steps)])
    entries["train/losses"] = np.asarray(trace.epoch_losses, dtype=np.float64)
    parent = os.path.dirname(os.path.abspath(out))
    os.makedirs(parent, exist_ok=True)
    write_checkpoint(out, entries)
    _write_trace(args.trace or out + ".trace.csv", trace)
    print(f"epochs = {start + todo}")
    if trace.epoch_losses:
        print(f"final_loss = {fmt(trace.epoch_losses[-1])}")
    print(f"certified = {str(certify_lipschitz(model).certified).lower()}")
    return 0


def _run_one(cfg, stream, out, lik, prior, x0, x_ref):
    os.makedirs(out, exist_ok=True)
    scfg = sampler_config(cfg, stream)
    if cfg["sampler.save_chain"]:
        store = SampleStore(spill_dir=os.path.join(out, "chain"))
        tmp = None
    else:
        tmp = tempfile.TemporaryDirectory()
        store = SampleStore(spill_dir=tmp.name)
    status = 0
    try:
        state, store, trace = run_chain(scfg, lik, prior, x0, x_ref=x_ref, store=store)
    except ChainAbortedError as exc:
        log.error("chain %d aborted at iteration %d: %s", stream, exc.iteration, exc)
        state, store, trace, status = exc.state, exc.store, None, 3
    try:
        if len(store):
            mean, std = posterior_summaries(store)
            write_tensor(os.path.join(out, "mean.nft"), mean)
            write_tensor(os.path.join(out, "std.nft"), std)
        if trace is not None:
            trace.to_csv(os.path.join(out, "trace.csv"))
        cfg.write(os.path.join(out, "config.txt"))
        with open(os.path.join(out, "summary.txt"), "w") as fh:
            fh.write(f"status = {'ok' if status == 0 else 'aborted'}\n")
            fh.write(f"iterations = {state.k}\n")
            fh.write(f"retained = {len(store)}\n")
            fh.write(f"projection_active = {state.projection_active_count}\n")
            fh.write(f"escape_count = {state.escape_count}\n")
            if len(store) and x_ref is not None and x_ref.shape == mean.shape:
                fh.write(f"mean_psnr = {fmt(psnr(mean, x_ref))}\n")
            for w in state.warnings:
                fh.write(f"warning = {w}\n")
    finally:
        if tmp is not None:
            tmp.cleanup()
    return status


def cmd_sample(args):
    cfg = _load(args)
    out = args.out or cfg["paths.output"]
    obs = args.obs or cfg["paths.observation"] or out
    y_path = os.path.join(obs, "y.nft")
    if not os.path.exists(y_path):
        raise ConfigError(f"no observation at {y_path}; run degrade first")
    y = read_tensor(y_path)
    xt_path = os.path.join(obs, "x_true.nft")
    x_true = read_tensor(xt_path) if os.path.exists(xt_path) else None
    shape = x_true.shape if x_true is not None else ((cfg["image_side"],) * 2 if cfg["problem"] != "toy2d" else (2,))
    op = build_operator(cfg, shape)
    lik = build_likelihood(cfg, op, y, x_true)
    prior = build_prior(cfg, shape)
    x0 = initial_point(cfg, op, y, shape)
    n = max(1, args.chains)
    if n == 1:
        return _run_one(cfg, 0, out, lik, prior, x0, x_true)
    workers = min(n, int(os.environ.get("NFL_THREADS", os.cpu_count() or 1)) or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_one, cfg, i, os.path.join(out, f"chain_{i:03d}"), lik, prior, x0, x_true)
                   for i in range(n)]
        codes = [f.result() for f in futures]
    return max(codes)


def cmd_certify(args):
    model = load_flow(args.checkpoint)
    rep = certify_lipschitz(model)
    print(f"certified = {str(rep.certified).lower()}")
    for r in rep.reasons:
        print(f"reason = {r}")
    rng = Rng(args.seed, 0)
    probes = args.radius * (2.0 * rng.uniform((args.probes, model.d)) - 1.0)
    bound = empirical_hessian_bound(model, probes)
    print(f"hessian_bound = {fmt(bound)}")
    print(f"probe_radius = {fmt(args.radius)}")
    print(f"step_bound = {fmt(step_bound(args.Ly, args.alpha, bound, args.lam))}")
    return 0


def _load_chain(path):
    sub = os.path.join(path, "chain")
    store = SampleStore.from_directory(sub if os.path.isdir(sub) else path)
    return store.as_array()


def cmd_diagnose(args):
    samples = _load_chain(args.chain)
    rep = DiagnosticsReport()
    mean = samples.mean(axis=0)
    rep.add("n_samples", samples.shape[0])
    if args.ref:
        ref = read_tensor(args.ref)
        rep.add("psnr_mean", psnr(mean, ref))
    rep.add("std_mean", float(np.mean(samples.std(axis=0, ddof=1))) if samples.shape[0] > 1 else 0.0)
    max_lag = min(args.max_lag, samples.shape[0] - 2)
    if samples.ndim == 3:
        bands = chain_acf_bands(samples, args.dims, max_lag, Rng(args.seed, 0))
        for band in bands:
            rep.add("skipped", band.skipped, band.band)
            for curve, dim in zip(band.curves, band.dims):
                for lag, val in enumerate(curve.values):
                    rep.add("acf", val, band.band, dim, lag)
            for label, env in (("acf_min", band.envelope_min), ("acf_median", band.envelope_median),
                               ("acf_max", band.envelope_max)):
                for lag, val in enumerate(env):
                    rep.add(label, val, band.band, -1, lag)
    else:
        flat = samples.reshape(samples.shape[0], -1)
        for dim in range(min(args.dims, flat.shape[1])):
            try:
                curve = acf(flat[:, dim], max_lag)
            except DegenerateSeriesError:
                rep.add("skipped", 1, "X", dim)
                continue
            for lag, val in enumerate(curve.values):
                rep.add("acf", val, "X", dim, lag)
    rep.to_csv(args.out)
    print(f"rows = {len(rep.rows)}")
    return 0


def _flatten(prefix, value, out):
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            _flatten(f"{prefix}[{i}]", v, out)
    else:
        out.append((prefix, value))


def cmd_verify(args):
    names = list(verification.SUITES) if args.suite == "all" else [args.suite]
    rows, failed = [], 0
    for name in names:
        if name not in verification.SUITES:
            raise ConfigError(f"unknown suite {name!r}; choose from all, {', '.join(verification.SUITES)}")
        try:
            res = verification.SUITES[name]()
            passed, measured = res.passed, res.measured
        except Exception as exc:  # collected, not fail-fast
            passed, measured = False, {"error": f"{type(exc).__name__}: {exc}"}
        failed += not passed
        print(f"{name}: {'PASS' if passed else 'FAIL'}")
        flat = []
        _flatten("", measured, flat)
        for key, val in flat:
            rows.append((name, passed, key, val))
            if isinstance(val, (float, np.floating)):
                print(f"  {key} = {fmt(val)}")
            else:
                print(f"  {key} = {val}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("suite,passed,metric,value\n")
            for name, passed, key, val in rows:
                v = fmt(val) if isinstance(val, (float, np.floating)) else str(val).replace(",", ";")
                fh.write(f"{name},{int(passed)},{key},{v}\n")
    return 1 if failed else 0


def build_parser():
    p = argparse.ArgumentParser(prog="nfula", description="Normalizing-flow priors with projected Langevin sampling.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", help="write a built-in phantom as NFT1")
    s.add_argument("--name", default="disk", choices=sorted(PHANTOMS))
    s.add_argument("--side", type=int, default=32)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("degrade", help="simulate an observation y = A x + noise")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("train-flow", help="train a flow and write an NFCK checkpoint")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--seed", type=int)
    s.add_argument("--resume", action="store_true", help="continue from --out if it exists")
    s.add_argument("--epochs", type=int, help="run at most this many epochs in this invocation")
    s.add_argument("--trace", help="loss trace CSV (default <out>.trace.csv)")
    s.set_defaults(func=cmd_train_flow)

    s = sub.add_parser("sample", help="run the Langevin sampler")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--obs", help="directory with y.nft (default paths.observation, then --out)")
    s.add_argument("--seed", type=int)
    s.add_argument("--chains", type=int, default=1)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("certify", help="Lipschitz certification of a flow checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--Ly", type=float, default=1.0, help="likelihood gradient Lipschitz constant")
    s.add_argument("--alpha", type=float, default=1.5)
    s.add_argument("--lam", type=float, default=5e-5)
    s.add_argument("--probes", type=int, default=20)
    s.add_argument("--radius", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("diagnose", help="PSNR and wavelet-band ACF report")
    s.add_argument("--chain", required=True, help="chain directory of NFT1 chunks (or a sample output dir)")
    s.add_argument("--ref", help="reference image (NFT1)")
    s.add_argument("--out", required=True)
    s.add_argument("--max-lag", type=int, default=100)
    s.add_argument("--dims", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("verify", help="run a verification suite")
    s.add_argument("suite", help="suite name or 'all'")
    s.add_argument("--out", help="CSV of measured values")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (NfulaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
