import os

import numpy as np
import pytest

from nfula import verification
from nfula.cli import main
from nfula.config import SCHEMA, ExperimentConfig
from nfula.diagnostics import CheckResult
from nfula.exceptions import ConfigError
from nfula.io import read_checkpoint, read_tensor


def test_defaults_cover_schema():
    cfg = ExperimentConfig.defaults()
    assert set(cfg) == set(SCHEMA)


def test_parse_comments_sections_and_types():
    text = """
# header comment
problem = inpaint   # trailing comment
seed = 7
sampler.delta = 1e-4
sampler.save_chain = yes
flow.coupling = affine
"""
    cfg = ExperimentConfig.parse(text)
    assert cfg["problem"] == "inpaint" and cfg["seed"] == 7
    assert cfg["sampler.delta"] == 1e-4 and cfg["sampler.save_chain"] is True
    assert cfg["operator.kind"] == "mask" and cfg["sampler.init"] == "observation"
    assert cfg.section("flow")["coupling"] == "affine"


def test_auto_resolution():
    ct = ExperimentConfig.parse("problem = ct\n")
    assert ct["operator.kind"] == "radon" and ct["sampler.init"] == "fbp"
    toy = ExperimentConfig.parse("problem = toy2d\nprior = patch\n")
    assert toy["flow.dataset"] == "gaussian" and toy["flow.mode"] == "patch"


def test_echo_reparses_identically():
    cfg = ExperimentConfig.parse("problem = ct\nsampler.delta = 0.1\nflow.jitter_sigma = 0.0039215686\n")
    again = ExperimentConfig.parse(cfg.dumps())
    assert again == cfg
    assert "auto" not in cfg.dumps()


@pytest.mark.parametrize("text,fragment", [
    ("problem = deblur\nsampler.detla = 1e-3\n", "line 2: unknown key 'sampler.detla'"),
    ("seed = seven\n", "line 1: seed"),
    ("seed = 1\nseed = 2\n", "line 2: 'seed' already set on line 1"),
    ("sampler.kernel = hmc\n", "line 1: sampler.kernel must be one of"),
    ("just words\n", "line 1: expected 'key = value'"),
    ("sampler.iterations = 10\nsampler.burn_in = 10\n", "burn_in"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.parse(text, source="exp.cfg")
    assert fragment in str(info.value)


def test_override_rejects_unknown():
    cfg = ExperimentConfig.defaults().resolved()
    assert cfg.override(seed=3)["seed"] == 3
    with pytest.raises(ConfigError):
        cfg.override(nope=1)


TOY = """
problem = toy2d
seed = 4
sigma = 0.1
prior = flow
flow.epochs = 4
flow.n_train = 2000
flow.n_couplings = 2
flow.jitter_sigma = 0
sampler.delta = 1e-3
sampler.lam = 1e-3
sampler.iterations = 400
sampler.burn_in = 100
sampler.save_chain = true
"""


@pytest.fixture()
def toy(tmp_path):
    cfg = tmp_path / "toy.cfg"
    ck = tmp_path / "flow.nfck"
    cfg.write_text(TOY + f"checkpoint = {ck}\npaths.output = {tmp_path / 'run'}\n")
    return tmp_path, str(cfg), str(ck)


def test_cli_toy_pipeline(toy, capsys):
    tmp, cfg, ck = toy
    assert main(["degrade", "--config", cfg]) == 0
    assert read_tensor(str(tmp / "run" / "y.nft")).shape == (2,)
    assert main(["train-flow", "--config", cfg, "--out", ck]) == 0
    assert os.path.exists(ck + ".trace.csv")
    assert main(["sample", "--config", cfg]) == 0
    run = tmp / "run"
    for name in ("mean.nft", "std.nft", "trace.csv", "config.txt", "summary.txt"):
        assert (run / name).exists()
    assert ExperimentConfig.load(run / "config.txt") == ExperimentConfig.load(cfg)
    assert (run / "trace.csv").read_text().splitlines()[0] == "iteration,psnr,log_likelihood,projection_active"
    assert "retained = 300" in (run / "summary.txt").read_text()
    capsys.readouterr()
    assert main(["certify", "--checkpoint", ck, "--Ly", "100", "--alpha", "1", "--lam", "1e-3"]) == 0
    out = capsys.readouterr().out
    assert "certified = true" in out and "step_bound = " in out
    report = tmp / "report.csv"
    assert main(["diagnose", "--chain", str(run), "--out", str(report), "--max-lag", "10"]) == 0
    assert report.read_text().splitlines()[0] == "metric,band,dim,lag,value"


def test_train_resume_is_identical(toy):
    tmp, cfg, ck = toy
    full = str(tmp / "full.nfck")
    assert main(["train-flow", "--config", cfg, "--out", full]) == 0
    part = str(tmp / "part.nfck")
    assert main(["train-flow", "--config", cfg, "--out", part, "--epochs", "2"]) == 0
    assert read_checkpoint(part)["train/epoch"][0] == 2
    assert main(["train-flow", "--config", cfg, "--out", part, "--resume"]) == 0
    a, b = read_checkpoint(full), read_checkpoint(part)
    assert a.keys() == b.keys()
    for k in a:
        assert np.array_equal(a[k], b[k]), k


def test_sample_multiple_chains(toy):
    tmp, cfg, ck = toy
    main(["degrade", "--config", cfg])
    main(["train-flow", "--config", cfg, "--out", ck])
    assert main(["sample", "--config", cfg, "--chains", "2", "--out", str(tmp / "multi"), "--obs",
                 str(tmp / "run")]) == 0
    m0 = read_tensor(str(tmp / "multi" / "chain_000" / "mean.nft"))
    m1 = read_tensor(str(tmp / "multi" / "chain_001" / "mean.nft"))
    assert not np.array_equal(m0, m1)


def test_image_problem_with_gaussian_prior(tmp_path):
    cfg = tmp_path / "d.cfg"
    cfg.write_text("problem = deblur\nimage_side = 16\nprior = gaussian\nsampler.iterations = 200\n"
                   f"sampler.burn_in = 100\npaths.output = {tmp_path / 'o'}\n")
    assert main(["degrade", "--config", str(cfg)]) == 0
    assert main(["sample", "--config", str(cfg)]) == 0
    assert read_tensor(str(tmp_path / "o" / "mean.nft")).shape == (16, 16)


def test_cli_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("problem = deblur\nbogus = 1\n")
    assert main(["degrade", "--config", str(cfg)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_sample_without_observation(tmp_path):
    assert main(["sample", "--out", str(tmp_path / "none")]) == 2


def test_verify_exit_codes(tmp_path, monkeypatch):
    out = tmp_path / "v.csv"
    assert main(["verify", "tweedie", "--out", str(out)]) == 0
    assert out.read_text().startswith("suite,passed,metric,value\n")
    assert main(["verify", "no-such-suite"]) == 2
    monkeypatch.setitem(verification.SUITES, "always-fails", lambda: CheckResult("x", False, {"v": 1.0}))
    assert main(["verify", "always-fails"]) == 1

    def boom():
        raise RuntimeError("broken")

    monkeypatch.setitem(verification.SUITES, "raises", boom)
    assert main(["verify", "raises"]) == 1
