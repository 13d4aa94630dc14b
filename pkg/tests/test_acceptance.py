"""The eleven acceptance criteria, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL ...`` line (also collected in
the terminal summary).  Criterion 11 reruns each of 1-10 with the same seed
and compares fingerprints of the measured values, including sample digests.
"""

import hashlib
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from nfula import verification as V

pytestmark = pytest.mark.slow

RESULTS = {}
_DESK_MODEL = {}


def desk_model():
    if "m" not in _DESK_MODEL:
        _DESK_MODEL["m"] = V.train_patch_prior(0)[0]
    return _DESK_MODEL["m"]


CRITERIA = {
    1: ("conjugate-Gaussian recovery", lambda: [V.check_conjugate_recovery()], 120.0),
    2: ("flow-prior equivalence", lambda: [V.check_flow_prior_equivalence()], 300.0),
    3: ("gradient oracles", lambda: [V.check_gradients()], 60.0),
    4: ("certification dichotomy", lambda: [V.check_certification()], None),
    5: ("coupled contraction", lambda: [V.check_contraction()], None),
    6: ("bias ordering", lambda: [V.check_bias_ordering()], None),
    7: ("projection efficacy", lambda: [V.check_projection()], None),
    8: ("desk inverse problems", lambda: [V.check_desk(n, 0, desk_model()) for n in ("deblur", "inpaint", "ct")],
        None),
    9: ("Tweedie exactness", lambda: [V.check_tweedie()], None),
    10: ("theory-check suite", lambda: [V.check_finite_moments(), V.check_well_posedness(), V.check_acf()], None),
}


def fingerprint(results):
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in sorted(v.items()) if k != "seconds"}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, (float, np.floating)):
            return float(v).hex()
        return repr(v)

    return hashlib.sha256(repr([(r.name, r.passed, clean(r.measured)) for r in results]).encode()).hexdigest()


def report(n, passed, detail):
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'} {CRITERIA[n][0] if n in CRITERIA else 'determinism'}"
    line += f" ({detail})" if detail else ""
    print(line)
    ACCEPTANCE_LINES.append(line)


def _summary(results):
    parts = []
    for r in results:
        items = []
        for k, v in r.measured.items():
            if k == "per_seed":
                continue
            if isinstance(v, dict) and k != "moments":
                items.extend((f"{k}.{k2}", v2) for k2, v2 in v.items())
            elif k == "moments":
                items.append(("settings_converged", len(v)))
            else:
                items.append((k, v))
        shown = []
        for k, v in items:
            if k in ("digest", "seconds"):
                continue
            if isinstance(v, (float, np.floating)):
                shown.append(f"{k}={v:.4g}")
            elif isinstance(v, (int, bool)):
                shown.append(f"{k}={v}")
            elif isinstance(v, list) and all(isinstance(t, (int, float)) for t in v):
                shown.append(f"{k}=[" + ", ".join(f"{t:.4g}" for t in v) + "]")
        parts.append(r.name + ": " + ", ".join(shown[:8]))
    return "; ".join(parts)


def run_criterion(n):
    t0 = time.time()
    results = CRITERIA[n][1]()
    elapsed = time.time() - t0
    RESULTS[n] = results
    return results, elapsed


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n):
    if n == 8:
        desk_model()  # training is shared by the three problems and timed separately
    results, elapsed = run_criterion(n)
    limit = CRITERIA[n][2]
    passed = all(r.passed for r in results)
    if n == 8:
        passed = passed and all(r.measured["seconds"] <= 600.0 for r in results)
    if limit is not None:
        passed = passed and elapsed <= limit
    report(n, passed, f"{elapsed:.0f} s; {_summary(results)}")
    for r in results:
        assert r.passed, (r.name, r.measured)
    if n == 8:
        assert all(r.measured["seconds"] <= 600.0 for r in results)
    if limit is not None:
        assert elapsed <= limit


def test_criterion_11_determinism():
    mismatched = []
    base = V.check_determinism()
    for n in sorted(CRITERIA):
        first = RESULTS[n] if n in RESULTS else CRITERIA[n][1]()
        _DESK_MODEL.clear()  # the desk prior is retrained too
        second = CRITERIA[n][1]()
        if fingerprint(first) != fingerprint(second):
            mismatched.append(n)
    passed = base.passed and not mismatched
    report(11, passed, f"reran criteria 1-10, mismatched={mismatched}; sampler/training bytes {base.measured}")
    assert base.passed
    assert not mismatched
