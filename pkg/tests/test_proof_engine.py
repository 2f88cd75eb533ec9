import json
import math
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, optimize

from dynlab.errors import (
    BadRadius,
    CriticalSeed,
    DegenerateT,
    DepthUnreachable,
    EmptyAfterExclusion,
    EmptyCandidate,
    NormalizationError,
)
from dynlab.function_model import ComplexSample
from dynlab.function_model import FunctionSpec as F
from dynlab.logderiv import r_shell
from dynlab.proof_engine import (
    _koebe_generic,
    build_cascade,
    candidate_set,
    dimension_lower_bound,
    dimension_lower_bound_log,
    exclude_and_pack,
    inverse_branch,
    n0_from_beta,
    pairwise_separation_ok,
)

CAL = json.loads((Path(__file__).parent / "fixtures" / "calibration.json").read_text())


def exp_area_oracle(r, delta=0.25):
    """Exact area of {R_1 <= |z| <= R_3, Re z >= r/2}; the set A(r) for e^z."""
    T = r / math.pi
    R1, R3 = r_shell(r, 1, T), r_shell(r, 3, T)
    val, _ = integrate.quad(lambda s: 2 * math.acos(min(1.0, r / 2 / s)) * s, R1, R3, epsabs=0, epsrel=1e-12)
    return val


@pytest.fixture(scope="module")
def cand1000():
    return candidate_set(F.scaled_exp(1), 1000, 0.25)


@pytest.fixture(scope="module")
def cascade():
    return build_cascade(F.scaled_exp(1), 50, 0.25, 3)


def test_candidate_area_against_oracle(cand1000):
    oracle = exp_area_oracle(1000)
    assert cand1000.area_estimate == pytest.approx(oracle, rel=0.05)
    assert abs(cand1000.area_estimate - oracle) <= 3 * cand1000.area_stderr
    assert cand1000.area_bound == pytest.approx(2e6 / math.sqrt(1000 / math.pi), rel=1e-9)
    assert cand1000.area_estimate >= cand1000.area_bound
    fx = CAL["exp_r1000_delta025"]
    assert cand1000.area_estimate == pytest.approx(fx["area_estimate"], rel=1e-9)


def test_candidate_membership_is_exact(cand1000):
    z = cand1000.points()[cand1000.flags]
    assert np.all(z.real >= 500 * (1 - 1e-12))


def test_candidate_density_convergence(cand1000):
    c2 = candidate_set(F.scaled_exp(1), 1000, 0.25, grid_density=400)
    se = math.hypot(cand1000.area_stderr, c2.area_stderr)
    assert abs(cand1000.area_estimate - c2.area_estimate) <= 3 * se


def test_candidate_errors():
    with pytest.raises((EmptyCandidate, DegenerateT)):
        candidate_set(F.polynomial([0, 0.1]), 1, 0.25, check_good=False)
    with pytest.raises(EmptyCandidate):
        candidate_set(F.polynomial([1, 0, 0, 1]), 1e6, 0.25)
    with pytest.raises(DegenerateT):
        candidate_set(F.scaled_exp(1), 5, 0.25)


def test_pack_exp(cand1000):
    p = exclude_and_pack(cand1000, [])
    fx = CAL["exp_r1000_delta025"]
    assert p.m_r >= math.ceil((1000 / math.pi) ** (2 - 7 * 0.25)) == fx["m_target"]
    assert p.m_r == fx["m_r"]
    assert pairwise_separation_ok(p)
    assert all(p.checks.values())


def test_pack_sin_with_zeros():
    c = candidate_set(F.sin().shifted(0.5), 100, 0.15)
    p = exclude_and_pack(c)
    assert p.excluded_disks is not None and p.checks["no_zero_within_rho"]
    assert pairwise_separation_ok(p)
    z = p.parent.r * (1 + p.centers_u) * np.exp(1j * p.centers_theta)
    for c0, s in p.excluded_disks.disks:
        assert np.all(np.abs(z - c0) >= s + p.rho * (1 - 1e-12))


def test_pack_empty_after_exclusion(cand1000):
    R1, R3 = r_shell(1000, 1, 1000 / math.pi), r_shell(1000, 3, 1000 / math.pi)
    pts = [s * np.exp(1j * t) for s in np.linspace(R1, R3, 3) for t in np.arange(-1.2, 1.21, 0.03)]
    with pytest.raises(EmptyAfterExclusion):
        exclude_and_pack(cand1000, pts)


def test_inverse_branch_exp():
    w = inverse_branch(F.scaled_exp(1), ComplexSample(2.0, 0.5), 2 + 0.5j)
    assert w == pytest.approx(2 + 0.5j, abs=1e-14)


def test_inverse_branch_sin_against_bisection():
    ref = optimize.bisect(lambda x: math.sin(x) - 0.9, 0.0, math.pi / 2, xtol=1e-15)
    w = inverse_branch(F.sin(), ComplexSample(math.log(0.9), 0.0), 1.0)
    assert w == pytest.approx(ref, abs=1e-9)
    with pytest.raises(CriticalSeed):
        inverse_branch(F.sin(), ComplexSample(math.log(0.9), 0.0), math.pi / 2)


def test_cascade_checks(cascade):
    assert cascade.all_checks_ok
    lr = [lv["log_r"] for lv in cascade.levels]
    assert 25 <= lr[1] <= 25 + math.log(2)
    assert all(o["annulus_membership"] for o in cascade.orbit_checks)
    logs = [o["log_abs"] for o in cascade.orbit_checks]
    assert logs == sorted(logs)
    rho0 = cascade.levels[0]["rho_k"]
    for k, lv in enumerate(cascade.levels):
        assert lv["diam_Vk_bound"] <= rho0 / 2 ** (k - 1) * (1 + 1e-12)
        assert lv["log_sigma_k"] >= -lv["log_T"] - 1e-9
        assert lv["roundtrip_max_rel_logmag"] < 1e-8


def test_cascade_edges():
    tr = build_cascade(F.scaled_exp(1), 50, 0.25, 0)
    assert tr.depth == 1
    with pytest.raises((BadRadius, DegenerateT)):
        build_cascade(F.scaled_exp(1), 5, 0.25, 2)
    with pytest.raises(DepthUnreachable):
        build_cascade(F.scaled_exp(1), 50, 0.25, 4)
    with pytest.raises(NormalizationError):
        build_cascade(F.sin(), 50, 0.25, 1)


def test_cascade_json_round_trips(cascade):
    doc = cascade.to_json()
    assert json.loads(json.dumps(doc)) == doc


def test_dimension_estimates(cascade):
    assert dimension_lower_bound_log(1.0, 0.0, -1.0, 0.25).predicted == pytest.approx(0.25)
    v = dimension_lower_bound_log(1.0, 0.0, -1.0, 2 / 7)
    assert v.predicted == pytest.approx(0.0, abs=1e-12) and v.vacuous
    est = dimension_lower_bound(cascade, N0_est=n0_from_beta(2.0))
    assert est.measured >= 0.8 * est.predicted
    assert n0_from_beta(2.0) == math.floor(81 * 4 * 17**2 / 16)


def test_koebe_generic_on_cos():
    f = F.cos()
    seed_prev = 1.0 + 0j
    b = complex(f.evaluate(seed_prev))
    d = _koebe_generic(f, b, 1e-3, seed_prev, 32, 0)
    assert d["ok"], d
