import json
import math

import numpy as np
import pytest

from dynlab.errors import InsufficientData
from dynlab.function_model import FunctionSpec as F
from dynlab.growth import (
    FAILS,
    HOLDS,
    INCONCLUSIVE,
    Thresholds,
    classify_conditions,
    geometric_grid,
    scan_profiles,
)


@pytest.fixture(scope="module")
def exp_profiles():
    return scan_profiles(F.scaled_exp(1), 10, 1e4, 8)


@pytest.fixture(scope="module")
def sin_profiles():
    return scan_profiles(F.sin(), 10, 1e3, 8)


@pytest.fixture(scope="module")
def cubic_profiles():
    return scan_profiles(F.polynomial([-1, 0, 0, 1]), 10, 1e4, 8)


def test_grid_shape():
    g = geometric_grid(10, 1e4, 8)
    assert len(g) == 25 and g[0] == pytest.approx(10) and g[-1] == pytest.approx(1e4)


def test_scan_examples(exp_profiles, sin_profiles, cubic_profiles):
    assert len(exp_profiles) == 25
    for p in exp_profiles:
        assert p.log_M == pytest.approx(p.r, abs=1e-9 * max(1, p.r))
    for p in sin_profiles:
        assert p.log_M == pytest.approx(p.r - math.log(2), abs=1e-6)
    for p in cubic_profiles:
        assert p.log_M == pytest.approx(3 * math.log(p.r), abs=1e-2)


def test_scan_preconditions():
    with pytest.raises(ValueError):
        scan_profiles(F.sin(), 1, 100, 8)
    with pytest.raises(ValueError):
        scan_profiles(F.sin(), 10, 100, 3)


def test_exp_verdicts(exp_profiles):
    rep = classify_conditions(exp_profiles)
    c = rep.conditions
    assert c["doubling"].verdict == HOLDS
    assert c["doubling"].summary["best_d"] == pytest.approx(2.0, abs=1e-6)
    assert c["ratio_below_one"].verdict == HOLDS
    assert c["ratio_below_one"].summary["max"] == pytest.approx(-1.0, abs=1e-9)
    assert c["loglog_growth"].verdict == HOLDS
    # log r / loglog r is increasing for r > e^e
    q = [v for r, v in c["loglog_growth"].witness if r > math.exp(math.e)]
    assert q == sorted(q)
    assert rep.exit_code() == 0
    assert "corollary_doubling" in rep.applicable_results


def test_cubic_verdicts(cubic_profiles):
    rep = classify_conditions(cubic_profiles)
    assert rep.conditions["loglog_growth"].verdict == FAILS
    assert "non_transcendental_growth" in rep.flags


def test_sin_doubling(sin_profiles):
    rep = classify_conditions(sin_profiles)
    d = [v for r, v in rep.conditions["doubling"].witness if 100 <= r and math.isfinite(v)]
    assert d and all(abs(x - 2) < 0.05 for x in d)
    assert rep.conditions["doubling"].verdict == HOLDS


def test_insufficient_data(exp_profiles):
    with pytest.raises(InsufficientData):
        classify_conditions(exp_profiles[:5])
    with pytest.raises(InsufficientData):
        classify_conditions(scan_profiles(F.scaled_exp(1), 10, 90, 8))


def test_doubling_implies_loglog_not_failing(exp_profiles, sin_profiles):
    for profs in (exp_profiles, sin_profiles):
        rep = classify_conditions(profs)
        if rep.conditions["doubling"].verdict == HOLDS:
            assert rep.conditions["loglog_growth"].verdict != FAILS


def test_ratio_witnesses_and_complement(exp_profiles, cubic_profiles):
    for profs in (exp_profiles, cubic_profiles):
        rep = classify_conditions(profs)
        a, b = rep.conditions["ratio_below_one"], rep.conditions["ratio_tends_to_one"]
        assert a.witness == b.witness
        comp = {HOLDS: FAILS, FAILS: HOLDS, INCONCLUSIVE: INCONCLUSIVE}
        assert b.verdict == comp[a.verdict]


def test_scaling_invariance():
    th = Thresholds()
    pa = [p for p in scan_profiles(F.scaled_exp(1), 10, 1e4, 8)]
    pb = [p for p in scan_profiles(F.scaled_exp(2), 10, 1e4, 8)]
    ra, rb = classify_conditions(pa, th), classify_conditions(pb, th)
    for k in ra.conditions:
        assert ra.conditions[k].verdict == rb.conditions[k].verdict
    wa = dict(ra.conditions["doubling"].witness)
    wb = dict(rb.conditions["doubling"].witness)
    for r in wa:
        if r >= 100 and math.isfinite(wa[r]):
            assert wa[r] == pytest.approx(wb[r], abs=0.01)


def test_report_is_deterministic(exp_profiles):
    a = json.dumps(classify_conditions(exp_profiles).to_json(), sort_keys=True)
    b = json.dumps(classify_conditions(exp_profiles).to_json(), sort_keys=True)
    assert a == b
