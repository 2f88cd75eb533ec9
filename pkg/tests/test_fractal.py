import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from dynlab.errors import DegenerateFit, EmptyWindow, ResolutionCap
from dynlab.fractal import (
    BOUNDED,
    ESCAPING,
    UNDECIDED,
    EscapePolicy,
    box_count_fit,
    boundary_curve,
    cantor_dust_masks,
    cantor_hits,
    circle_mask,
    classify_points,
    dyadic_pyramid,
    escape_classify,
    filled_square_mask,
    grid_shape,
    julia_proxy_grid,
    render_escape,
    window_independence,
)
from dynlab.function_model import FunctionSpec as F

Z2 = F.polynomial([0, 0, 1])


def test_escape_examples():
    c = escape_classify(F.scaled_exp(1), 10)
    assert c.status == "Escaping" and c.first_passage <= 3
    assert escape_classify(F.scaled_exp(0.25), 0).status == "Bounded"
    assert escape_classify(F.scaled_exp(1), 10, 1, EscapePolicy(threshold=1e300)).status == "Undecided"
    with pytest.raises(ValueError):
        escape_classify(Z2, 0.5, 0)


def test_bounded_orbit_reaches_fixed_point():
    x_star = optimize.brentq(lambda x: math.exp(x) / 4 - x, 0, 1)
    assert x_star == pytest.approx(0.35740, abs=1e-5)
    z = 0j
    f = F.scaled_exp(0.25)
    for _ in range(200):
        z = f.evaluate(z)
    assert abs(z - x_star) < 1e-9


def test_trap_disk():
    pol = EscapePolicy(trap=(0j, 0.5))
    s, _ = classify_points(Z2, np.array([0.3 + 0j]), 10, pol)
    assert s[0] == BOUNDED


def test_sin_family_escape():
    s, fp = classify_points(F.sin(), np.array([0.5 + 40j]), 50)
    assert s[0] == ESCAPING


def test_stable_under_more_iterations():
    rng = np.random.default_rng(3)
    z = rng.uniform(0, 4, 4000) + 1j * rng.uniform(-2, 2, 4000)
    f = F.scaled_exp(0.25)
    s1, fp1 = classify_points(f, z, 20)
    s2, fp2 = classify_points(f, z, 80)
    assert np.all(s2[s1 == ESCAPING] == ESCAPING)
    assert np.all(fp2[s1 == ESCAPING] == fp1[s1 == ESCAPING])
    assert np.all(s2[s1 == BOUNDED] == BOUNDED)


def test_grid_shape():
    assert grid_shape((-2, -2, 2, 2), 1 / 64) == (256, 256)
    assert grid_shape((0, -1, 1.5, 1), 2**-8) == (512, 384)
    with pytest.raises(ValueError):
        grid_shape((0, 0, 1, 1), 0.3)
    with pytest.raises(ResolutionCap):
        grid_shape((0, 0, 1, 1), 2**-14)


def test_z2_proxy_grid():
    g = julia_proxy_grid(Z2, (-2, -2, 2, 2), 1 / 64)
    assert g.shape == (256, 256)
    assert np.all(g.first_passage[g.status == ESCAPING] <= g.max_iter)
    centers = (-2 + (np.arange(256) + 0.5) / 64)
    zz = centers[None, :] + 1j * centers[:, None]
    assert np.all(np.abs(np.abs(zz[g.boundary]) - 1) < 2 / 64)
    # an 8-neighborhood flags a 4-connected ring of about 8/eps cells
    assert 0.8 * 8 * 64 <= g.boundary.sum() <= 1.3 * 8 * 64
    g4 = julia_proxy_grid(Z2, (-2, -2, 2, 2), 1 / 64, neighborhood=4)
    band = (2 * math.pi * 64) / math.sqrt(2)
    assert 0.8 * band <= g4.boundary.sum() <= 1.3 * band
    pyr = dyadic_pyramid(g.boundary, 1 / 64, 4)
    assert box_count_fit(pyr).slope == pytest.approx(1.0, abs=0.08)


def test_off_set_window():
    g = julia_proxy_grid(Z2, (2.5, 2.5, 3.5, 3.5), 1 / 64)
    assert g.boundary.sum() == 0


def test_lambda_exp_mask_nonempty():
    g = julia_proxy_grid(F.scaled_exp(0.25), (0, -2, 4, 2), 2**-6)
    assert g.boundary.any()


def test_jitter_samples_are_deterministic():
    a = julia_proxy_grid(Z2, (-2, -2, 2, 2), 1 / 32, samples_per_cell=3, seed=5)
    b = julia_proxy_grid(Z2, (-2, -2, 2, 2), 1 / 32, samples_per_cell=3, seed=5)
    assert np.array_equal(a.boundary, b.boundary)
    assert a.boundary.sum() >= julia_proxy_grid(Z2, (-2, -2, 2, 2), 1 / 32).boundary.sum()


def test_box_count_reference_sets():
    sq = box_count_fit(dyadic_pyramid(filled_square_mask(2**-8), 2**-8, 5))
    assert sq.slope == pytest.approx(2.0, abs=0.02)
    ci = box_count_fit(dyadic_pyramid(circle_mask(2**-8), 2**-8, 5))
    assert ci.slope == pytest.approx(1.0, abs=0.05)


def cantor_oracle(depth, level):
    """Exact rational count of cells [j/2^l, (j+1)/2^l) (last one closed) meeting C_depth."""
    from fractions import Fraction
    from itertools import product
    n = 1 << level
    hit = set()
    for digits in product((0, 2), repeat=depth):
        k = sum(d * 3 ** (depth - 1 - i) for i, d in enumerate(digits))
        a, b = Fraction(k, 3**depth), Fraction(k + 1, 3**depth)
        lo = min(int(a * n), n - 1)
        hi = min(int(b * n), n - 1)
        hit.update(range(lo, hi + 1))
    return len(hit)


def test_cantor_counts_exact():
    for level in range(1, 9):
        assert int(cantor_hits(8, level).sum()) == cantor_oracle(8, level)
    for e, m in cantor_dust_masks(8, range(3, 9)):
        h = cantor_hits(8, round(-math.log2(e)))
        assert m.sum() == h.sum() ** 2


def test_box_count_errors():
    with pytest.raises(DegenerateFit):
        box_count_fit([(2.0**-j, np.zeros((4, 4), bool)) for j in range(3, 8)])
    with pytest.raises(ValueError):
        box_count_fit([(0.1, np.ones((2, 2), bool)), (0.2, np.ones((2, 2), bool))])
    with pytest.raises(ValueError):
        box_count_fit([(e, np.ones((2, 2), bool)) for e in (0.1, 0.15, 0.2, 0.4)])


def test_sandwich_and_monotone_counts():
    pyr = dyadic_pyramid(circle_mask(2**-8), 2**-8, 5)
    N = [int(m.sum()) for _, m in pyr]
    for a, b in zip(N, N[1:]):
        assert b <= a <= 4 * b


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sandwich_random_masks(seed):
    m = np.random.default_rng(seed).uniform(0, 1, (64, 64)) < 0.05
    pyr = dyadic_pyramid(m, 1 / 64, 4)
    N = [int(x.sum()) for _, x in pyr]
    for a, b in zip(N, N[1:]):
        assert b <= a <= 4 * b


def test_window_independence_z2():
    rep = window_independence(Z2, [(-1.5, -1, 0, 1), (0, -1, 1.5, 1)], 2**-8, 3)
    assert rep.max_pairwise_difference < 0.1
    with pytest.raises(EmptyWindow):
        window_independence(Z2, [(-1.5, -1, 0, 1), (2.5, 2.5, 3.5, 3.5)], 2**-6, 3)
    rep = window_independence(Z2, [(-1.5, -1, 0, 1), (2.5, 2.5, 3.5, 3.5)], 2**-6, 3, strict=False)
    assert len(rep.curves) == 1 and rep.errors


def test_window_independence_lambda_exp():
    rep = window_independence(F.scaled_exp(0.25), [(2, -1, 4, 1), (2.5, -1.5, 4, 0.5)], 2**-7, 4)
    assert rep.max_pairwise_difference < 0.15


def test_lambda_exp_slope_trend():
    slopes = [boundary_curve(F.scaled_exp(0.25), (0, -2, 4, 2), e, 4)[1] for e in (2**-6, 2**-7)]
    assert slopes[1].slope >= slopes[0].slope - slopes[0].slope_stderr


def test_render():
    b = render_escape(Z2, (-2, -2, 2, 2), 256)
    assert b.startswith(b"P5\n256 256\n255\n")
    img = np.frombuffer(b[len(b"P5\n256 256\n255\n"):], dtype=np.uint8).reshape(256, 256)
    assert (img == 0).mean() == pytest.approx(math.pi / 16, rel=0.03)
    assert img[128, 128] == 0 and img[0, 0] > 16
    with pytest.raises(ResolutionCap):
        render_escape(Z2, (-2, -2, 2, 2), 10**9)


def test_render_orientation_and_undecided():
    # upper half of the window: escaping; lower half: bounded.  Row 0 must be the top.
    b = render_escape(Z2, (-0.5, -0.5, 0.5, 1.5), (4, 8), max_iter=100)
    img = np.frombuffer(b[len(b"P5\n4 8\n255\n"):], dtype=np.uint8).reshape(8, 4)
    assert img[0].min() > 16 and img[-1].max() == 0
    b = render_escape(Z2, (-2, -2, 2, 2), 8, max_iter=1, policy=EscapePolicy(threshold=1e300, max_period=1))
    img = np.frombuffer(b[len(b"P5\n8 8\n255\n"):], dtype=np.uint8)
    assert set(img.tolist()) <= {16, 0}
    assert UNDECIDED == 0
