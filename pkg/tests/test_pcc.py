import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from oracles import ref_fit, ref_min_tokens, ref_optimal_tokens
from tokencurve.errors import DomainError, EmptyInputError, InsufficientDataError, InvalidCurveError
from tokencurve.pcc import (
    PccParams,
    curve_csv,
    fit_power_law,
    min_tokens_within_loss,
    optimal_tokens,
    plot_curves_svg,
    predict_runtime,
    savings_cdf,
)

exponents = st.floats(-3.0, 0.0, allow_nan=False)
scales = st.floats(1e-2, 1e5, allow_nan=False)


def test_fit_examples():
    p = fit_power_law([(1, 100), (2, 50), (4, 25)]).params
    assert p.a == pytest.approx(-1, abs=1e-12) and p.b == pytest.approx(100, rel=1e-12)
    flat = fit_power_law([(10, 100), (100, 100)])
    assert flat.params.a == pytest.approx(0, abs=1e-12) and flat.params.b == pytest.approx(100)
    assert flat.n_points == 2 and flat.residual == pytest.approx(0, abs=1e-12)


def test_fit_noisy_matches_normal_equations():
    rng = np.random.default_rng(5)
    A = rng.uniform(1, 500, 20)
    pts = list(zip(A, 200 * A**-0.5 * rng.uniform(0.99, 1.01, 20)))
    a, b = ref_fit(pts)
    p = fit_power_law(pts).params
    assert p.a == pytest.approx(a, rel=1e-9)
    assert p.b == pytest.approx(b, rel=1e-9)


@pytest.mark.parametrize("pts,err", [
    ([(5, 10)], InsufficientDataError),
    ([(5, 10), (5, 12)], InsufficientDataError),
    ([(5, 10), (6, 0)], DomainError),
    ([(0.5, 10), (6, 1)], DomainError),
    ([(4999, 1e5), (5000, 1)], DomainError),
])
def test_fit_errors(pts, err):
    with pytest.raises(err):
        fit_power_law(pts)


@settings(max_examples=300, deadline=None)
@given(exponents, scales, st.lists(st.integers(1, 10_000), min_size=2, max_size=12, unique=True))
def test_fit_recovers_exact_curves(a, b, allocs):
    p = fit_power_law([(x, b * x**a) for x in allocs]).params
    assert p.a == pytest.approx(a, rel=1e-9, abs=1e-9)
    assert p.b == pytest.approx(b, rel=1e-9)


def test_predict_examples():
    assert predict_runtime(PccParams(-1, 100), 4) == 25
    assert predict_runtime(PccParams(0, 7), 123) == 7
    assert predict_runtime(PccParams(-0.5, 200), 16) == pytest.approx(50)
    with pytest.raises(DomainError):
        predict_runtime(PccParams(-1, 1), 0.5)


def test_params_validation():
    with pytest.raises(DomainError):
        PccParams(-1, 0)
    with pytest.raises(DomainError):
        PccParams(float("nan"), 1)
    assert PccParams(0.3, 2).clamped() == PccParams(0.0, 2)
    assert not PccParams(0.3, 2).non_increasing


@settings(max_examples=200, deadline=None)
@given(st.one_of(st.just(0.0), st.floats(-3, 0), st.floats(1e-3, 3)), scales)
def test_monotone_iff_nonpositive_exponent(a, b):
    grid = np.arange(1, 200, dtype=float)
    r = np.array([predict_runtime(PccParams(a, b), x) for x in grid])
    assert bool(np.all(np.diff(r) <= 0)) == (a <= 0)


def test_optimal_tokens_examples():
    assert optimal_tokens(PccParams(-1, 100), 0.01, 10_000) == 100
    assert ref_optimal_tokens(-1, 0.01, 10_000) == 100
    assert optimal_tokens(PccParams(0, 5), 0.2, 50) == 1
    assert optimal_tokens(PccParams(-0.05, 5), 0.01, 3) == 3
    with pytest.raises(InvalidCurveError):
        optimal_tokens(PccParams(0.1, 5), 0.01, 100)
    with pytest.raises(DomainError):
        optimal_tokens(PccParams(-1, 5), 1.5, 100)


def test_min_tokens_examples():
    p = PccParams(-1, 100)
    assert min_tokens_within_loss(p, 100, 0.05) == 96
    assert predict_runtime(p, 96) <= 1.05 * predict_runtime(p, 100) < predict_runtime(p, 95)
    assert min_tokens_within_loss(PccParams(0, 9), 50, 0.0) == 1
    assert min_tokens_within_loss(PccParams(-0.4, 9), 50, 0.0) == 50
    with pytest.raises(InvalidCurveError):
        min_tokens_within_loss(PccParams(0.2, 9), 50, 0.1)


@settings(max_examples=300, deadline=None)
@given(exponents, st.floats(1e-4, 0.99), st.integers(1, 3000))
def test_optimal_tokens_matches_scan(a, thr, cap):
    assume(abs(a) / thr < 5000)
    assert optimal_tokens(PccParams(a, 1.0), thr, cap) == ref_optimal_tokens(a, thr, cap)


@settings(max_examples=300, deadline=None)
@given(exponents, scales, st.integers(1, 2000), st.floats(0, 2))
def test_min_tokens_matches_scan(a, b, ref, loss):
    assert min_tokens_within_loss(PccParams(a, b), ref, loss) == ref_min_tokens(a, b, ref, loss)


@settings(max_examples=150, deadline=None)
@given(exponents, st.floats(1e-3, 0.5), st.floats(1e-3, 0.5))
def test_optimal_tokens_non_increasing_in_threshold(a, t1, t2):
    lo, hi = sorted((t1, t2))
    p = PccParams(a, 1.0)
    assert optimal_tokens(p, hi, 10_000) <= optimal_tokens(p, lo, 10_000)


@settings(max_examples=150, deadline=None)
@given(exponents, st.integers(1, 1000), st.floats(0, 1), st.floats(0, 1))
def test_min_tokens_non_increasing_in_loss(a, ref, l1, l2):
    lo, hi = sorted((l1, l2))
    p = PccParams(a, 3.0)
    assert min_tokens_within_loss(p, ref, hi) <= min_tokens_within_loss(p, ref, lo)


def test_savings_cdf_examples():
    steep = PccParams(-1, 100)
    assert savings_cdf([(steep, 10), (steep, 40)], 0.0) == [(0.0, 1.0)]
    # reductions 0.04 (a=-1, ref 100, 5%) and 0.5 (flat curve, ref 2)
    cdf = savings_cdf([(steep, 100), (PccParams(0, 3), 2)], 0.05)
    assert cdf == [(pytest.approx(0.04), 0.5), (0.5, 1.0)]
    with pytest.raises(EmptyInputError):
        savings_cdf([], 0.05)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(exponents, st.integers(1, 500)), min_size=1, max_size=30), st.floats(0, 1))
def test_savings_cdf_is_valid(jobs, loss):
    cdf = savings_cdf([(PccParams(a, 1.0), r) for a, r in jobs], loss)
    xs = [x for x, _ in cdf]
    ys = [y for _, y in cdf]
    assert all(0 <= x <= 1 for x in xs) and xs == sorted(xs)
    assert ys == sorted(ys) and math.isclose(ys[-1], 1.0)


def test_curve_csv_and_svg(tmp_path):
    text = curve_csv(PccParams(-1, 100), [1, 2, 4])
    assert text.splitlines() == ["allocation,predicted_runtime", "1,100.0", "2,50.0", "4,25.0"]
    p1, p2 = tmp_path / "a.svg", tmp_path / "b.svg"
    series = {"curve": [(1, 100.0), (2, 50.0), (4, 25.0)]}
    plot_curves_svg(series, p1)
    plot_curves_svg(series, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_text().lstrip().startswith("<?xml")
