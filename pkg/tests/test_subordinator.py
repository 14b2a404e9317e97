"""Jump sampling, truncation, first passage, and inverse moments."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from levygrad import (
    BernsteinSpec,
    JumpPath,
    QuadratureDivergenceError,
    default_eps_cut,
    dropped_mass_rate,
    first_passage,
    inverse_moment,
    sample_jump_path,
    sample_terminal_values,
    stable_median_s1,
    substream,
    tail_mass,
    truncate_jumps,
)

ALPHAS = (0.8, 1.0, 1.5, 1.9)
EPSES = (1e-4, 3e-3, 0.1, 1.0)


@pytest.mark.parametrize("alpha", ALPHAS)
@pytest.mark.parametrize("eps", EPSES)
def test_tail_mass_matches_density_quadrature(alpha, eps):
    assert tail_mass(alpha, eps) == pytest.approx(
        oracles.tail_mass_quadrature(alpha, eps), rel=1e-10
    )


@pytest.mark.parametrize("alpha", ALPHAS)
@pytest.mark.parametrize("eps", EPSES)
def test_dropped_mass_rate_matches_density_quadrature(alpha, eps):
    assert dropped_mass_rate(alpha, eps) == pytest.approx(
        oracles.dropped_mass_quadrature(alpha, eps), rel=1e-10
    )


def test_jump_counts_are_poisson_with_tail_mass_rate():
    spec = BernsteinSpec.alpha_stable(1.5)
    lam = tail_mass(1.5, 3e-3) * 1.0
    rng = substream(42, 0)
    counts = [sample_jump_path(spec, 1.0, 3e-3, rng).jump_count for _ in range(2000)]
    counts = np.asarray(counts, dtype=float)
    se = math.sqrt(lam / counts.size)
    assert abs(counts.mean() - lam) <= 3.0 * se
    # Poisson variance equals the mean; generous window for the second moment.
    assert counts.var() == pytest.approx(lam, rel=0.15)


def test_jump_times_sorted_sizes_above_cutoff():
    spec = BernsteinSpec.alpha_stable(1.2)
    rng = substream(7, 1)
    for _ in range(50):
        p = sample_jump_path(spec, 2.0, 1e-2, rng)
        assert np.all(np.diff(p.times) > 0)
        assert np.all(p.sizes >= 1e-2)
        assert np.all(p.times > 0) and np.all(p.times <= 2.0)


def test_terminal_laplace_transform_matches_stable_law():
    # Compensated small-jump drift makes the truncation bias second order,
    # far below the Monte Carlo noise at this sample size.
    spec = BernsteinSpec.alpha_stable(1.2)
    vals = sample_terminal_values(spec, 1.0, 1e-3, 40_000, substream(11, 3),
                                  compensate_small_jumps=True)
    for u in (0.5, 1.0, 2.0):
        samples = np.exp(-u * vals)
        target = math.exp(-(u ** 0.6))
        se = samples.std(ddof=1) / math.sqrt(samples.size)
        assert abs(samples.mean() - target) <= 3.0 * se


def test_terminal_zero_fraction_matches_poisson_atom():
    spec = BernsteinSpec.alpha_stable(1.5)
    eps = 0.5
    lam = tail_mass(1.5, eps) * 0.25
    vals = sample_terminal_values(spec, 0.25, eps, 40_000, substream(11, 4))
    frac = float(np.mean(vals == 0.0))
    p0 = math.exp(-lam)
    se = math.sqrt(p0 * (1.0 - p0) / vals.size)
    assert abs(frac - p0) <= 3.0 * se


@st.composite
def jump_paths(draw):
    n = draw(st.integers(min_value=0, max_value=8))
    times = sorted(draw(st.lists(
        st.floats(min_value=1e-3, max_value=0.999, allow_nan=False),
        min_size=n, max_size=n, unique=True)))
    sizes = draw(st.lists(
        st.floats(min_value=1e-3, max_value=10.0, allow_nan=False),
        min_size=n, max_size=n))
    return JumpPath(horizon=1.0, times=np.asarray(times), sizes=np.asarray(sizes))


@given(jump_paths(), st.floats(min_value=1e-4, max_value=20.0))
@settings(max_examples=80, deadline=None)
def test_truncation_keeps_exactly_large_jumps(path, eps):
    out = truncate_jumps(path, eps)
    kept = path.sizes >= eps
    assert np.array_equal(out.sizes, path.sizes[kept])
    assert np.array_equal(out.times, path.times[kept])
    # Idempotent, and the terminal value never grows.
    again = truncate_jumps(out, eps)
    assert np.array_equal(again.sizes, out.sizes)
    assert out.value(1.0) <= path.value(1.0)


@given(jump_paths())
@settings(max_examples=50, deadline=None)
def test_truncation_at_zero_is_identity(path):
    out = truncate_jumps(path, 0.0)
    assert np.array_equal(out.sizes, path.sizes)


def test_path_value_left_limits():
    p = JumpPath(horizon=1.0, times=np.array([0.3, 0.7]), sizes=np.array([2.0, 5.0]))
    assert p.value(0.2) == 0.0
    assert p.value(0.3) == 2.0
    assert p.value_before(0.3) == 0.0
    assert p.value_before(0.7) == 2.0
    assert p.value(1.0) == 7.0


def test_first_passage_hand_path():
    p = JumpPath(horizon=1.0, times=np.array([0.3, 0.7]), sizes=np.array([2.0, 5.0]))
    fp = first_passage(p, 1.0)
    assert fp is not None
    assert fp.tau == 0.3
    assert fp.jump_index == 0
    assert fp.value_before == 0.0
    assert fp.value_at == 2.0

    fp2 = first_passage(p, 3.0)
    assert fp2.tau == 0.7 and fp2.value_at == 7.0 and fp2.value_before == 2.0

    assert first_passage(p, 8.0) is None


def test_first_passage_at_exact_level():
    p = JumpPath(horizon=1.0, times=np.array([0.5]), sizes=np.array([1.0]))
    fp = first_passage(p, 1.0)
    assert fp is not None and fp.tau == 0.5 and fp.value_at == 1.0


@pytest.mark.parametrize("alpha,gamma", [(1.0, 0.5), (1.5, 0.5), (1.0, 1.0), (1.2, 0.7)])
def test_inverse_moment_closed_form(alpha, gamma):
    spec = BernsteinSpec.alpha_stable(alpha)
    got = inverse_moment(spec, 1.0, gamma)
    assert got == pytest.approx(
        oracles.inverse_moment_closed_form(alpha, 1.0, gamma), rel=1e-6
    )


def test_inverse_moment_self_similar_scaling():
    spec = BernsteinSpec.alpha_stable(1.5)
    base = inverse_moment(spec, 1.0, 0.5)
    for t in (0.25, 0.5, 2.0, 4.0):
        assert inverse_moment(spec, t, 0.5) == pytest.approx(
            base * t ** (-2.0 * 0.5 / 1.5), rel=1e-8
        )


def test_inverse_moment_monte_carlo_cross_check():
    spec = BernsteinSpec.alpha_stable(1.0)
    vals = sample_terminal_values(spec, 1.0, 1e-4, 40_000, substream(29, 5),
                                  compensate_small_jumps=True)
    samples = vals ** -0.5
    se = samples.std(ddof=1) / math.sqrt(samples.size)
    assert abs(samples.mean() - 2.0 / math.sqrt(math.pi)) <= 3.0 * se


def test_inverse_moment_diverges_for_bounded_exponent():
    # A bounded Bernstein function has P(S_t = small) too heavy for negative
    # moments; the quadrature must refuse rather than return a number.
    spec = BernsteinSpec.custom(lambda u: u / (1.0 + u))
    with pytest.raises(QuadratureDivergenceError):
        inverse_moment(spec, 1.0, 0.5)


def test_stable_median_reproducible_and_plausible():
    spec = BernsteinSpec.alpha_stable(1.5)
    m1 = stable_median_s1(spec)
    m2 = stable_median_s1(spec)
    assert m1 == m2
    assert 0.5 < m1 < 1.5
    # Median must sit below the mean-free heavy tail scale but above the bulk
    # of the small-jump mass; the Laplace transform pins the plausible range.


def test_default_eps_cut_scales_self_similarly():
    spec = BernsteinSpec.alpha_stable(1.5)
    e1 = default_eps_cut(spec, 1.0)
    for t in (0.25, 0.5, 2.0):
        assert default_eps_cut(spec, t) == pytest.approx(
            e1 * t ** (2.0 / 1.5), rel=1e-12
        )


def test_default_eps_cut_monotone_in_fraction():
    spec = BernsteinSpec.alpha_stable(1.5)
    a = default_eps_cut(spec, 1.0, fraction=0.05)
    b = default_eps_cut(spec, 1.0, fraction=0.1)
    c = default_eps_cut(spec, 1.0, fraction=0.2)
    assert a < b < c


def test_substream_reproducible_and_keyed():
    a = substream(123, 1, 0).standard_normal(5)
    b = substream(123, 1, 0).standard_normal(5)
    c = substream(123, 2, 0).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_spec_validation():
    with pytest.raises(ValueError):
        BernsteinSpec.alpha_stable(2.0)
    with pytest.raises(ValueError):
        BernsteinSpec.alpha_stable(0.0)
    with pytest.raises(ValueError):
        BernsteinSpec.drift_only(-1.0)
