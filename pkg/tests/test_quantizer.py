import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stabcodes.quantizer import (
    ESCAPE,
    DitheredQuantizer,
    SymbolStats,
    build_prefix_code,
    dither_uniform,
    empirical_entropy,
    gaussian_pmf,
    independent_encode,
    measure_rate,
    round_half_away,
)


def test_round_half_away():
    np.testing.assert_array_equal(round_half_away([0.5, -0.5, 1.5, -2.5, 0.49]), [1, -1, 2, -3, 0])


def test_dither_is_pure_function_of_key():
    a = dither_uniform(7, np.arange(100), 2)
    b = np.array([dither_uniform(7, t, 2) for t in range(100)])
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, dither_uniform(8, np.arange(100), 2))
    assert isinstance(dither_uniform(1, 3, 0), float)


def test_dither_range():
    q = DitheredQuantizer(2.0, dither_seed=3)
    z = q.dither(np.arange(10000))
    assert z.min() > -1.0 and z.max() <= 1.0


def test_quantize_rejects_nonfinite():
    with pytest.raises(ValueError):
        DitheredQuantizer(1.0).quantize(np.nan)


def test_rejects_bad_step():
    with pytest.raises(ValueError):
        DitheredQuantizer(0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e6, 1e6), st.integers(0, 10**6), st.floats(0.01, 50))
def test_error_bounded_by_half_step(v, t, delta):
    q = DitheredQuantizer(delta, dither_seed=11)
    w = q.reconstruct(q.quantize(v, t), t)
    assert abs(w - v) <= delta / 2 * (1 + 1e-9) + 1e-9 * abs(v)


def test_independent_encode_shape():
    q = DitheredQuantizer(1.0)
    out = independent_encode(q, np.zeros(5), 3, np.arange(5))
    assert out.shape == (5, 3)
    with pytest.raises(ValueError):
        independent_encode(q, 0.0, 0)


def test_huffman_known_lengths():
    assert build_prefix_code({0: 0.9, 1: 0.1}).expected_length() == pytest.approx(1.0)
    assert build_prefix_code({0: 0.5, 1: 0.25, 2: 0.25}).expected_length() == pytest.approx(1.5)
    assert build_prefix_code({0: 1.0}).lengths == {0: 1}


def test_prefix_code_validation():
    with pytest.raises(ValueError):
        build_prefix_code({0: 0.5, 1: 0.4})
    with pytest.raises(ValueError):
        build_prefix_code({0: 0.0, 1: 1.0})


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 1000), min_size=2, max_size=30))
def test_huffman_sandwich(weights):
    p = np.array(weights, float) / sum(weights)
    pmf = dict(enumerate(p))
    code = build_prefix_code(pmf)
    h = float(-(p * np.log2(p)).sum())
    L = code.expected_length()
    assert h - 1e-9 <= L <= h + 1 + 1e-9
    assert code.kraft_sum() <= 1 + 1e-12


def test_escape_cost_and_missing_symbol():
    code = build_prefix_code({0: 0.5, 1: 0.5 - 1e-6}, escape_prob=1e-6)
    assert code.cost(5) == code.escape_length + 64
    assert code.cost(ESCAPE) == code.escape_length
    with pytest.raises(KeyError):
        build_prefix_code({0: 1.0}).cost(3)


def test_gaussian_pmf_sums_to_one():
    pmf, esc = gaussian_pmf(1.0, 100.0)
    assert sum(pmf.values()) + esc == pytest.approx(1.0, abs=1e-12)
    code = build_prefix_code(pmf, esc)
    assert code.kraft_sum() == pytest.approx(1.0)


def test_empirical_entropy():
    assert empirical_entropy(SymbolStats.from_stream([0, 1, 0, 1])) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        empirical_entropy(SymbolStats({}, 0))


def test_measure_rate_matches_lengths():
    stream = [0, 0, 1, 2]
    code = build_prefix_code(SymbolStats.from_stream(stream).pmf())
    assert measure_rate(code, stream) == pytest.approx(1.5)


def test_gaussian_rate_close_to_entropy():
    rng = np.random.default_rng(0)
    v = rng.normal(0, 10, 200_000)
    q = DitheredQuantizer(1.0, dither_seed=1)
    s = q.quantize(v, np.arange(v.size))
    h = empirical_entropy(SymbolStats.from_stream(s))
    pmf, esc = gaussian_pmf(1.0, 100 + 1 / 12)
    rate = measure_rate(build_prefix_code(pmf, esc), s)
    assert h <= rate <= h + 0.05
    assert h == pytest.approx(0.5 * math.log2(2 * math.pi * math.e * 100), abs=0.05)
