import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mstates.timeseries import (
    LOCALLY_NORMALIZED,
    ORIGINAL,
    PriceMatrix,
    ReturnMatrix,
    WindowSpec,
    average_correlation,
    compute_returns,
    correlation_matrix,
    local_normalize,
    partition_windows,
)


def dates(n):
    return [f"d{i:06d}" for i in range(n)]


def returns_of(values, kind=ORIGINAL):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return ReturnMatrix([f"S{k}" for k in range(len(values))], dates(values.shape[1]), values, kind)


def sliding_reference(r, n):
    """Plain-loop trailing standardization with population moments."""
    out = []
    for t in range(n - 1, len(r)):
        w = r[t - n + 1:t + 1]
        m = sum(w) / n
        var = sum((x - m) ** 2 for x in w) / n
        out.append((r[t] - m) / math.sqrt(var))
    return np.array(out)


# -- prices and returns -----------------------------------------------------

def test_price_matrix_rejects_nonpositive():
    with pytest.raises(ValueError, match="S1.*d000002"):
        PriceMatrix(["S0", "S1"], dates(3), [[1, 2, 3], [1, 2, 0]])


def test_price_matrix_rejects_unsorted_dates():
    with pytest.raises(ValueError):
        PriceMatrix(["S0"], ["b", "a"], [[1, 2]])


def test_simple_returns():
    r = compute_returns(PriceMatrix(["A"], dates(3), [[100, 110, 99]]))
    assert np.allclose(r.values, [[0.10, -0.10]], atol=1e-15)
    assert r.kind == ORIGINAL
    assert r.dates == ["d000001", "d000002"]


def test_constant_prices_zero_returns():
    r = compute_returns(PriceMatrix(["A"], dates(5), [[7.0] * 5]))
    assert np.all(r.values == 0.0)


def test_returns_match_loop_oracle():
    rng = np.random.default_rng(11)
    S = 50 * np.exp(np.cumsum(rng.normal(0, 0.02, (3, 1001)), axis=1))
    r = compute_returns(PriceMatrix(["A", "B", "C"], dates(1001), S))
    for k in range(3):
        for t in range(1000):
            assert r.values[k, t] == pytest.approx((S[k, t + 1] - S[k, t]) / S[k, t], abs=1e-15)


def test_returns_multi_step_interval():
    S = np.array([[1.0, 2.0, 4.0, 8.0]])
    r = compute_returns(PriceMatrix(["A"], dates(4), S), dt=2)
    assert np.allclose(r.values, [[3.0, 3.0]])
    with pytest.raises(ValueError):
        compute_returns(PriceMatrix(["A"], dates(2), [[1.0, 2.0]]), dt=2)


# -- local normalization ----------------------------------------------------

def test_ramp_normalizes_to_constant():
    out = local_normalize(returns_of(np.arange(40.0)), 13)
    assert out.kind == LOCALLY_NORMALIZED
    assert out.values.shape == (1, 28)
    assert np.allclose(out.values, 6 / math.sqrt(14), atol=1e-12)
    assert out.mask is None


def test_constant_segment_is_excluded():
    r = np.concatenate([np.random.default_rng(0).normal(size=20), np.full(20, 0.01)])
    out = local_normalize(returns_of(r), 13)
    excluded = ~out.mask[0]
    # windows fully inside the constant block: end points t = 32..39 on the input axis
    assert np.flatnonzero(excluded).tolist() == list(range(32 - 12, 40 - 12))
    assert out.excluded == {"S0": 8}
    assert np.all(np.isfinite(out.values))
    assert np.all(out.values[0, excluded] == 0.0)


def test_normalize_matches_sliding_oracle():
    rng = np.random.default_rng(3)
    r = rng.standard_normal(500)
    out = local_normalize(returns_of(r), 13)
    assert np.allclose(out.values[0], sliding_reference(r, 13), atol=1e-12)


def test_normalize_large_sample_moments():
    rng = np.random.default_rng(4)
    r = rng.standard_normal(100_000)
    out = local_normalize(returns_of(r), 13).values[0]
    ref = sliding_reference(r[:20_000], 13)
    assert abs(out.mean()) < 0.02
    assert abs(out.var() - ref.var()) < 0.1


@settings(max_examples=40, deadline=None)
@given(
    a=st.floats(0.01, 100.0),
    b=st.floats(-5.0, 5.0),
    seed=st.integers(0, 2**31 - 1),
)
def test_normalize_affine_invariant(a, b, seed):
    r = np.random.default_rng(seed).normal(size=60)
    x = local_normalize(returns_of(r), 13).values
    y = local_normalize(returns_of(a * r + b), 13).values
    assert np.allclose(x, y, atol=1e-9 * max(1.0, abs(b) / a))


def test_normalize_rejects_wrong_kind_and_short_series():
    with pytest.raises(ValueError):
        local_normalize(returns_of(np.arange(20.0), LOCALLY_NORMALIZED))
    with pytest.raises(ValueError):
        local_normalize(returns_of(np.arange(5.0)), 13)


# -- windows ----------------------------------------------------------------

@pytest.mark.parametrize(
    "T,L,expected",
    [(5542, 42, 131), (42, 42, 1), (100, 42, 2), (83, 42, 1)],
)
def test_window_counts(T, L, expected):
    assert len(partition_windows(T, WindowSpec(L))) == expected


def test_window_ranges_disjoint_prefix():
    w = partition_windows(100, WindowSpec(42))
    assert [(i, s.start, s.stop) for i, s in w] == [(0, 0, 42), (1, 42, 84)]


@given(T=st.integers(2, 2000), L=st.integers(2, 200))
def test_windows_cover_prefix(T, L):
    if T < L:
        with pytest.raises(ValueError):
            partition_windows(T, WindowSpec(L))
        return
    w = partition_windows(T, WindowSpec(L))
    covered = np.concatenate([np.arange(s.start, s.stop) for _, s in w])
    assert np.array_equal(covered, np.arange(len(covered)))
    assert len(covered) == (T // L) * L


def test_window_spec_validation():
    with pytest.raises(ValueError):
        WindowSpec(1)


# -- correlations -----------------------------------------------------------

def test_identical_and_negated_rows():
    x = np.random.default_rng(0).normal(size=30)
    assert correlation_matrix(returns_of([x, x])).values[0, 1] == pytest.approx(1.0, abs=1e-15)
    assert correlation_matrix(returns_of([x, -x])).values[0, 1] == pytest.approx(-1.0, abs=1e-15)


def test_correlation_matches_textbook():
    x = np.random.default_rng(9).normal(size=(5, 50))
    c = correlation_matrix(returns_of(x)).values
    for k in range(5):
        for l in range(5):
            a, b = x[k], x[l]
            ma, mb = sum(a) / 50, sum(b) / 50
            cov = sum((a - ma) * (b - mb)) / 50
            ref = cov / math.sqrt(sum((a - ma) ** 2) / 50 * sum((b - mb) ** 2) / 50)
            assert c[k, l] == pytest.approx(ref, abs=1e-12)


def test_correlation_matrix_invariants():
    x = np.random.default_rng(1).normal(size=(8, 20))
    c = correlation_matrix(returns_of(x)).values
    assert np.array_equal(c, c.T)
    assert np.all(np.diag(c) == 1.0)
    assert np.all(np.abs(c) <= 1.0)
    assert np.linalg.eigvalsh(c).min() >= -1e-10


def test_zero_variance_stock_flagged():
    x = np.random.default_rng(2).normal(size=(3, 20))
    x[1] = 0.5
    cm = correlation_matrix(returns_of(x), window_index=4)
    assert cm.flagged == (1,)
    assert np.all(cm.values[1, [0, 2]] == 0.0)
    assert cm.values[1, 1] == 1.0


def test_masked_correlation_uses_joint_points():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(2, 40))
    mask = np.ones_like(x, bool)
    mask[0, :5] = False
    rm = ReturnMatrix(["a", "b"], dates(40), x, ORIGINAL, mask)
    assert correlation_matrix(rm).values[0, 1] == pytest.approx(np.corrcoef(x[:, 5:])[0, 1], abs=1e-12)


def test_correlation_window_slice():
    x = np.random.default_rng(0).normal(size=(3, 100))
    c = correlation_matrix(returns_of(x), slice(42, 84), 1)
    assert c.window_index == 1
    assert np.allclose(c.values, np.corrcoef(x[:, 42:84]), atol=1e-12)


def test_average_correlation():
    x = np.random.default_rng(0).normal(size=50)
    assert average_correlation(returns_of([x, x])) == pytest.approx(1.0)
    y = np.random.default_rng(1).normal(size=50)
    # pair coefficients (1.0, c, c) with c the x-y correlation
    c = np.corrcoef(x, x + y)[0, 1]
    got = average_correlation(returns_of([x, x, x + y]))
    assert got == pytest.approx((1.0 + 2 * c) / 3, abs=1e-12)
    assert average_correlation(returns_of([x, x, x + y]), [(0, 1)]) == pytest.approx(1.0)
