import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvnn.tensors import (
    MultiIndex,
    check_finite,
    enumerate_multi_indices,
    monomial_eval,
    multi_index_count,
    multinomial_coefficient,
    read_kvt,
    write_kvt,
)


class TestEnumeration:
    def test_d2_r2_order(self):
        got = [m.alpha for m in enumerate_multi_indices(2, 2)]
        assert got == [(2, 0), (1, 1), (0, 2)]

    def test_single_variable(self):
        got = enumerate_multi_indices(1, 5)
        assert len(got) == 1
        assert got[0].alpha == (5,)

    def test_d4_r3_count(self):
        # C(6,3) = 20, cross-checked by exhaustive enumeration of all
        # exponent tuples in {0..3}^4 with the right total degree
        brute = [
            alpha
            for alpha in itertools.product(range(4), repeat=4)
            if sum(alpha) == 3
        ]
        got = enumerate_multi_indices(4, 3)
        assert len(got) == math.comb(6, 3) == len(brute) == 20
        assert {m.alpha for m in got} == set(brute)

    def test_count_formula_exhaustive(self):
        for d in range(1, 9):
            for r in range(0, 6):
                got = enumerate_multi_indices(d, r)
                assert len(got) == math.comb(d + r - 1, r) == multi_index_count(d, r)
                assert all(m.degree == r for m in got)

    def test_descending_lexicographic(self):
        for d, r in [(3, 4), (5, 2), (2, 6)]:
            alphas = [m.alpha for m in enumerate_multi_indices(d, r)]
            assert alphas == sorted(alphas, reverse=True)

    def test_rejects_zero_dimension(self):
        with pytest.raises(ValueError):
            enumerate_multi_indices(0, 2)
        with pytest.raises(ValueError):
            enumerate_multi_indices(3, -1)

    @given(st.integers(1, 7), st.integers(0, 5))
    def test_no_duplicates(self, d, r):
        got = [m.alpha for m in enumerate_multi_indices(d, r)]
        assert len(set(got)) == len(got)


class TestMultinomial:
    def test_binomial_case(self):
        assert multinomial_coefficient(MultiIndex((1, 1))) == 2

    def test_single_variable_monomial(self):
        assert multinomial_coefficient((2, 0, 0)) == 1

    def test_all_ones(self):
        # 3!/(1*1*1) by direct factorial evaluation
        assert multinomial_coefficient((1, 1, 1)) == math.factorial(3)

    def test_matches_factorials(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            d = rng.integers(1, 5)
            alpha = tuple(int(a) for a in rng.integers(0, 5, size=d))
            expect = math.factorial(sum(alpha))
            for a in alpha:
                expect //= math.factorial(a)
            assert multinomial_coefficient(alpha) == expect

    def test_overflow_guard(self):
        with pytest.raises(OverflowError):
            multinomial_coefficient((21,))
        assert multinomial_coefficient((20,)) == 1


class TestMonomialEval:
    def test_direct_product(self):
        assert monomial_eval(np.array([2.0, 3.0]), (1, 1)) == 6.0

    def test_empty_product(self):
        assert monomial_eval(np.array([5.0, -1.0, 7.0]), (0, 0, 0)) == 1.0

    def test_hand_evaluated(self):
        # 1.5^2 * (-2)^3 = 2.25 * -8 = -18
        assert monomial_eval(np.array([1.5, -2.0]), (2, 3)) == pytest.approx(-18.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            monomial_eval(np.array([1.0, 2.0, 3.0]), (1, 1))


class TestMultinomialIdentity:
    """The expansion (x.y)^r = sum_{|a|=r} multinomial(a) x^a y^a is the
    backbone identity of the package."""

    @given(st.integers(1, 6), st.integers(0, 5), st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_positive_inputs_strict(self, d, r, seed):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.2, 1.2, size=d)
        y = rng.uniform(0.2, 1.2, size=d)
        lhs = sum(
            multinomial_coefficient(m) * monomial_eval(x, m) * monomial_eval(y, m)
            for m in enumerate_multi_indices(d, r)
        )
        rhs = float(np.dot(x, y)) ** r
        assert lhs == pytest.approx(rhs, rel=1e-12)

    @given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_signed_inputs_scale_relative(self, d, r, seed):
        # with signed entries the identity holds relative to the
        # cancellation-free scale (sum |x_i y_i|)^r
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, size=d)
        y = rng.uniform(-1, 1, size=d)
        lhs = sum(
            multinomial_coefficient(m) * monomial_eval(x, m) * monomial_eval(y, m)
            for m in enumerate_multi_indices(d, r)
        )
        rhs = float(np.dot(x, y)) ** r
        scale = float(np.sum(np.abs(x * y))) ** r
        assert abs(lhs - rhs) <= 1e-12 * max(scale, 1.0)


class TestKvtFormat:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        for shape in [(), (4,), (3, 5), (2, 3, 4)]:
            arr = rng.standard_normal(shape)
            path = tmp_path / "t.kvt"
            write_kvt(path, arr)
            back = read_kvt(path)
            assert back.shape == arr.shape
            assert np.array_equal(back, arr)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "t.kvt"
        write_kvt(path, np.zeros((2, 3)))
        raw = path.read_bytes()
        assert raw[:4] == b"KVT1"
        assert int.from_bytes(raw[4:8], "little") == 2
        assert int.from_bytes(raw[8:12], "little") == 2
        assert int.from_bytes(raw[12:16], "little") == 3
        assert len(raw) == 16 + 6 * 8

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.kvt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            read_kvt(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.kvt"
        write_kvt(path, np.zeros(8))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="truncated"):
            read_kvt(path)

    def test_rejects_non_finite(self, tmp_path):
        with pytest.raises(ValueError):
            write_kvt(tmp_path / "t.kvt", np.array([1.0, np.nan]))


def test_check_finite_passes_and_rejects():
    arr = check_finite([1.0, 2.0])
    assert arr.dtype == np.float64
    with pytest.raises(ValueError):
        check_finite(np.array([np.inf]))
