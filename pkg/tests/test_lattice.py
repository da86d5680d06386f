"""Multi-index arithmetic, truncation boxes, and analytic weights."""

import math

import pytest

from qpnls.lattice import (
    AnalyticWeight,
    BoxSizeError,
    MultiIndex,
    TruncationBox,
    enumerate_box,
    origin,
    site,
    weighted_l1,
)


def test_multiindex_arithmetic():
    a = MultiIndex((1, -2), (3,))
    b = MultiIndex((0, 4), (-1,))
    assert a + b == MultiIndex((1, 2), (2,))
    assert a - b == MultiIndex((1, -6), (4,))
    assert -a == MultiIndex((-1, 2), (-3,))
    assert a.l1() == 6
    assert a.j_sq() == 9
    assert a.flat() == (1, -2, 3)


def test_site_and_origin_helpers():
    assert site([1.0, 2.0], [3.0]) == MultiIndex((1, 2), (3,))
    assert origin(2, 3) == MultiIndex((0, 0), (0, 0, 0))


def test_box_contains_and_shape():
    box = TruncationBox(2, 3)
    assert box.contains(MultiIndex((2,), (-3, 1)))
    assert not box.contains(MultiIndex((3,), (0, 0)))
    assert not box.contains(MultiIndex((0,), (0, 4)))
    assert box.shape(1, 2) == (5, 7, 7)
    assert box.site_count(1, 2) == 5 * 49
    assert box.doubled() == TruncationBox(4, 6)


def test_box_rejects_negative_widths():
    with pytest.raises(ValueError):
        TruncationBox(-1, 2)


def test_enumerate_box_order_and_count():
    box = TruncationBox(1, 1)
    sites = enumerate_box(box, 1, 1)
    assert len(sites) == box.site_count(1, 1) == 9
    assert len(set(sites)) == len(sites)
    assert sites == sorted(sites)  # lexicographic in (n, j)
    assert sites[0] == MultiIndex((-1,), (-1,))
    assert sites[-1] == MultiIndex((1,), (1,))


def test_enumerate_box_cap():
    with pytest.raises(BoxSizeError):
        enumerate_box(TruncationBox(10, 10), 1, 1, cap=100)


def test_analytic_weight():
    w = AnalyticWeight(0.2, 0.3)
    s = MultiIndex((1, -1), (2,))
    assert w.weight(s) == pytest.approx(math.exp(0.2 * 2 + 0.3 * 2))
    with pytest.raises(ValueError):
        AnalyticWeight(0.0, 0.1)


def test_weighted_l1():
    w = AnalyticWeight(0.1, 0.1)
    coeffs = {
        MultiIndex((0,), (0,)): 2.0 + 0j,
        MultiIndex((1,), (-1,)): 1j,
    }
    expected = 2.0 + math.exp(0.2)
    assert weighted_l1(coeffs, w) == pytest.approx(expected, rel=1e-14)
    assert weighted_l1({}, w) == 0.0
