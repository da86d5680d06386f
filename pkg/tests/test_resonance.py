"""Resonant-set geometry: brute-force oracles and genericity certificates."""

import itertools

import numpy as np
import pytest

from qpnls.lattice import MultiIndex, TruncationBox
from qpnls.nonlinearity import f0_support, sparse_convolve
from qpnls.resonance import (
    SeedSolution,
    bicharacteristics,
    build_resonance_graph,
    certify_genericity,
    component_saturation,
    coupling_offsets,
    cubic_resonance_test,
    cubic_resonant_j_set,
)


def test_seed_validation():
    with pytest.raises(ValueError):
        SeedSolution(((1,), (1,)), (0.1, 0.2))  # duplicate frequency
    with pytest.raises(ValueError):
        SeedSolution(((0, 0),), (0.1,))  # zero frequency
    with pytest.raises(ValueError):
        SeedSolution(((1,),), (0.1, 0.2))  # amplitude count mismatch


def test_seed_support_and_anchors():
    seed = SeedSolution(((1,), (3,)), (0.1, 0.2))
    assert seed.omega0 == (1, 9)
    supp = seed.support()
    assert supp == [MultiIndex((-1, 0), (1,)), MultiIndex((0, -1), (3,))]
    anchors = seed.anchor_sites()
    assert set(anchors) == set(supp) | {-s for s in supp}


def test_bicharacteristics_brute_force():
    seed = SeedSolution(((1,), (2,)), (0.1, 0.1))
    box = TruncationBox(3, 4)
    rset = bicharacteristics(seed, box)
    omega0 = seed.omega0
    plus, minus = set(), set()
    for n in itertools.product(range(-3, 4), repeat=2):
        for j in range(-4, 5):
            dot = n[0] * omega0[0] + n[1] * omega0[1]
            s = MultiIndex(n, (j,))
            if dot + j * j == 0 and (j != 0 or n[0] <= 0):
                plus.add(s)
            if -dot + j * j == 0 and (j != 0 or n[0] > 0):
                minus.add(s)
    assert rset.plus == plus
    assert rset.minus == minus


def test_bicharacteristics_mirror_symmetry():
    seed = SeedSolution(((1, 0), (0, 2)), (0.1, 0.1))
    rset = bicharacteristics(seed, TruncationBox(3, 3))
    nonzero_plus = {s for s in rset.plus if any(a != 0 for a in s.j)}
    nonzero_minus = {s for s in rset.minus if any(a != 0 for a in s.j)}
    assert nonzero_minus == {-s for s in nonzero_plus}


def test_coupling_offsets_match_convolution_support():
    seed = SeedSolution(((1,), (2,)), (0.3, 0.7))
    for p in (1, 2):
        same, opp = coupling_offsets(seed, p)
        box = TruncationBox(4 * p + 2, 8 * p + 4)
        field = seed.field(box)
        same_conv = set(
            sparse_convolve([(field.u, p), (field.v, p)])
        )
        opp_conv = set(
            sparse_convolve([(field.u, p - 1), (field.v, p + 1)])
        )
        # The combinatorial sumsets contain the convolution supports
        # (equality up to exact cancellations, absent for generic amplitudes).
        assert same_conv <= same
        assert opp_conv <= opp


def test_cubic_projection_is_seed_modes():
    seed = SeedSolution(((1,), (2,)), (0.01, 0.01))
    box = TruncationBox(5, 10)
    graph = build_resonance_graph(seed, bicharacteristics(seed, box), 1)
    coupled = [c for c in graph.component_sites() if len(c) > 1]
    assert coupled, "expected at least one coupled component"
    projection = {s.j for comp in coupled for s, _ in comp}
    assert projection == {(j,) for j in cubic_resonant_j_set(seed)}
    assert cubic_resonant_j_set(seed) == {-2, -1, 1, 2}


def test_cubic_resonance_test_closed_forms():
    jk, jk2 = (1, 0), (0, 1)
    # same sign: (jk - jk2).(j + jk) == 0
    assert cubic_resonance_test(jk, jk2, (-1, 0), "same_sign")
    assert not cubic_resonance_test(jk, jk2, (1, 0), "same_sign")
    # opposite sign: (j + jk).(j + jk2) == 0
    assert cubic_resonance_test(jk, jk2, (-1, -1), "opposite_sign")
    assert not cubic_resonance_test(jk, jk2, (1, 1), "opposite_sign")
    with pytest.raises(ValueError):
        cubic_resonance_test(jk, jk, (0, 0), "same_sign")


def test_generic_seed_certifies():
    seed = SeedSolution(((1,), (2,)), (0.01, 0.02))
    box = TruncationBox(5, 10)
    graph = build_resonance_graph(seed, bicharacteristics(seed, box), 1)
    cert = certify_genericity(graph, seed, 1)
    assert cert.is_generic
    assert cert.max_component_size <= cert.bound == max(2 * seed.b, seed.d + 2)
    assert cert.f0_support_clean
    assert cert.mirror_pair_free
    doc = cert.to_json_dict()
    assert doc["is_generic"] is True


def test_mirror_pair_seed_rejected():
    seed = SeedSolution(((1,), (-1,)), (0.01, 0.02))
    box = TruncationBox(5, 5)
    graph = build_resonance_graph(seed, bicharacteristics(seed, box), 1)
    cert = certify_genericity(graph, seed, 1)
    assert not cert.mirror_pair_free
    assert not cert.is_generic
    assert cert.violating_component


def test_component_saturation_generic():
    seed = SeedSolution(((1,), (2,)), (0.01, 0.02))
    base, doubled = component_saturation(seed, TruncationBox(5, 10), 1)
    assert base == doubled
    assert base <= max(2 * seed.b, seed.d + 2)


def test_f0_support_matches_convolution():
    seed = SeedSolution(((1, 0), (0, 1)), (0.3, 0.7))
    box = TruncationBox(8, 8)
    field = seed.field(box)
    for p in (1, 2):
        supp = f0_support(seed, p)
        conv = set(sparse_convolve([(field.u, p + 1), (field.v, p)]))
        assert conv <= supp


def test_small_box_raises_during_certification():
    from qpnls.resonance import BoxTooSmallError

    seed = SeedSolution(((3,),), (0.1,))
    box = TruncationBox(1, 1)  # cannot hold supp F0
    graph = build_resonance_graph(seed, bicharacteristics(seed, box), 1)
    with pytest.raises(BoxTooSmallError):
        certify_genericity(graph, seed, 1)
