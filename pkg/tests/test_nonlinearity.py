"""FFT convolution against a naive oracle, residual identities, tails."""

import numpy as np
import pytest

from qpnls.lattice import AnalyticWeight, MultiIndex, TruncationBox
from qpnls.nonlinearity import (
    FourierField,
    TailSpec,
    conv_power,
    nonlinear_terms,
    residual,
    sparse_convolve,
)
from qpnls.resonance import SeedSolution


def naive_convolve(maps):
    """Repeated pairwise lattice convolution by explicit double loops."""
    out = None
    for m in maps:
        if out is None:
            out = dict(m)
            continue
        acc = {}
        for s1, c1 in out.items():
            for s2, c2 in m.items():
                key = s1 + s2
                acc[key] = acc.get(key, 0.0) + c1 * c2
        out = acc
    return out or {}


def random_map(rng, b, d, n_sites, span=2):
    m = {}
    for _ in range(n_sites):
        n = tuple(int(a) for a in rng.integers(-span, span + 1, size=b))
        j = tuple(int(a) for a in rng.integers(-span, span + 1, size=d))
        m[MultiIndex(n, j)] = complex(rng.standard_normal(), rng.standard_normal())
    return m


def map_close(a, b, tol):
    scale = max((abs(c) for c in list(a.values()) + list(b.values())), default=1.0)
    for s in set(a) | set(b):
        if abs(a.get(s, 0.0) - b.get(s, 0.0)) > tol * scale:
            return False
    return True


@pytest.mark.parametrize("b,d", [(1, 1), (2, 1), (1, 2)])
def test_sparse_convolve_matches_naive(b, d):
    rng = np.random.default_rng(7 + 10 * b + d)
    for _ in range(5):
        f = random_map(rng, b, d, 6)
        g = random_map(rng, b, d, 4)
        got = sparse_convolve([(f, 2), (g, 1)], floor_rel=0.0)
        want = naive_convolve([f, f, g])
        assert map_close(got, want, 1e-12)


def test_sparse_convolve_empty_and_zero_power():
    f = {MultiIndex((0,), (1,)): 1.0 + 0j}
    assert sparse_convolve([(f, 0)]) == {}
    assert sparse_convolve([({}, 1), (f, 1)]) == {}


def test_conv_power_single_mode():
    # (u*v)^{*p} * u for a single mode lands on the mode itself with |a|^{2p} a.
    seed = SeedSolution(((2,),), (0.3 + 0.4j,))
    box = TruncationBox(5, 10)
    field = seed.field(box)
    for p in (1, 2):
        out = conv_power(field, p)
        s = seed.support()[0]
        assert set(out) == {s}
        a = seed.amplitudes[0]
        assert out[s] == pytest.approx(abs(a) ** (2 * p) * a, rel=1e-13)


def test_nonlinear_terms_conjugation_symmetry():
    # With v the conjugate mirror of u, nl_v(s) = conj(nl_u(-s)).
    rng = np.random.default_rng(11)
    box = TruncationBox(4, 4)
    u = random_map(rng, 1, 1, 5)
    v = {-s: np.conj(c) for s, c in u.items()}
    field = FourierField(u, v, box, 1, 1)
    nl_u, nl_v = nonlinear_terms(field, 1, TailSpec())
    assert set(nl_v) == {-s for s in nl_u}
    for s, c in nl_u.items():
        assert nl_v[-s] == pytest.approx(np.conj(c), rel=1e-12)


def test_residual_exact_periodic_solution():
    # Single mode u = a e^{i(-omega t + jx)} with omega = j^2 + delta |a|^{2p}
    # solves the coefficient system exactly.
    delta = 0.05
    for p in (1, 2):
        for jk in ((3,), (1, 2)):
            seed = SeedSolution((jk,), (0.7 - 0.2j,))
            box = TruncationBox(2 * p + 3, (2 * p + 3) * max(abs(a) for a in jk))
            field = seed.field(box)
            a = seed.amplitudes[0]
            omega = np.array([seed.omega0[0] + delta * abs(a) ** (2 * p)])
            res = residual(field, omega, p, delta=delta)
            assert res.analytic_norm(AnalyticWeight()) <= 1e-13


def test_tail_decay_validation():
    ok = TailSpec(terms=[(1, {(0,): 0.5, (2,): 0.1})], decay_c_amp=1.0, decay_rate=1.0)
    assert not ok.is_empty()
    with pytest.raises(ValueError):
        TailSpec(terms=[(1, {(3,): 0.9})], decay_c_amp=1.0, decay_rate=1.0)
    with pytest.raises(ValueError):
        TailSpec(terms=[(0, {(0,): 0.1})])


def test_tail_contribution_matches_naive():
    rng = np.random.default_rng(23)
    box = TruncationBox(4, 4)
    u = random_map(rng, 1, 1, 4, span=1)
    v = {-s: np.conj(c) for s, c in u.items()}
    field = FourierField(u, v, box, 1, 1)
    alpha = {(1,): 0.2 + 0j, (-1,): 0.1j}
    tail = TailSpec(terms=[(1, alpha)], decay_c_amp=1.0, decay_rate=0.1)
    p = 1
    nl_u, _ = nonlinear_terms(field, p, tail)
    base = naive_convolve([u, u, v])
    lift = {MultiIndex((0,), ell): c for ell, c in alpha.items()}
    extra = naive_convolve([lift, u, u, u, v, v])
    want = dict(base)
    for s, c in extra.items():
        want[s] = want.get(s, 0.0) + c
    assert map_close(nl_u, want, 1e-12)


def test_field_json_roundtrip_and_defect():
    seed = SeedSolution(((1,), (2,)), (0.1 + 0.2j, -0.3j))
    box = TruncationBox(3, 6)
    field = seed.field(box)
    assert field.conjugation_defect() == 0.0
    doc = field.to_json_dict()
    back = FourierField.from_json_dict(doc)
    assert back.u == field.u
    assert back.v == field.v
    assert back.box == field.box
    # Breaking the mirror relation shows up in the defect.
    broken = field.copy()
    s = next(iter(broken.v))
    broken.v[s] += 1e-3
    assert broken.conjugation_defect() == pytest.approx(1e-3, rel=1e-9)
