"""Fourier-space nonlinearity: convolution powers and the full residual.

The unknowns are two sparse coefficient maps u, v on Z^(b+d) (v plays the
role of the conjugate field but is iterated as an independent unknown).
The equation in coefficient space reads

    (n.omega + |j|^2) u + delta * [ (u*v)^{*p} * u + tail ] = 0
    (-n.omega + |j|^2) v + delta * [ (u*v)^{*p} * v + tail ] = 0

with * denoting lattice convolution.  All convolutions are evaluated by
zero-padded FFT sized to hold the full linear convolution (no wraparound),
then thresholded back to a sparse map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Mapping, Sequence

import numpy as np
from scipy.fft import fftn, ifftn, next_fast_len

from .lattice import AnalyticWeight, MultiIndex, TruncationBox, weighted_l1

# Relative floor below which post-FFT coefficients are discarded.
COEFF_FLOOR = 1e-14

# Refuse FFT grids beyond this many points.
FFT_POINT_CAP = 200_000_000


class FFTSizeError(Exception):
    """Convolution grid too large; reduce the box or the power p."""


@dataclass
class FourierField:
    """Sparse (u, v) coefficient pair on a truncated lattice."""

    u: dict[MultiIndex, complex]
    v: dict[MultiIndex, complex]
    box: TruncationBox
    b: int
    d: int

    def analytic_norm(self, w: AnalyticWeight) -> float:
        return weighted_l1(self.u, w) + weighted_l1(self.v, w)

    def conjugation_defect(self) -> float:
        """Max |v(n,j) - conj(u(-n,-j))|; zero for a physical solution."""
        sites = set(self.v) | {-s for s in self.u}
        return max(
            (abs(self.v.get(s, 0.0) - np.conj(self.u.get(-s, 0.0))) for s in sites),
            default=0.0,
        )

    def copy(self) -> "FourierField":
        return FourierField(dict(self.u), dict(self.v), self.box, self.b, self.d)

    def to_json_dict(self) -> dict:
        def entries(coeffs: Mapping[MultiIndex, complex]) -> list[dict]:
            return [
                {"n": list(s.n), "j": list(s.j), "re": c.real, "im": c.imag}
                for s, c in sorted(coeffs.items())
            ]

        return {
            "b": self.b,
            "d": self.d,
            "box": {"n_time": self.box.n_time, "n_space": self.box.n_space},
            "u": entries(self.u),
            "v": entries(self.v),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "FourierField":
        def coeffs(entries: list[dict]) -> dict[MultiIndex, complex]:
            return {
                MultiIndex(tuple(e["n"]), tuple(e["j"])): complex(e["re"], e["im"])
                for e in entries
            }

        return cls(
            u=coeffs(doc["u"]),
            v=coeffs(doc["v"]),
            box=TruncationBox(doc["box"]["n_time"], doc["box"]["n_space"]),
            b=doc["b"],
            d=doc["d"],
        )


@dataclass
class TailSpec:
    """Analytic tail sum_m alpha_m * (u*v)^{*(p+m)} * u.

    Each alpha_m is a sparse map on Z^d (x-dependent coefficient); its
    coefficients must obey |alpha_m(l)| <= decay_c_amp * exp(-decay_rate*|l|).
    """

    terms: list[tuple[int, dict[tuple[int, ...], complex]]] = dc_field(
        default_factory=list
    )
    decay_c_amp: float = 1.0
    decay_rate: float = 1.0

    def __post_init__(self) -> None:
        for m, alpha in self.terms:
            if m < 1:
                raise ValueError("tail exponents m must be >= 1")
            for ell, c in alpha.items():
                bound = self.decay_c_amp * math.exp(
                    -self.decay_rate * sum(abs(a) for a in ell)
                )
                if abs(c) > bound * (1 + 1e-12):
                    raise ValueError(
                        f"alpha_{m}({ell}) = {c} violates the stated decay bound"
                    )

    def is_empty(self) -> bool:
        return not self.terms

    def lifted(self, m: int, b: int) -> dict[MultiIndex, complex]:
        """alpha_m embedded on the (n, j) lattice at n = 0."""
        alpha = dict(self.terms)[m]
        zero_n = (0,) * b
        return {MultiIndex(zero_n, ell): c for ell, c in alpha.items()}


def _bounds(coeffs: Mapping[MultiIndex, complex], dim: int) -> tuple[np.ndarray, np.ndarray]:
    pts = np.array([s.flat() for s in coeffs], dtype=np.int64)
    return pts.min(axis=0), pts.max(axis=0)


def sparse_convolve(
    factors: Sequence[tuple[Mapping[MultiIndex, complex], int]],
    floor_rel: float = COEFF_FLOOR,
) -> dict[MultiIndex, complex]:
    """Convolution of sparse maps, each repeated `power` times.

    Exact linear convolution: the FFT grid is sized to the sumset of the
    factor supports, so there is no wraparound.  Coefficients below
    floor_rel times the max magnitude are dropped.
    """
    factors = [(c, k) for c, k in factors if k > 0]
    if not factors:
        return {}
    if any(not c for c, _ in factors):
        return {}
    dim = len(next(iter(factors[0][0])).flat())
    lo = np.zeros(dim, dtype=np.int64)
    hi = np.zeros(dim, dtype=np.int64)
    for coeffs, power in factors:
        f_lo, f_hi = _bounds(coeffs, dim)
        lo += power * f_lo
        hi += power * f_hi
    out_shape = tuple(int(h - l + 1) for l, h in zip(lo, hi))
    grid_shape = tuple(next_fast_len(s) for s in out_shape)
    n_points = int(np.prod(grid_shape))
    if n_points > FFT_POINT_CAP:
        raise FFTSizeError(
            f"convolution grid needs {n_points} points; reduce the box or p"
        )

    transform = np.ones(grid_shape, dtype=np.complex128)
    for coeffs, power in factors:
        f_lo, _ = _bounds(coeffs, dim)
        arr = np.zeros(grid_shape, dtype=np.complex128)
        for s, c in coeffs.items():
            idx = tuple(int(a - l) for a, l in zip(s.flat(), f_lo))
            arr[idx] += c
        transform *= fftn(arr) ** power

    result = ifftn(transform)
    # The shift of each factor grid was its own minimum, so the product
    # transform corresponds to coordinates offset by sum(power * f_lo) = lo.
    sub = result[tuple(slice(0, s) for s in out_shape)]
    mags = np.abs(sub)
    peak = mags.max()
    if peak == 0.0:
        return {}
    out: dict[MultiIndex, complex] = {}
    n_b = None  # split point between n and j recovered from any input site
    any_site = next(iter(factors[0][0]))
    n_b = len(any_site.n)
    for idx in np.argwhere(mags > floor_rel * peak):
        coord = tuple(int(i + l) for i, l in zip(idx, lo))
        out[MultiIndex(coord[:n_b], coord[n_b:])] = complex(sub[tuple(idx)])
    return out


def conv_power(field: FourierField, p: int) -> dict[MultiIndex, complex]:
    """(u*v)^{*p} * u = u^{*(p+1)} * v^{*p}, sparse output."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return sparse_convolve([(field.u, p + 1), (field.v, p)])


def _truncate(
    coeffs: dict[MultiIndex, complex], box: TruncationBox
) -> dict[MultiIndex, complex]:
    return {s: c for s, c in coeffs.items() if box.contains(s)}


def nonlinear_terms(
    field: FourierField, p: int, tail: TailSpec
) -> tuple[dict[MultiIndex, complex], dict[MultiIndex, complex]]:
    """The u-row and v-row nonlinearities, untruncated."""
    nl_u = sparse_convolve([(field.u, p + 1), (field.v, p)])
    nl_v = sparse_convolve([(field.u, p), (field.v, p + 1)])
    for m, _ in tail.terms:
        lift = tail.lifted(m, field.b)
        for acc, u_pow, v_pow in (
            (nl_u, p + m + 1, p + m),
            (nl_v, p + m, p + m + 1),
        ):
            extra = sparse_convolve([(lift, 1), (field.u, u_pow), (field.v, v_pow)])
            for s, c in extra.items():
                acc[s] = acc.get(s, 0.0) + c
    return nl_u, nl_v


def residual(
    field: FourierField,
    omega: np.ndarray,
    p: int,
    tail: TailSpec | None = None,
    delta: float = 1.0,
) -> FourierField:
    """F(u, v) of the coupled coefficient system, truncated to the box."""
    tail = tail or TailSpec()
    omega = np.asarray(omega, dtype=float)
    nl_u, nl_v = nonlinear_terms(field, p, tail)
    res_u: dict[MultiIndex, complex] = {}
    res_v: dict[MultiIndex, complex] = {}
    for s in set(field.u) | set(nl_u):
        if not field.box.contains(s):
            continue
        diag = float(np.dot(s.n, omega)) + s.j_sq()
        val = diag * field.u.get(s, 0.0) + delta * nl_u.get(s, 0.0)
        if val != 0.0:
            res_u[s] = val
    for s in set(field.v) | set(nl_v):
        if not field.box.contains(s):
            continue
        diag = -float(np.dot(s.n, omega)) + s.j_sq()
        val = diag * field.v.get(s, 0.0) + delta * nl_v.get(s, 0.0)
        if val != 0.0:
            res_v[s] = val
    return FourierField(res_u, res_v, field.box, field.b, field.d)


def f0_support(seed, p: int) -> set[MultiIndex]:
    """Exact combinatorial support of (u0*v0)^{*p} * u0 (no cancellation)."""
    supp_u = list(seed.support())
    supp_v = [-s for s in supp_u]
    sums = {s for s in supp_u}
    for _ in range(p):
        sums = {a + bq for a in sums for bq in supp_u}
        sums = {a + bq for a in sums for bq in supp_v}
    return sums
