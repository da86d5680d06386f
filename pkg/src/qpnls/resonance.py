"""Resonant-set geometry: bi-characteristics, coupling graph, genericity.

The linearization at a b-frequency seed is singular exactly on the set
C = {(n,j) : +-n.omega0 + |j|^2 = 0}.  The convolution kernels of the
nonlinearity couple sites of C; the seed is usable by the Newton scheme
only when the connected components of that coupling graph stay bounded
(size <= max(2b, d+2)) and the leading nonlinearity applied to the seed
does not land on C outside the seed support.  Both conditions are checked
here by exact integer arithmetic and reported as a certificate.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field as dc_field
from typing import Iterable, Literal, Sequence

import numpy as np

from .lattice import MultiIndex, TruncationBox
from .nonlinearity import FourierField, f0_support


class BoxTooSmallError(Exception):
    """The truncation box cannot support the requested certificate."""


@dataclass(frozen=True)
class SeedSolution:
    """A b-frequency solution of the free flow: amplitudes a_k on modes j_k."""

    frequencies: tuple[tuple[int, ...], ...]
    amplitudes: tuple[complex, ...]

    def __post_init__(self) -> None:
        if not self.frequencies:
            raise ValueError("seed needs at least one frequency")
        if len(self.frequencies) != len(self.amplitudes):
            raise ValueError("one amplitude per frequency required")
        d = len(self.frequencies[0])
        for jk in self.frequencies:
            if len(jk) != d:
                raise ValueError("all j_k must share the dimension d")
            if all(a == 0 for a in jk):
                raise ValueError("seed frequencies must be nonzero")
        if len(set(self.frequencies)) != len(self.frequencies):
            raise ValueError("seed frequencies must be distinct")

    @property
    def b(self) -> int:
        return len(self.frequencies)

    @property
    def d(self) -> int:
        return len(self.frequencies[0])

    @property
    def omega0(self) -> tuple[int, ...]:
        return tuple(sum(a * a for a in jk) for jk in self.frequencies)

    def support(self) -> list[MultiIndex]:
        """{(-e_k, j_k)}, the Fourier support of the seed."""
        b = self.b
        out = []
        for k, jk in enumerate(self.frequencies):
            n = tuple(-1 if i == k else 0 for i in range(b))
            out.append(MultiIndex(n, jk))
        return out

    def anchor_sites(self) -> list[MultiIndex]:
        """supp u0 together with its conjugate mirror (the set S, 2b sites)."""
        supp = self.support()
        return supp + [-s for s in supp]

    def field(self, box: TruncationBox) -> FourierField:
        """Seed as a coefficient pair with v the conjugate mirror of u."""
        u = {s: complex(a) for s, a in zip(self.support(), self.amplitudes)}
        v = {-s: np.conj(c) for s, c in u.items()}
        return FourierField(u, v, box, self.b, self.d)

    def scaled(self, kappa: int) -> "SeedSolution":
        """Seed with every spatial frequency multiplied by kappa."""
        return SeedSolution(
            tuple(tuple(kappa * a for a in jk) for jk in self.frequencies),
            self.amplitudes,
        )


@dataclass
class ResonantSet:
    plus: set[MultiIndex]
    minus: set[MultiIndex]
    box: TruncationBox

    @property
    def all_sites(self) -> set[MultiIndex]:
        return self.plus | self.minus


def bicharacteristics(seed: SeedSolution, box: TruncationBox) -> ResonantSet:
    """All box sites with +-n.omega0 + |j|^2 = 0, split per the sign rule.

    j = 0 sites (n.omega0 = 0) go to the plus part when n_1 <= 0 and to
    the minus part when n_1 > 0.
    """
    b, d = seed.b, seed.d
    omega0 = np.array(seed.omega0, dtype=np.int64)
    # Spatial sites grouped by |j|^2 for O(1) lookup per time index.
    by_jsq: dict[int, list[tuple[int, ...]]] = {}
    for j in itertools.product(range(-box.n_space, box.n_space + 1), repeat=d):
        by_jsq.setdefault(sum(a * a for a in j), []).append(j)
    plus: set[MultiIndex] = set()
    minus: set[MultiIndex] = set()
    for n in itertools.product(range(-box.n_time, box.n_time + 1), repeat=b):
        dot = int(np.dot(n, omega0))
        if dot == 0:
            target = plus if n[0] <= 0 else minus
            target.add(MultiIndex(n, (0,) * d))
        if -dot > 0:
            for j in by_jsq.get(-dot, []):
                plus.add(MultiIndex(n, j))
        if dot > 0:
            for j in by_jsq.get(dot, []):
                minus.add(MultiIndex(n, j))
    return ResonantSet(plus, minus, box)


class _UnionFind:
    def __init__(self, size: int) -> None:
        self.parent = list(range(size))

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


Sign = Literal["+", "-"]


@dataclass
class ResonanceGraph:
    vertices: list[tuple[MultiIndex, Sign]]
    edges: list[tuple[int, int, MultiIndex]]  # (index, index, coupling offset)
    components: list[list[int]]
    box: TruncationBox

    def component_sites(self) -> list[list[tuple[MultiIndex, Sign]]]:
        return [[self.vertices[i] for i in comp] for comp in self.components]

    def max_component_size(self) -> int:
        return max((len(c) for c in self.components), default=0)


def _sumset(parts: Sequence[Iterable[MultiIndex]]) -> set[MultiIndex]:
    """Combinatorial sumset of the given support sets (no cancellation)."""
    acc: set[MultiIndex] | None = None
    for part in parts:
        part = set(part)
        acc = part if acc is None else {a + p for a in acc for p in part}
    return acc or set()


def coupling_offsets(
    seed: SeedSolution, p: int
) -> tuple[set[MultiIndex], set[MultiIndex]]:
    """Monomial supports carrying the couplings.

    Returns (same_sign, plus_to_minus): offsets x' - x for edges within one
    sign class (support of (u0*v0)^{*p}) and from the u-row on C+ to the
    v-row on C- (support of (u0*v0)^{*(p-1)} * v0 * v0; the reverse
    orientation is its mirror).
    """
    supp_u = seed.support()
    supp_v = [-s for s in supp_u]
    uv = _sumset([supp_u, supp_v])
    same = _sumset([uv] * p)
    opp = _sumset([uv] * (p - 1) + [supp_v, supp_v])
    return same, opp


def _edges_by_lookup(
    vertices: list[tuple[MultiIndex, Sign]],
    same: set[MultiIndex],
    opp: set[MultiIndex],
    uf: "_UnionFind",
) -> list[tuple[int, int, MultiIndex]]:
    """Reference edge scan: per-vertex dictionary lookups."""
    index = {v: i for i, v in enumerate(vertices)}
    edges: list[tuple[int, int, MultiIndex]] = []
    zero = None
    for i, (x, sign) in enumerate(vertices):
        if zero is None:
            zero = MultiIndex((0,) * len(x.n), (0,) * len(x.j))
        for off in same:
            if off == zero:
                continue
            k = index.get((x + off, sign))
            if k is not None and k > i:
                edges.append((i, k, off))
                uf.union(i, k)
        for off in opp if sign == "+" else {-o for o in opp}:
            other: Sign = "-" if sign == "+" else "+"
            k = index.get((x + off, other))
            if k is not None and k > i:
                edges.append((i, k, off))
                uf.union(i, k)
    return edges


def _edges_vectorized(
    vertices: list[tuple[MultiIndex, Sign]],
    same: set[MultiIndex],
    opp: set[MultiIndex],
    uf: "_UnionFind",
    coords: np.ndarray,
    weights: np.ndarray,
    base: int,
) -> list[tuple[int, int, MultiIndex]]:
    """Edge scan on integer-encoded sites via sorted-array lookup.

    Sites are encoded digit-wise with a radix large enough that adding any
    coupling offset never carries between digits, so key(x + off) =
    key(x) + key(off) exactly and misses cannot alias other sites.
    """
    enc = (coords + base) @ weights
    signs = np.array([sign == "+" for _, sign in vertices])

    def sign_class(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        keys = enc[mask]
        idxs = np.nonzero(mask)[0]
        order = np.argsort(keys)
        return keys[order], idxs[order]

    kp, ip = sign_class(signs)
    km, im = sign_class(~signs)
    edges: list[tuple[int, int, MultiIndex]] = []

    def link(src, dst, off: MultiIndex) -> None:
        src_keys, src_idx = src
        dst_keys, dst_idx = dst
        if not len(src_keys) or not len(dst_keys):
            return
        off_key = int(np.dot(np.array(off.flat(), dtype=np.int64), weights))
        targets = src_keys + off_key
        pos = np.searchsorted(dst_keys, targets)
        pos = np.minimum(pos, len(dst_keys) - 1)
        hit = dst_keys[pos] == targets
        for a, b in zip(src_idx[hit], dst_idx[pos[hit]]):
            if b > a:
                edges.append((int(a), int(b), off))
                uf.union(int(a), int(b))

    zero = MultiIndex((0,) * len(vertices[0][0].n), (0,) * len(vertices[0][0].j))
    for off in same:
        if off == zero:
            continue
        link((kp, ip), (kp, ip), off)
        link((km, im), (km, im), off)
    for off in opp:
        link((kp, ip), (km, im), off)
        link((km, im), (kp, ip), -off)
    return edges


def build_resonance_graph(
    seed: SeedSolution, rset: ResonantSet, p: int
) -> ResonanceGraph:
    """Edges between resonant sites whose offset lies in a coupling support.

    Self-loops (the zero offset is always in the same-sign support) are
    discarded; they never merge components.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    same, opp = coupling_offsets(seed, p)
    vertices: list[tuple[MultiIndex, Sign]] = sorted(
        [(s, "+") for s in rset.plus] + [(s, "-") for s in rset.minus]
    )
    uf = _UnionFind(len(vertices))
    edges: list[tuple[int, int, MultiIndex]] = []
    if vertices:
        dim = len(vertices[0][0].flat())
        coords = np.array([v[0].flat() for v in vertices], dtype=np.int64)
        off_max = max(
            (max(abs(a) for a in o.flat()) for o in same | opp), default=0
        )
        base = int(np.abs(coords).max(initial=0)) + off_max
        radix = 2 * base + 2
        if radix**dim < 2**62:
            weights = radix ** np.arange(dim, dtype=np.int64)
            edges = _edges_vectorized(vertices, same, opp, uf, coords, weights, base)
        else:
            edges = _edges_by_lookup(vertices, same, opp, uf)
    groups: dict[int, list[int]] = {}
    for i in range(len(vertices)):
        groups.setdefault(uf.find(i), []).append(i)
    components = sorted(groups.values(), key=lambda c: (-len(c), c))
    return ResonanceGraph(vertices, edges, components, rset.box)


@dataclass
class GenericityCertificate:
    is_generic: bool
    max_component_size: int
    bound: int
    f0_support_clean: bool
    mirror_pair_free: bool = True
    violating_component: list[MultiIndex] = dc_field(default_factory=list)
    components: list[list[tuple[MultiIndex, Sign]]] = dc_field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "is_generic": self.is_generic,
            "max_component_size": self.max_component_size,
            "bound": self.bound,
            "f0_support_clean": self.f0_support_clean,
            "mirror_pair_free": self.mirror_pair_free,
            "violating_component": [
                {"n": list(s.n), "j": list(s.j)} for s in self.violating_component
            ],
            "components": [
                {
                    "sites": [{"n": list(s.n), "j": list(s.j)} for s, _ in comp],
                    "sign_pattern": "".join(sign for _, sign in comp),
                }
                for comp in self.components
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def certify_genericity(
    graph: ResonanceGraph, seed: SeedSolution, p: int
) -> GenericityCertificate:
    """Operational genericity: bounded components and clean F0 support.

    The component bound is max(2b, d+2).  The support check forms
    supp F0(u0, v0) combinatorially and intersects it with C \\ S inside
    the box; the box must contain supp F0 for the certificate to be valid.
    """
    b, d = seed.b, seed.d
    bound = max(2 * b, d + 2)
    box = graph.box
    f0_u = f0_support(seed, p)
    if any(not box.contains(s) for s in f0_u):
        raise BoxTooSmallError(
            "supp F0 exceeds the truncation box; enlarge it before certifying"
        )
    anchors = set(seed.anchor_sites())
    omega0 = np.array(seed.omega0, dtype=np.int64)

    def plus_resonant(s: MultiIndex) -> bool:
        return int(np.dot(s.n, omega0)) + s.j_sq() == 0

    clean = all(
        not plus_resonant(s) for s in f0_u - anchors
    ) and all(  # v-row of F0 is the mirror of the u-row
        not plus_resonant(-s) for s in {-t for t in f0_u} - anchors
    )
    # Distinctness screen: a mirror pair j_k = -j_k' makes the spatial
    # supports of the seed and its conjugate coincide, the translation-
    # invariant degeneracy the bounded-component count cannot see.
    freq = set(seed.frequencies)
    mirror_free = not any(tuple(-a for a in jk) in freq for jk in freq)
    max_size = graph.max_component_size()
    violating: list[MultiIndex] = []
    if max_size > bound:
        worst = graph.components[0]
        violating = [graph.vertices[i][0] for i in worst]
    elif not mirror_free:
        anchor = set(seed.anchor_sites())
        for comp in graph.components:
            if any(graph.vertices[i][0] in anchor for i in comp):
                violating = [graph.vertices[i][0] for i in comp]
                break
    return GenericityCertificate(
        is_generic=(max_size <= bound) and clean and mirror_free,
        max_component_size=max_size,
        bound=bound,
        f0_support_clean=clean,
        mirror_pair_free=mirror_free,
        violating_component=violating,
        components=graph.component_sites(),
    )


def component_saturation(
    seed: SeedSolution, box: TruncationBox, p: int
) -> tuple[int, int]:
    """Max component size on the box and on its doubling.

    Generic seeds saturate (the two agree); unbounded growth under box
    doubling is the empirical marker of a degenerate seed.
    """
    sizes = []
    for bx in (box, box.doubled()):
        graph = build_resonance_graph(seed, bicharacteristics(seed, bx), p)
        sizes.append(graph.max_component_size())
    return sizes[0], sizes[1]


def cubic_resonance_test(
    j_k: Sequence[int],
    j_k2: Sequence[int],
    j: Sequence[int],
    case: Literal["same_sign", "opposite_sign"],
) -> bool:
    """Closed-form coupling condition for the cubic nonlinearity (p = 1).

    same_sign:      (j_k - j_k2) . (j + j_k)  == 0
    opposite_sign:  (j + j_k)    . (j + j_k2) == 0
    Exact integer arithmetic.
    """
    if tuple(j_k) == tuple(j_k2):
        raise ValueError("j_k and j_k2 must be distinct seed frequencies")
    if case == "same_sign":
        return sum((a - b) * (c + a) for a, b, c in zip(j_k, j_k2, j)) == 0
    if case == "opposite_sign":
        return sum((c + a) * (c + b) for a, b, c in zip(j_k, j_k2, j)) == 0
    raise ValueError(f"unknown case {case!r}")


def cubic_resonant_j_set(seed: SeedSolution) -> set[int]:
    """For d = 1, p = 1: the spatial sites reachable by couplings, {+-j_k}."""
    if seed.d != 1:
        raise ValueError("closed-form j-set is d = 1 only")
    return {jk[0] for jk in seed.frequencies} | {-jk[0] for jk in seed.frequencies}
