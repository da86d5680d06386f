"""Multi-index arithmetic on the space-time frequency lattice Z^(b+d).

Every other module works with sites (n, j) where n is a time-frequency
index of length b and j a space-frequency index of length d.  This module
fixes the global conventions: lexicographic site order, truncation boxes,
and the exponentially weighted l1 norm used for all smallness estimates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple


class MultiIndex(NamedTuple):
    """A lattice site (n, j) with n in Z^b and j in Z^d."""

    n: tuple[int, ...]
    j: tuple[int, ...]

    def __add__(self, other: "MultiIndex") -> "MultiIndex":  # type: ignore[override]
        return MultiIndex(
            tuple(a + b for a, b in zip(self.n, other.n)),
            tuple(a + b for a, b in zip(self.j, other.j)),
        )

    def __sub__(self, other: "MultiIndex") -> "MultiIndex":
        return MultiIndex(
            tuple(a - b for a, b in zip(self.n, other.n)),
            tuple(a - b for a, b in zip(self.j, other.j)),
        )

    def __neg__(self) -> "MultiIndex":
        return MultiIndex(tuple(-a for a in self.n), tuple(-a for a in self.j))

    def l1(self) -> int:
        return sum(abs(a) for a in self.n) + sum(abs(a) for a in self.j)

    def j_sq(self) -> int:
        """|j|^2, exact integer arithmetic."""
        return sum(a * a for a in self.j)

    def flat(self) -> tuple[int, ...]:
        return self.n + self.j


def site(n: Iterable[int], j: Iterable[int]) -> MultiIndex:
    return MultiIndex(tuple(int(a) for a in n), tuple(int(a) for a in j))


def origin(b: int, d: int) -> MultiIndex:
    return MultiIndex((0,) * b, (0,) * d)


class BoxSizeError(Exception):
    """Raised when a truncation box exceeds the configured site cap."""


@dataclass(frozen=True)
class TruncationBox:
    """Box |n|_inf <= n_time, |j|_inf <= n_space."""

    n_time: int
    n_space: int

    def __post_init__(self) -> None:
        if self.n_time < 0 or self.n_space < 0:
            raise ValueError("box half-widths must be nonnegative")

    def site_count(self, b: int, d: int) -> int:
        return (2 * self.n_time + 1) ** b * (2 * self.n_space + 1) ** d

    def contains(self, s: MultiIndex) -> bool:
        return all(abs(a) <= self.n_time for a in s.n) and all(
            abs(a) <= self.n_space for a in s.j
        )

    def shape(self, b: int, d: int) -> tuple[int, ...]:
        return (2 * self.n_time + 1,) * b + (2 * self.n_space + 1,) * d

    def doubled(self) -> "TruncationBox":
        return TruncationBox(2 * self.n_time, 2 * self.n_space)


# Enumerating much beyond this is a sign the box is misconfigured.
DEFAULT_SITE_CAP = 20_000_000


def enumerate_box(
    box: TruncationBox, b: int, d: int, cap: int = DEFAULT_SITE_CAP
) -> list[MultiIndex]:
    """All sites in the box, lexicographic in (n, j), no duplicates."""
    if b < 1 or d < 1:
        raise ValueError("b and d must be positive")
    count = box.site_count(b, d)
    if count > cap:
        raise BoxSizeError(
            f"box holds {count} sites, over the cap {cap}; shrink n_time/n_space"
        )
    t_range = range(-box.n_time, box.n_time + 1)
    s_range = range(-box.n_space, box.n_space + 1)
    return [
        MultiIndex(n, j)
        for n in itertools.product(t_range, repeat=b)
        for j in itertools.product(s_range, repeat=d)
    ]


@dataclass(frozen=True)
class AnalyticWeight:
    """Exponential weight exp(rho_time*|n|_1 + rho_space*|j|_1)."""

    rho_time: float = 0.1
    rho_space: float = 0.1

    def __post_init__(self) -> None:
        if self.rho_time <= 0 or self.rho_space <= 0:
            raise ValueError("strip widths must be positive")

    def weight(self, s: MultiIndex) -> float:
        return math.exp(
            self.rho_time * sum(abs(a) for a in s.n)
            + self.rho_space * sum(abs(a) for a in s.j)
        )


def weighted_l1(coeffs: Mapping[MultiIndex, complex], w: AnalyticWeight) -> float:
    """Sum of |coefficient| * weight over the support; 0 for an empty map."""
    return sum(abs(c) * w.weight(s) for s, c in coeffs.items())
