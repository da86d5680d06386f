"""Linearized operator F' = D + A: assembly, Schur reduction, diagnostics.

D is the diagonal (+-n.omega + |j|^2) pair; A is a 2x2 block of lattice
convolution kernels obtained by differentiating the nonlinearity at the
current (u, v).  The operator acts on dense arrays shaped like the
truncation box; kernel convolutions are applied by zero-padded FFT.

The diagonal is integer-valued up to an O(|a|^{2p}) shift, so away from
the resonant set it is bounded below by ~1.  That makes the complement
block solvable by diagonally preconditioned fixed-point iteration, which
is how the Schur complement onto the resonant sites is formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .lattice import MultiIndex, TruncationBox, enumerate_box
from .nonlinearity import FourierField, TailSpec, sparse_convolve
from .resonance import ResonantSet


class GapViolationError(Exception):
    """A complement diagonal entry sits too close to the spectral window."""


class ComplementSolveError(Exception):
    """The complement iteration failed to converge; enlarge the box."""


class _ConvKernel:
    """Sparse offset kernel with a cached padded FFT for fast application."""

    def __init__(self, offsets: dict[MultiIndex, complex], box_shape: tuple[int, ...]):
        from scipy.fft import fftn, next_fast_len

        self.offsets = dict(offsets)
        self.box_shape = box_shape
        if not offsets:
            self.empty = True
            return
        self.empty = False
        pts = np.array([s.flat() for s in offsets], dtype=np.int64)
        kmin = pts.min(axis=0)
        kmax = pts.max(axis=0)
        # Circular grid just large enough that no alias of the linear
        # convolution lands inside the cropped box region [0, s): shifted
        # copies y[c +- N] vanish there once N >= s + max(kmax, -kmin).
        self.grid = tuple(
            next_fast_len(int(s + max(hi, -lo, 0)))
            for s, lo, hi in zip(box_shape, kmin, kmax)
        )
        karr = np.zeros(self.grid, dtype=np.complex128)
        for s, c in offsets.items():
            idx = tuple(int(a % g) for a, g in zip(s.flat(), self.grid))
            karr[idx] += c
        self.khat = fftn(karr)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """(K * x) cropped back to the box; x is box-shaped, with optional
        leading batch axes."""
        from scipy.fft import fftn, ifftn

        if self.empty:
            return np.zeros_like(x)
        ndim = len(self.box_shape)
        batch = x.shape[:-ndim] if x.ndim > ndim else ()
        axes = tuple(range(-ndim, 0))
        xpad = np.zeros(batch + self.grid, dtype=np.complex128)
        box_slices = tuple(slice(0, s) for s in self.box_shape)
        xpad[(...,) + box_slices] = x
        conv = ifftn(fftn(xpad, axes=axes) * self.khat, axes=axes)
        return conv[(...,) + box_slices]


@dataclass
class LinearizedOp:
    b: int
    d: int
    box: TruncationBox
    omega: np.ndarray
    kernels: dict[str, dict[MultiIndex, complex]]  # 'uu', 'uv', 'vu', 'vv'
    _conv: dict[str, _ConvKernel] = dc_field(default_factory=dict, repr=False)
    _diag: tuple[np.ndarray, np.ndarray] | None = dc_field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.box.shape(self.b, self.d)

    def site_index(self, s: MultiIndex) -> tuple[int, ...]:
        return tuple(a + self.box.n_time for a in s.n) + tuple(
            a + self.box.n_space for a in s.j
        )

    def diag_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(n.omega + |j|^2, -n.omega + |j|^2) over the box grid."""
        if self._diag is None:
            grids = np.indices(self.shape)
            dot = np.zeros(self.shape)
            jsq = np.zeros(self.shape)
            for i in range(self.b):
                dot += (grids[i] - self.box.n_time) * self.omega[i]
            for i in range(self.d):
                coord = grids[self.b + i] - self.box.n_space
                jsq += coord * coord
            self._diag = (dot + jsq, -dot + jsq)
        return self._diag

    def _kernel(self, name: str) -> _ConvKernel:
        if name not in self._conv:
            self._conv[name] = _ConvKernel(self.kernels[name], self.shape)
        return self._conv[name]

    def apply(self, xu: np.ndarray, xv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d_plus, d_minus = self.diag_arrays()
        yu = d_plus * xu + self._kernel("uu").apply(xu) + self._kernel("uv").apply(xv)
        yv = d_minus * xv + self._kernel("vu").apply(xu) + self._kernel("vv").apply(xv)
        return yu, yv

    def kernel_diag(self) -> tuple[complex, complex]:
        """Zero-offset kernel entries on the two diagonal blocks."""
        zero = MultiIndex((0,) * self.b, (0,) * self.d)
        return self.kernels["uu"].get(zero, 0.0), self.kernels["vv"].get(zero, 0.0)

    def to_dense(self, sites: list[MultiIndex] | None = None) -> np.ndarray:
        """Full 2M x 2M matrix in (u-block, v-block) ordering."""
        sites = sites if sites is not None else enumerate_box(self.box, self.b, self.d)
        index = {s: i for i, s in enumerate(sites)}
        m = len(sites)
        mat = np.zeros((2 * m, 2 * m), dtype=np.complex128)
        omega = self.omega
        for i, s in enumerate(sites):
            dot = float(np.dot(s.n, omega))
            mat[i, i] = dot + s.j_sq()
            mat[m + i, m + i] = -dot + s.j_sq()
        blocks = {
            "uu": (0, 0),
            "uv": (0, m),
            "vu": (m, 0),
            "vv": (m, m),
        }
        for name, (ro, co) in blocks.items():
            for off, c in self.kernels[name].items():
                for s, col in index.items():
                    row = index.get(s + off)
                    if row is not None:
                        mat[ro + row, co + col] += c
        return mat


def assemble(
    field: FourierField,
    omega: np.ndarray,
    p: int,
    tail: TailSpec | None = None,
    delta: float = 1.0,
) -> LinearizedOp:
    """Differentiate the residual map at (u, v).

    Kernels (all scaled by delta):
      uu = vv = (p+1) (u*v)^{*p}            [+ tail corrections]
      uv = p (u*v)^{*(p-1)} * u * u
      vu = p (u*v)^{*(p-1)} * v * v
    """
    tail = tail or TailSpec()
    omega = np.asarray(omega, dtype=float)

    def scaled(kern: dict[MultiIndex, complex], c: float) -> dict[MultiIndex, complex]:
        return {s: c * v for s, v in kern.items()}

    def accumulate(dst: dict, src: dict, c: float) -> None:
        for s, v in src.items():
            dst[s] = dst.get(s, 0.0) + c * v

    uu = scaled(sparse_convolve([(field.u, p), (field.v, p)]), delta * (p + 1))
    uv = scaled(
        sparse_convolve([(field.u, p + 1), (field.v, p - 1)]), delta * p
    )
    vu = scaled(
        sparse_convolve([(field.u, p - 1), (field.v, p + 1)]), delta * p
    )
    for m, _ in tail.terms:
        lift = tail.lifted(m, field.b)
        q = p + m
        accumulate(
            uu,
            sparse_convolve([(lift, 1), (field.u, q), (field.v, q)]),
            delta * (q + 1),
        )
        accumulate(
            uv,
            sparse_convolve([(lift, 1), (field.u, q + 1), (field.v, q - 1)]),
            delta * q,
        )
        accumulate(
            vu,
            sparse_convolve([(lift, 1), (field.u, q - 1), (field.v, q + 1)]),
            delta * q,
        )
    return LinearizedOp(
        b=field.b,
        d=field.d,
        box=field.box,
        omega=omega,
        kernels={"uu": uu, "uv": uv, "vu": vu, "vv": dict(uu)},
    )


RowSite = tuple[str, MultiIndex]  # ("u" | "v", site)


def _masked_apply(
    op: LinearizedOp,
    xu: np.ndarray,
    xv: np.ndarray,
    mask_u: np.ndarray,
    mask_v: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    yu, yv = op.apply(xu * mask_u, xv * mask_v)
    return yu * mask_u, yv * mask_v


def jacobi_solve(
    op: LinearizedOp,
    rhs_u: np.ndarray,
    rhs_v: np.ndarray,
    mask_u: np.ndarray,
    mask_v: np.ndarray,
    z: complex = 0.0,
    tol: float = 1e-12,
    max_iter: int = 400,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve (F' - z) x = rhs on the masked (well-gapped) sites.

    Diagonally preconditioned fixed-point iteration; converges because the
    masked diagonal is O(1) while the kernels are O(|a|^{2p}).
    """
    d_plus, d_minus = op.diag_arrays()
    kd_u, kd_v = op.kernel_diag()
    prec_u = np.where(mask_u, d_plus + kd_u - z, 1.0)
    prec_v = np.where(mask_v, d_minus + kd_v - z, 1.0)
    ru = rhs_u * mask_u
    rv = rhs_v * mask_v
    scale = max(np.abs(ru).max(initial=0.0), np.abs(rv).max(initial=0.0))
    if scale == 0.0:
        return np.zeros_like(rhs_u), np.zeros_like(rhs_v)
    # Warm start with the preconditioned right-hand side; starting from
    # zero would spend the first operator application on nothing.
    xu = ru / prec_u * mask_u
    xv = rv / prec_v * mask_v
    for _ in range(max_iter):
        au, av = _masked_apply(op, xu, xv, mask_u, mask_v)
        res_u = ru - (au - z * xu * mask_u)
        res_v = rv - (av - z * xv * mask_v)
        err = max(np.abs(res_u).max(), np.abs(res_v).max())
        xu = xu + res_u / prec_u * mask_u
        xv = xv + res_v / prec_v * mask_v
        if err <= tol * scale:
            return xu, xv
    raise ComplementSolveError(
        f"complement iteration stalled at residual {err:.3e}; enlarge the box"
    )


@dataclass
class SchurReduction:
    resonant_rows: list[RowSite]
    reduced_matrix: np.ndarray
    complement_condition: float
    toeplitz_blocks: list[np.ndarray]
    block_rows: list[list[RowSite]]

    def report_dict(self) -> dict:
        return {
            "complement_condition": self.complement_condition,
            "block_sizes": [b.shape[0] for b in self.toeplitz_blocks],
            "n_resonant": len(self.resonant_rows),
        }


def resonant_rows_of(
    rset: ResonantSet, box: TruncationBox, exclude: set[MultiIndex] | None = None
) -> list[RowSite]:
    """Rows whose unperturbed diagonal vanishes.

    These are the u-rows on C+ and the v-rows on C-, plus the partner row
    at every j = 0 site of C (there n.omega = 0, so both diagonals vanish
    even though the sign convention files the site under one class only).
    """
    exclude = exclude or set()

    def zero_j(s: MultiIndex) -> bool:
        return all(a == 0 for a in s.j)

    u_sites = rset.plus | {s for s in rset.minus if zero_j(s)}
    v_sites = rset.minus | {s for s in rset.plus if zero_j(s)}
    rows: list[RowSite] = [
        ("u", s) for s in sorted(u_sites) if box.contains(s) and s not in exclude
    ]
    rows += [
        ("v", s) for s in sorted(v_sites) if box.contains(s) and s not in exclude
    ]
    return rows


def _complement_masks(
    op: LinearizedOp, rows: list[RowSite], anchored: set[MultiIndex] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Masks of complement sites: everything active that is not resonant."""
    anchored = anchored or set()
    mask_u = np.ones(op.shape, dtype=bool)
    mask_v = np.ones(op.shape, dtype=bool)
    for s in anchored:
        if op.box.contains(s):
            mask_u[op.site_index(s)] = False
            mask_v[op.site_index(s)] = False
    for row, s in rows:
        (mask_u if row == "u" else mask_v)[op.site_index(s)] = False
    return mask_u, mask_v


def _mirror_row(rs: RowSite) -> RowSite:
    """The row paired with rs under (x_u, x_v) -> (conj x_v(-.), conj x_u(-.))."""
    kind, s = rs
    return ("v" if kind == "u" else "u", -s)


def _kernels_mirror_conjugate(
    kernels: dict[str, dict[MultiIndex, complex]], rtol: float = 1e-13
) -> bool:
    """True when A commutes with the mirror-conjugation involution.

    That holds exactly when the field obeys v(s) = conj(u(-s)), and then
    every Schur entry satisfies S[pi(r), pi(c)] = conj(S[r, c]).
    """
    scale = max(
        (abs(c) for kern in kernels.values() for c in kern.values()), default=0.0
    )
    if scale == 0.0:
        return True
    for a, b in (("uu", "vv"), ("uv", "vu")):
        ka, kb = kernels[a], kernels[b]
        for off in set(ka) | {-o for o in kb}:
            if abs(ka.get(off, 0.0) - np.conj(kb.get(-off, 0.0))) > rtol * scale:
                return False
    return True


def schur_reduce(
    op: LinearizedOp,
    rset: ResonantSet,
    z: complex = 0.0,
    exclude: set[MultiIndex] | None = None,
    anchored: set[MultiIndex] | None = None,
    margin: float = 0.5,
    tol: float = 1e-12,
    components: list[list[tuple[MultiIndex, str]]] | None = None,
) -> SchurReduction:
    """Schur complement of F' - z onto the resonant rows.

    reduced = (F'-z)_RR - (F'-z)_RB (F'-z)_BB^{-1} (F'-z)_BR with the
    complement solve done iteratively.  Raises GapViolationError when a
    complement diagonal entry is within `margin` of z.
    """
    rows = resonant_rows_of(rset, op.box, exclude)
    mask_u, mask_v = _complement_masks(op, rows, anchored)
    d_plus, d_minus = op.diag_arrays()
    comp_diag = np.concatenate(
        [np.abs(d_plus[mask_u] - z).ravel(), np.abs(d_minus[mask_v] - z).ravel()]
    )
    complement_condition = float(comp_diag.min()) if comp_diag.size else np.inf
    if complement_condition < margin:
        raise GapViolationError(
            f"complement diagonal within {complement_condition:.3g} of z; "
            "the reduction window is invalid"
        )
    m = len(rows)
    reduced = np.zeros((m, m), dtype=np.complex128)
    row_pos = {rs: i for i, rs in enumerate(rows)}
    row_idx = [(rk, op.site_index(s)) for rk, s in rows]
    # When the operator commutes with mirror conjugation, every v-column
    # is the conjugate image of a u-column, so only half need solving.
    rev = (slice(None, None, -1),) * len(op.shape)
    symmetric = (
        abs(complex(z).imag) == 0.0
        and all(_mirror_row(rs) in row_pos for rs in rows)
        and np.array_equal(mask_u, mask_v[rev])
        and _kernels_mirror_conjugate(op.kernels)
    )
    col_list = [rs for rs in rows if rs[0] == "u"] if symmetric else rows
    # Columns are batched along a leading axis so each FFT pass covers
    # many unit vectors at once; the chunk keeps padded buffers modest.
    chunk = max(1, 500_000 // max(1, int(np.prod(op.shape))))
    for start in range(0, len(col_list), chunk):
        cols = col_list[start : start + chunk]
        k = len(cols)
        eu = np.zeros((k,) + op.shape, dtype=np.complex128)
        ev = np.zeros_like(eu)
        for c, (row_kind, s) in enumerate(cols):
            (eu if row_kind == "u" else ev)[(c,) + op.site_index(s)] = 1.0
        au, av = op.apply(eu, ev)
        au = au - z * eu
        av = av - z * ev
        # complement part of the columns, solved back through the bulk
        yu, yv = jacobi_solve(op, au, av, mask_u, mask_v, z=z, tol=tol)
        bu, bv = op.apply(yu, yv)
        col_pos = [row_pos[c] for c in cols]
        for i, (rk, idx) in enumerate(row_idx):
            direct = (au if rk == "u" else av)[(slice(None),) + idx]
            back = (bu if rk == "u" else bv)[(slice(None),) + idx]
            reduced[i, col_pos] = direct - back
    if symmetric:
        perm = np.array([row_pos[_mirror_row(rs)] for rs in rows])
        for c in col_list:
            reduced[perm, row_pos[_mirror_row(c)]] = np.conj(reduced[:, row_pos[c]])
    blocks: list[np.ndarray] = []
    block_rows: list[list[RowSite]] = []
    if components is not None:
        for comp in components:
            idxs = []
            comp_rows = []
            for s, sign in comp:
                candidates: list[RowSite] = [("u" if sign == "+" else "v", s)]
                if all(a == 0 for a in s.j):
                    candidates.append(("v" if sign == "+" else "u", s))
                for rs in candidates:
                    if rs in row_pos:
                        idxs.append(row_pos[rs])
                        comp_rows.append(rs)
            if idxs:
                sel = np.ix_(idxs, idxs)
                blocks.append(reduced[sel])
                block_rows.append(comp_rows)
    else:
        blocks = [reduced]
        block_rows = [rows]
    return SchurReduction(rows, reduced, complement_condition, blocks, block_rows)


def invertibility_report(
    red: SchurReduction, delta: float, p: int, excision_c: float = 0.1
) -> tuple[float, bool]:
    """Smallest singular value over the reduced blocks vs the excision bar."""
    if not red.toeplitz_blocks:
        return np.inf, True
    min_sv = min(
        float(np.linalg.svd(b, compute_uv=False)[-1]) for b in red.toeplitz_blocks
    )
    return min_sv, min_sv >= excision_c * delta ** (2 * p)


def solve_p_equations(
    op: LinearizedOp,
    rhs_u: np.ndarray,
    rhs_v: np.ndarray,
    anchored: set[MultiIndex],
    rset: ResonantSet,
    z: complex = 0.0,
    tol: float = 1e-12,
    red: "SchurReduction | None" = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve F' x = rhs with unknowns and equations off the anchor set S.

    Resonant rows are handled by a dense solve of the Schur complement
    (recomputed unless `red` is supplied); the bulk is handled by the
    preconditioned iteration.
    """
    rows = (
        red.resonant_rows
        if red is not None
        else resonant_rows_of(rset, op.box, exclude=anchored)
    )
    mask_u, mask_v = _complement_masks(op, rows, anchored)
    active_u = mask_u.copy()
    active_v = mask_v.copy()
    for row, s in rows:
        (active_u if row == "u" else active_v)[op.site_index(s)] = True

    rhs_u = rhs_u * active_u
    rhs_v = rhs_v * active_v
    # Bulk part of the right-hand side.
    yu, yv = jacobi_solve(op, rhs_u, rhs_v, mask_u, mask_v, z=z, tol=tol)
    if red is None:
        red = schur_reduce(op, rset, z=z, exclude=anchored, anchored=anchored, tol=tol)
    ayu, ayv = op.apply(yu, yv)
    rhs_red = np.zeros(len(rows), dtype=np.complex128)
    for i, (rk, s) in enumerate(rows):
        idx = op.site_index(s)
        rhs_red[i] = (rhs_u if rk == "u" else rhs_v)[idx] - (
            (ayu if rk == "u" else ayv)[idx]
        )
    x_res = np.linalg.solve(red.reduced_matrix, rhs_red) if rows else rhs_red
    # Back-substitute the resonant part through the bulk.
    eu = np.zeros(op.shape, dtype=np.complex128)
    ev = np.zeros(op.shape, dtype=np.complex128)
    for (rk, s), val in zip(rows, x_res):
        (eu if rk == "u" else ev)[op.site_index(s)] = val
    au, av = op.apply(eu, ev)
    cu, cv = jacobi_solve(op, au, av, mask_u, mask_v, z=z, tol=tol)
    xu = yu - cu + eu
    xv = yv - cv + ev
    return xu * active_u, xv * active_v
