"""Newton construction of quasi-periodic solutions.

The seed (a b-frequency solution of the free flow) anchors the iteration:
coefficients on its support S stay fixed, the P-equations (all sites off
S) are solved by Newton steps through the Schur machinery, and the 2b
Q-equations (the rows on S) are solved for the frequency vector omega
after every correction.  Branches are rejected when the reduced blocks
fail the amplitude-excision bar; accepted branches carry a Diophantine
certificate for the modulated frequencies.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .lattice import (
    DEFAULT_SITE_CAP,
    AnalyticWeight,
    BoxSizeError,
    MultiIndex,
    TruncationBox,
)
from .linop import (
    LinearizedOp,
    SchurReduction,
    assemble,
    invertibility_report,
    schur_reduce,
    solve_p_equations,
)
from .nonlinearity import FourierField, TailSpec, nonlinear_terms, residual
from .resonance import (
    GenericityCertificate,
    ResonantSet,
    SeedSolution,
    bicharacteristics,
    build_resonance_graph,
    certify_genericity,
)


class ExcisionError(Exception):
    """Reduced block below the invertibility bar; amplitude rejected."""


@dataclass
class NewtonSettings:
    tol: float = 1e-12
    max_iter: int = 20
    excision_c: float = 0.1
    gamma: float = 0.05
    tau: float | None = None  # default b + 1
    n_max: int = 100
    m_cap: int = 0
    check_genericity: bool = True


@dataclass
class SolutionBranch:
    seed: SeedSolution
    p: int
    delta: float
    omega: np.ndarray
    field: FourierField
    residual_norm: float
    weight: AnalyticWeight
    tail: TailSpec
    iterations: list[dict] = dc_field(default_factory=list)
    residual_field: FourierField | None = None
    diophantine: dict | None = None
    excision_ok: bool = True
    accepted: bool = False
    reject_reason: str | None = None
    certificate: GenericityCertificate | None = None

    def omega_shift(self) -> np.ndarray:
        return self.omega - np.array(self.seed.omega0, dtype=float)

    def correction_field(self) -> FourierField:
        """Current field minus the seed (the accumulated Newton correction)."""
        base = self.seed.field(self.field.box)
        u = dict(self.field.u)
        v = dict(self.field.v)
        for s, c in base.u.items():
            u[s] = u.get(s, 0.0) - c
        for s, c in base.v.items():
            v[s] = v.get(s, 0.0) - c
        return FourierField(
            {s: c for s, c in u.items() if c != 0.0},
            {s: c for s, c in v.items() if c != 0.0},
            self.field.box,
            self.field.b,
            self.field.d,
        )

    def to_json_dict(self) -> dict:
        return {
            "seed": {
                "frequencies": [list(j) for j in self.seed.frequencies],
                "amplitudes": [[a.real, a.imag] for a in map(complex, self.seed.amplitudes)],
            },
            "p": self.p,
            "delta": self.delta,
            "omega": list(map(float, self.omega)),
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "excision_ok": self.excision_ok,
            "accepted": self.accepted,
            "reject_reason": self.reject_reason,
            "diophantine": self.diophantine,
            "genericity": (
                self.certificate.to_json_dict() if self.certificate else None
            ),
            "field": self.field.to_json_dict(),
        }


def default_box(seed: SeedSolution, p: int) -> TruncationBox:
    """Heuristic box: contains supp F0 and its first-generation couplings."""
    max_j = max(max(abs(a) for a in jk) for jk in seed.frequencies)
    return TruncationBox(n_time=2 * p + 3, n_space=(2 * p + 3) * max_j)


def lyapunov_schmidt_split(
    field: FourierField, seed: SeedSolution
) -> tuple[set[MultiIndex], set[MultiIndex]]:
    """(P_sites, Q_sites): Q is the 2b anchor sites, P the box remainder."""
    from .lattice import enumerate_box

    q_sites = set(seed.anchor_sites())
    all_sites = set(enumerate_box(field.box, field.b, field.d))
    if not q_sites <= all_sites:
        raise ValueError("seed support must lie inside the box")
    return all_sites - q_sites, q_sites


def _field_arrays(
    field: FourierField, op: LinearizedOp
) -> tuple[np.ndarray, np.ndarray]:
    au = np.zeros(op.shape, dtype=np.complex128)
    av = np.zeros(op.shape, dtype=np.complex128)
    for s, c in field.u.items():
        au[op.site_index(s)] += c
    for s, c in field.v.items():
        av[op.site_index(s)] += c
    return au, av


def _arrays_to_maps(
    au: np.ndarray, av: np.ndarray, op: LinearizedOp, floor: float = 1e-300
) -> tuple[dict[MultiIndex, complex], dict[MultiIndex, complex]]:
    out = []
    for arr in (au, av):
        coords = np.argwhere(np.abs(arr) > floor)
        m: dict[MultiIndex, complex] = {}
        for idx in coords:
            n = tuple(int(a) - op.box.n_time for a in idx[: op.b])
            j = tuple(int(a) - op.box.n_space for a in idx[op.b :])
            m[MultiIndex(n, j)] = complex(arr[tuple(idx)])
        out.append(m)
    return out[0], out[1]


def solve_q_equations(
    field: FourierField,
    seed: SeedSolution,
    p: int,
    tail: TailSpec,
    delta: float,
) -> np.ndarray:
    """Frequencies from the 2b anchor rows, real least squares per mode.

    The u-row at (-e_k, j_k) reads (-omega_k + j_k^2) a_k + delta NL = 0 and
    its conjugate row carries the mirrored equation; omega_k minimizes the
    joint real residual.
    """
    nl_u, nl_v = nonlinear_terms(field, p, tail)
    omega = np.zeros(seed.b)
    for k, (s, a_k) in enumerate(zip(seed.support(), seed.amplitudes)):
        jsq = s.j_sq()
        shifts = []
        u_val = field.u.get(s)
        if u_val:
            shifts.append((delta * nl_u.get(s, 0.0) / u_val).real)
        v_val = field.v.get(-s)
        if v_val:
            shifts.append((delta * nl_v.get(-s, 0.0) / v_val).real)
        omega[k] = jsq + (sum(shifts) / len(shifts) if shifts else 0.0)
    return omega


def prepare_branch(
    seed: SeedSolution,
    p: int,
    delta: float = 1.0,
    tail: TailSpec | None = None,
    box: TruncationBox | None = None,
    weight: AnalyticWeight | None = None,
    settings: NewtonSettings | None = None,
) -> tuple[SolutionBranch, ResonantSet]:
    settings = settings or NewtonSettings()
    tail = tail or TailSpec()
    box = box or default_box(seed, p)
    weight = weight or AnalyticWeight()
    count = box.site_count(seed.b, seed.d)
    if count > DEFAULT_SITE_CAP:
        raise BoxSizeError(
            f"box holds {count} sites, over the cap {DEFAULT_SITE_CAP}; "
            "shrink n_time/n_space"
        )
    field = seed.field(box)
    omega = np.array(seed.omega0, dtype=float)
    res = residual(field, omega, p, tail, delta)
    branch = SolutionBranch(
        seed=seed,
        p=p,
        delta=delta,
        omega=omega,
        field=field,
        residual_norm=res.analytic_norm(weight),
        residual_field=res,
        weight=weight,
        tail=tail,
    )
    rset = bicharacteristics(seed, box)
    if settings.check_genericity:
        graph = build_resonance_graph(seed, rset, p)
        branch.certificate = certify_genericity(graph, seed, p)
    return branch, rset


def _effective_delta(branch: SolutionBranch) -> float:
    """Amplitude scale entering the excision bar: delta * max|a|^{2p}."""
    max_amp = max(abs(a) for a in branch.seed.amplitudes)
    return (branch.delta ** (1.0 / (2 * branch.p))) * max_amp


def newton_step(
    branch: SolutionBranch,
    rset: ResonantSet,
    settings: NewtonSettings | None = None,
) -> SolutionBranch:
    """One joint correction of the P-equations and the frequency vector.

    The step is bordered: besides the plain P-solve, one P-system is solved
    per frequency direction (reusing the Schur reduction), and the omega
    increment comes from the linearized Q-equations.  Updating omega inside
    the same linearization (rather than re-solving the Q-equations after
    the field update) is what keeps the residual contraction quadratic all
    the way down to the solver tolerance.
    """
    settings = settings or NewtonSettings()
    seed, p, tail, delta = branch.seed, branch.p, branch.tail, branch.delta
    b = seed.b
    anchors = set(seed.anchor_sites())
    op = assemble(branch.field, branch.omega, p, tail, delta)
    components = None
    if branch.certificate is not None:
        components = [
            [(s, sign) for s, sign in comp] for comp in branch.certificate.components
        ]
    red = schur_reduce(
        op, rset, z=0.0, exclude=anchors, anchored=anchors, components=components
    )
    min_sv, ok = invertibility_report(
        red, _effective_delta(branch), p, settings.excision_c
    )
    branch.excision_ok = branch.excision_ok and ok
    if not ok:
        branch.accepted = False
        branch.reject_reason = (
            f"excision failure: min singular value {min_sv:.3e} below "
            f"{settings.excision_c} * delta^(2p)"
        )
        raise ExcisionError(branch.reject_reason)
    res = branch.residual_field
    if res is None:
        res = residual(branch.field, branch.omega, p, tail, delta)
    ru, rv = _field_arrays(res, op)
    du0, dv0 = solve_p_equations(op, ru, rv, anchors, rset, red=red)
    fu, fv = _field_arrays(branch.field, op)
    # Frequency-direction solves z_k = F'^{-1} (dF/domega_k) on the P-rows;
    # dF/domega_k is +-n_k times the field on the two rows.
    zs = []
    for k in range(b):
        shape = [1] * len(op.shape)
        shape[k] = op.shape[k]
        ncoord = np.arange(-op.box.n_time, op.box.n_time + 1).reshape(shape)
        wu = ncoord * fu
        wv = -ncoord * fv
        zu, zv = solve_p_equations(op, wu, wv, anchors, rset, red=red)
        zs.append((zu, zv, wu, wv))
    # Linearized Q-equations on the 2b anchor rows: with the field
    # correction x = du0 + sum_k domega_k z_k, each anchor row q demands
    # F_q - [F'x]_q + sum_k domega_k g_k(q) = 0 with g_k the omega
    # derivative of the diagonal times the (fixed) anchor coefficient.
    rows = []
    for s in seed.support():
        rows.append(("u", s))
        rows.append(("v", -s))
    a_du0_u, a_du0_v = op.apply(du0, dv0)
    mat = np.zeros((2 * len(rows), b))
    rhs = np.zeros(2 * len(rows))
    col_actions = [op.apply(zu, zv) for zu, zv, _, _ in zs]
    for i, (kind, s) in enumerate(rows):
        idx = op.site_index(s)
        f_q = (res.u if kind == "u" else res.v).get(s, 0.0)
        base = complex((a_du0_u if kind == "u" else a_du0_v)[idx]) - complex(f_q)
        rhs[2 * i] = base.real
        rhs[2 * i + 1] = base.imag
        for k in range(b):
            az_u, az_v = col_actions[k]
            sign = 1.0 if kind == "u" else -1.0
            coeff = -complex((az_u if kind == "u" else az_v)[idx])
            coeff += sign * s.n[k] * complex(
                (branch.field.u if kind == "u" else branch.field.v).get(s, 0.0)
            )
            mat[2 * i, k] = coeff.real
            mat[2 * i + 1, k] = coeff.imag
    domega, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
    du = du0 + sum(w * z[0] for w, z in zip(domega, zs))
    dv = dv0 + sum(w * z[1] for w, z in zip(domega, zs))
    new_u, new_v = _arrays_to_maps(fu - du, fv - dv, op)
    new_field = FourierField(new_u, new_v, branch.field.box, branch.field.b, branch.field.d)
    new_omega = branch.omega + domega
    new_res = residual(new_field, new_omega, p, tail, delta)
    corr_u, corr_v = _arrays_to_maps(du, dv, op)
    corr = FourierField(
        corr_u,
        corr_v,
        branch.field.box,
        branch.field.b,
        branch.field.d,
    )
    record = {
        "correction_norm": corr.analytic_norm(branch.weight),
        "omega_shift": float(np.linalg.norm(domega)),
        "min_singular_value": min_sv,
        "residual_norm": new_res.analytic_norm(branch.weight),
    }
    branch.field = new_field
    branch.omega = new_omega
    branch.residual_norm = record["residual_norm"]
    branch.residual_field = new_res
    branch.iterations.append(record)
    return branch


def solve(
    seed: SeedSolution,
    p: int,
    delta: float = 1.0,
    tail: TailSpec | None = None,
    box: TruncationBox | None = None,
    weight: AnalyticWeight | None = None,
    settings: NewtonSettings | None = None,
) -> SolutionBranch:
    """Full Newton run from the seed; returns an accepted or rejected branch."""
    settings = settings or NewtonSettings()
    branch, rset = prepare_branch(seed, p, delta, tail, box, weight, settings)
    if settings.check_genericity and not branch.certificate.is_generic:
        branch.accepted = False
        branch.reject_reason = "seed failed the genericity certificate"
        return branch
    seed_norm = branch.field.analytic_norm(branch.weight)
    target = settings.tol * max(1.0, seed_norm)
    try:
        for _ in range(settings.max_iter):
            newton_step(branch, rset, settings)
            if branch.residual_norm <= target:
                break
    except ExcisionError:
        return branch
    branch.accepted = branch.residual_norm <= target
    if not branch.accepted and branch.reject_reason is None:
        branch.reject_reason = (
            f"residual {branch.residual_norm:.3e} above target {target:.3e} "
            f"after {settings.max_iter} iterations"
        )
    tau = settings.tau if settings.tau is not None else seed.b + 1
    branch.diophantine = {
        "gamma": settings.gamma,
        "tau": tau,
        "n_max": settings.n_max,
        "ok": diophantine_check(
            branch.omega, settings.gamma, tau, settings.n_max, settings.m_cap
        ),
    }
    return branch


def diophantine_check(
    omega: np.ndarray,
    gamma: float,
    tau: float,
    n_max: int,
    m_cap: int = 0,
) -> bool:
    """Small-divisor screen: |n.omega| >= gamma * |n|_inf^(-tau).

    With m_cap > 0 the Laplacian-resonance variant |n.omega + m| is also
    required for every integer |m| <= m_cap.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    omega = np.asarray(omega, dtype=float)
    b = omega.size
    for n in itertools.product(range(-n_max, n_max + 1), repeat=b):
        norm = max(abs(a) for a in n)
        if norm == 0:
            continue
        dot = float(np.dot(n, omega))
        bar = gamma * norm ** (-tau)
        if abs(dot) < bar:
            return False
        if m_cap > 0:
            m = -round(dot)
            if abs(m) <= m_cap and abs(dot + m) < bar:
                return False
    return True


def frequency_jacobian(
    branch: SolutionBranch,
    settings: NewtonSettings | None = None,
    rel_step: float = 0.05,
    transversality_c: float = 0.01,
) -> tuple[np.ndarray, float, bool]:
    """Finite-difference d(omega)/d(amplitude moduli) on re-solved branches.

    Central differences in each modulus |a_k| (phases held fixed).  Returns
    (jacobian, |det|, transversality flag).  The flag compares |det| against
    transversality_c * delta_eff^(2p-1); note |det| itself scales like
    delta_eff^(b*(2p-1)) for a b-mode seed.
    """
    settings = settings or NewtonSettings()
    if not branch.iterations:
        raise ValueError("branch needs at least one Newton step")
    seed = branch.seed
    b = seed.b
    jac = np.zeros((b, b))
    quiet = NewtonSettings(
        tol=settings.tol,
        max_iter=settings.max_iter,
        excision_c=settings.excision_c,
        check_genericity=False,
    )
    for k in range(b):
        a_k = complex(seed.amplitudes[k])
        h = rel_step * abs(a_k)
        omegas = []
        for sign in (+1, -1):
            amps = list(seed.amplitudes)
            amps[k] = a_k * (1 + sign * h / abs(a_k))
            pert = SeedSolution(seed.frequencies, tuple(amps))
            bres = solve(
                pert,
                branch.p,
                branch.delta,
                branch.tail,
                branch.field.box,
                branch.weight,
                quiet,
            )
            omegas.append(bres.omega)
        jac[:, k] = (omegas[0] - omegas[1]) / (2 * h)
    det_abs = float(abs(np.linalg.det(jac)))
    eff = _effective_delta(branch)
    flag = det_abs >= transversality_c * eff ** (2 * branch.p - 1)
    return jac, det_abs, flag


def semiclassical_run(
    seed_template: SeedSolution,
    scale: int,
    p: int,
    tail: TailSpec | None = None,
    weight: AnalyticWeight | None = None,
    settings: NewtonSettings | None = None,
) -> tuple[SolutionBranch, float]:
    """Newton run with frequencies scaled by `scale` at unit delta.

    Returns the branch and the remainder norm (analytic norm of the
    accumulated correction, measured with spatial strip width 1/scale).
    """
    if scale < 1:
        raise ValueError("scale must be a positive integer")
    seed = seed_template.scaled(scale)
    weight = weight or AnalyticWeight(rho_time=0.1, rho_space=0.1 / scale)
    branch = solve(seed, p, 1.0, tail, None, weight, settings)
    remainder = branch.correction_field().analytic_norm(weight)
    return branch, remainder
