"""Direct time integration of the nonlinear Schrödinger flow on T^d.

The initial-value problem i u_t = -Delta u + delta |u|^{2p} u is integrated
by Strang-split spectral steps: the linear half-steps are exact Fourier
phases, the nonlinear step is an exact pointwise phase rotation in physical
space (|u| is conserved by the pointwise ODE).  The module also evaluates
quasi-periodic Newton branches as time-dependent spatial data, matches a
given Cauchy datum by such a branch, and monitors long-time norm drift.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.fft import fftn, ifftn, next_fast_len

from .lattice import AnalyticWeight
from .nonlinearity import TailSpec
from .qp_solver import NewtonSettings, SolutionBranch, solve
from .resonance import SeedSolution


class BlowUpError(Exception):
    """A single step grew the solution norm past the guard factor."""


@dataclass
class CauchyState:
    """Spatial Fourier coefficients c_j, |j|_inf <= n_space, at one time.

    coeffs is dense with shape (2*n_space+1,)*d; index j + n_space per axis.
    """

    coeffs: np.ndarray
    n_space: int
    d: int
    time: float
    delta: float
    p: int

    def __post_init__(self) -> None:
        expected = (2 * self.n_space + 1,) * self.d
        if self.coeffs.shape != expected:
            raise ValueError(f"coeffs shape {self.coeffs.shape} != {expected}")

    def l2_norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def analytic_norm(self, rho: float = 0.1) -> float:
        return float(np.sum(np.abs(self.coeffs) * _exp_weight(self.n_space, self.d, rho)))

    def sup_norm_bound(self) -> float:
        """l1 of coefficients, an upper bound for the physical sup norm."""
        return float(np.sum(np.abs(self.coeffs)))

    def copy(self) -> "CauchyState":
        return CauchyState(
            self.coeffs.copy(), self.n_space, self.d, self.time, self.delta, self.p
        )

    def coefficient(self, j: tuple[int, ...]) -> complex:
        return complex(self.coeffs[tuple(a + self.n_space for a in j)])

    def to_json_dict(self) -> dict:
        entries = []
        for idx in np.argwhere(np.abs(self.coeffs) > 0):
            j = [int(a) - self.n_space for a in idx]
            c = self.coeffs[tuple(idx)]
            entries.append({"j": j, "re": c.real, "im": c.imag})
        return {
            "n_space": self.n_space,
            "d": self.d,
            "time": self.time,
            "delta": self.delta,
            "p": self.p,
            "coeffs": entries,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "CauchyState":
        n, d = doc["n_space"], doc["d"]
        arr = np.zeros((2 * n + 1,) * d, dtype=np.complex128)
        for e in doc["coeffs"]:
            arr[tuple(a + n for a in e["j"])] = complex(e["re"], e["im"])
        return cls(arr, n, d, doc["time"], doc["delta"], doc["p"])


def _exp_weight(n_space: int, d: int, rho: float) -> np.ndarray:
    ax = np.abs(np.arange(-n_space, n_space + 1))
    w = np.zeros((2 * n_space + 1,) * d)
    for i in range(d):
        shape = [1] * d
        shape[i] = 2 * n_space + 1
        w = w + ax.reshape(shape)
    return np.exp(rho * w)


def state_from_map(
    coeffs: dict[tuple[int, ...], complex],
    n_space: int,
    d: int,
    delta: float,
    p: int,
    time: float = 0.0,
) -> CauchyState:
    arr = np.zeros((2 * n_space + 1,) * d, dtype=np.complex128)
    for j, c in coeffs.items():
        if max(abs(a) for a in j) > n_space:
            raise ValueError(f"mode {j} outside |j| <= {n_space}")
        arr[tuple(a + n_space for a in j)] += c
    return CauchyState(arr, n_space, d, time, delta, p)


def default_dt(state: CauchyState, safety: float = 0.5) -> float:
    """Stability policy: dt <= safety * min(0.1/(delta*|u|^2p), 0.5/max|j|^2)."""
    sup = state.sup_norm_bound()
    nl_rate = abs(state.delta) * sup ** (2 * state.p)
    caps = [0.5 / max(1, state.n_space**2 * state.d)]
    if nl_rate > 0:
        caps.append(0.1 / nl_rate)
    return safety * min(caps)


class SplitStepIntegrator:
    """Cached-phase Strang stepper for a fixed (grid, dt) configuration.

    The nonlinear stage is evaluated on a zero-padded grid with at least
    (2p+2)*n_space+1 points per axis, so the degree-(2p+1) product of the
    retained band is alias-free.
    """

    def __init__(
        self,
        n_space: int,
        d: int,
        p: int,
        delta: float,
        dt: float,
        blowup_factor: float = 10.0,
    ):
        if dt == 0.0:
            raise ValueError("dt must be nonzero")
        self.n_space, self.d, self.p, self.delta = n_space, d, p, delta
        self.dt = dt
        self.blowup_factor = blowup_factor
        ax = np.arange(-n_space, n_space + 1)
        jsq = np.zeros((2 * n_space + 1,) * d)
        for i in range(d):
            shape = [1] * d
            shape[i] = ax.size
            jsq = jsq + (ax**2).reshape(shape)
        self.half_phase = np.exp(-0.5j * jsq * dt)
        m = next_fast_len((2 * p + 2) * n_space + 1)
        self.grid = (m,) * d
        self._embed = np.ix_(*([ax % m] * d))
        self._points = m**d

    def step(self, state: CauchyState) -> CauchyState:
        """One Strang step; raises BlowUpError on runaway growth."""
        before = float(np.abs(state.coeffs).max())
        c = state.coeffs * self.half_phase
        spec = np.zeros(self.grid, dtype=np.complex128)
        spec[self._embed] = c
        vals = ifftn(spec) * self._points
        vals *= np.exp(-1j * self.delta * self.dt * np.abs(vals) ** (2 * self.p))
        spec = fftn(vals) / self._points
        c = spec[self._embed] * self.half_phase
        after = float(np.abs(c).max())
        if not np.isfinite(after) or (before > 0 and after > self.blowup_factor * before):
            raise BlowUpError(
                f"norm grew {after / max(before, 1e-300):.2e}x in one step at "
                f"t = {state.time:.6g}"
            )
        return CauchyState(
            c, state.n_space, state.d, state.time + self.dt, state.delta, state.p
        )

    def evolve(self, state: CauchyState, n_steps: int) -> CauchyState:
        for _ in range(n_steps):
            state = self.step(state)
        return state


def split_step(state: CauchyState, dt: float) -> CauchyState:
    """Single Strang step (convenience wrapper; loops should reuse the class)."""
    stepper = SplitStepIntegrator(state.n_space, state.d, state.p, state.delta, dt)
    return stepper.step(state)


@dataclass
class QPEvaluator:
    """Evaluates the spatial trace of a quasi-periodic coefficient family.

    c_j(t) = sum_n u_hat(n, j) exp(i n.omega t), arranged on the dense
    spatial grid of a CauchyState.
    """

    omega: np.ndarray
    n_mat: np.ndarray  # (K, b) integer time-frequency rows
    flat_idx: np.ndarray  # (K,) raveled positions in the spatial grid
    coeffs: np.ndarray  # (K,) complex
    n_space: int
    d: int
    delta: float
    p: int
    branch: SolutionBranch | None = dc_field(default=None, repr=False)

    @classmethod
    def from_branch(
        cls, branch: SolutionBranch, n_space: int | None = None
    ) -> "QPEvaluator":
        field = branch.field
        if n_space is None:
            n_space = max(
                (max(abs(a) for a in s.j) for s in field.u), default=0
            )
        shape = (2 * n_space + 1,) * field.d
        n_rows, idxs, cs = [], [], []
        for s, c in sorted(field.u.items()):
            if max(abs(a) for a in s.j) > n_space:
                continue
            n_rows.append(s.n)
            idxs.append(
                np.ravel_multi_index(tuple(a + n_space for a in s.j), shape)
            )
            cs.append(c)
        return cls(
            omega=np.asarray(branch.omega, dtype=float),
            n_mat=np.array(n_rows, dtype=np.int64).reshape(len(cs), field.b),
            flat_idx=np.array(idxs, dtype=np.int64),
            coeffs=np.array(cs, dtype=np.complex128),
            n_space=n_space,
            d=field.d,
            delta=branch.delta,
            p=branch.p,
            branch=branch,
        )

    def state(self, t: float) -> CauchyState:
        arr = np.zeros((2 * self.n_space + 1,) * self.d, dtype=np.complex128)
        phases = np.exp(1j * t * (self.n_mat @ self.omega))
        np.add.at(arr.ravel(), self.flat_idx, self.coeffs * phases)
        return CauchyState(arr, self.n_space, self.d, t, self.delta, self.p)


def _distance(a: CauchyState, b: CauchyState, rho: float) -> float:
    if a.n_space != b.n_space:
        raise ValueError("states live on different grids")
    w = _exp_weight(a.n_space, a.d, rho)
    return float(np.sum(np.abs(a.coeffs - b.coeffs) * w))


def build_approximant(
    u0: CauchyState,
    branch_library: list[SolutionBranch],
    r_target: float,
    settings: NewtonSettings | None = None,
    max_steps: int = 12,
    rho: float = 0.1,
) -> tuple[QPEvaluator, float]:
    """Match u0 by the time-zero trace of a quasi-periodic branch.

    Starts from the library branch whose seed captures the most l2 mass of
    u0, then alternates damped amplitude updates (the time-zero matching
    map has identity-dominated diagonal, so the Gauss-Newton step reduces
    to a fixed-point correction) with re-solves.  When amplitudes stagnate
    above r_target, the largest unmatched mode is promoted to a new basic
    frequency, up to a cap of ceil(|log10 delta|) * b added modes.
    """
    if not branch_library:
        raise ValueError("branch library is empty")
    settings = settings or NewtonSettings()

    def mass(branch: SolutionBranch) -> float:
        return sum(
            abs(u0.coefficient(jk)) ** 2
            for jk in branch.seed.frequencies
            if max(abs(a) for a in jk) <= u0.n_space
        )

    best = max(branch_library, key=mass)
    seed = best.seed
    p, delta, tail, box = best.p, best.delta, best.tail, best.field.box
    quiet = NewtonSettings(
        tol=settings.tol,
        max_iter=settings.max_iter,
        excision_c=settings.excision_c,
        check_genericity=False,
    )
    amp_scale = max(abs(a) for a in seed.amplitudes)
    mode_cap = max(1, math.ceil(abs(math.log10(max(delta * amp_scale, 1e-300))))) * seed.b
    added = 0
    branch = best
    evaluator = QPEvaluator.from_branch(branch, u0.n_space)
    err = _distance(evaluator.state(0.0), u0, rho)
    for _ in range(max_steps):
        if err <= r_target:
            break
        trace = evaluator.state(0.0)
        amps = list(map(complex, seed.amplitudes))
        moved = 0.0
        for k, jk in enumerate(seed.frequencies):
            gap = u0.coefficient(jk) - trace.coefficient(jk)
            amps[k] += gap
            moved = max(moved, abs(gap))
        if moved > 1e-14 * max(1.0, amp_scale):
            seed = SeedSolution(seed.frequencies, tuple(amps))
        elif added < mode_cap:
            # Amplitudes have stagnated: promote the largest unmatched
            # spatial mode to a new basic frequency of the seed.
            diff = np.abs(u0.coeffs - trace.coeffs)
            for jk in seed.frequencies:
                diff[tuple(a + u0.n_space for a in jk)] = 0.0
            flat = int(np.argmax(diff))
            idx = np.unravel_index(flat, diff.shape)
            j_new = tuple(int(a) - u0.n_space for a in idx)
            if diff[idx] == 0.0 or all(a == 0 for a in j_new):
                break
            seed = SeedSolution(
                seed.frequencies + (j_new,),
                tuple(amps) + (u0.coefficient(j_new),),
            )
            added += 1
        else:
            break
        branch = solve(seed, p, delta, tail, box, branch.weight, quiet)
        evaluator = QPEvaluator.from_branch(branch, u0.n_space)
        err = _distance(evaluator.state(0.0), u0, rho)
    return evaluator, err


@dataclass
class DriftReport:
    times: list[float]
    l2_norms: list[float]
    analytic_norm_drift: list[float]
    distance_to_qp: list[float]
    horizon_reached: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "times": self.times,
                "l2_norms": self.l2_norms,
                "analytic_norm_drift": self.analytic_norm_drift,
                "distance_to_qp": self.distance_to_qp,
                "horizon_reached": self.horizon_reached,
            },
            indent=2,
        )

    def to_csv(self) -> str:
        lines = ["time,l2_norm,analytic_norm_drift,distance_to_qp"]
        for row in zip(
            self.times, self.l2_norms, self.analytic_norm_drift, self.distance_to_qp
        ):
            lines.append(",".join(f"{x:.17g}" for x in row))
        return "\n".join(lines) + "\n"


def drift_monitor(
    u0: CauchyState,
    evaluator: QPEvaluator,
    horizon_exponent: float = 2.0,
    delta_scale: float | None = None,
    dt: float | None = None,
    samples: int = 25,
    drift_multiple: float = 5.0,
    rho: float = 0.1,
) -> DriftReport:
    """Integrate u0 to t = delta_scale^(-horizon_exponent), sampling drift.

    delta_scale is the smallness parameter of the datum (default: the
    sup-norm bound of u0).  Records, on a logarithmic time grid, the l2
    norm, the analytic-norm drift from t = 0, and the distance to the
    quasi-periodic evaluator.  horizon_reached is the last sampled time
    at which the drift stayed within drift_multiple * delta_scale.
    """
    if delta_scale is None:
        delta_scale = u0.sup_norm_bound()
    if not 0 < delta_scale < 1:
        raise ValueError("delta_scale must lie in (0, 1) for a finite horizon")
    horizon = delta_scale ** (-horizon_exponent)
    dt = dt if dt is not None else default_dt(u0)
    stepper = SplitStepIntegrator(u0.n_space, u0.d, u0.p, u0.delta, dt)
    n_total = max(1, int(math.ceil(horizon / dt)))
    marks = sorted(
        {
            max(1, int(round(x)))
            for x in np.geomspace(1, n_total, num=max(2, samples))
        }
    )
    base_analytic = u0.analytic_norm(rho)
    times, l2s, drifts, dists = [], [], [], []
    state = u0.copy()
    done = 0
    horizon_reached = 0.0
    tol = drift_multiple * delta_scale
    for mark in marks:
        state = stepper.evolve(state, mark - done)
        done = mark
        t = state.time
        drift = state.analytic_norm(rho) - base_analytic
        times.append(t)
        l2s.append(state.l2_norm())
        drifts.append(drift)
        dists.append(_distance(state, evaluator.state(t), rho))
        if abs(drift) <= tol:
            horizon_reached = t
        else:
            break
    return DriftReport(times, l2s, drifts, dists, horizon_reached)
