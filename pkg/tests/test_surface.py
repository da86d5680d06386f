"""Separated torus-of-revolution operators and ground-state scaling."""

import math

import numpy as np
import pytest

from qpnls.surface import (
    GroundStateRecord,
    ResolutionError,
    RevolutionMetric,
    default_grid_n,
    ground_state,
    scaling_study,
    separated_operator,
)


def test_metric_geometry_fields():
    metric = RevolutionMetric.revolution(2.0)
    assert metric.g_max == pytest.approx(9.0, rel=1e-10)
    assert metric.max_location == pytest.approx(0.0, abs=1e-10)
    assert metric.has_unique_max
    assert metric.nondegeneracy > 0
    # (1/g)'' at x = 0 for g = (2 + cos x)^2 is 2/27.
    assert metric.nondegeneracy == pytest.approx(2.0 / 27.0, rel=1e-8)
    x = np.linspace(0, 2 * np.pi, 17)
    assert np.max(np.abs(metric.g(x) - (2 + np.cos(x)) ** 2)) < 1e-10


def test_metric_validation():
    with pytest.raises(ValueError):
        RevolutionMetric.revolution(1.0)
    with pytest.raises(ValueError):
        RevolutionMetric(np.linspace(-1, 1, 64))
    with pytest.raises(ValueError):
        RevolutionMetric(np.ones(4))


def test_operator_is_exactly_symmetric():
    metric = RevolutionMetric.revolution(2.0)
    op = separated_operator(metric, 32)
    assert op.symmetry_defect() == 0.0


def test_resolution_guard():
    with pytest.raises(ResolutionError):
        separated_operator(RevolutionMetric.flat(), k=10_000, grid_n=512)
    assert default_grid_n(100) == 640
    assert default_grid_n(1) == 512


def test_flat_metric_ground_state_exact():
    rec = ground_state(RevolutionMetric.flat(), k=16)
    # H_k = -d^2/dx^2 + k^2 on the flat circle: ground state is constant
    # with eigenvalue exactly k^2 (the FD stencil is exact on constants).
    assert rec.lam == pytest.approx(256.0, abs=1e-9)
    assert rec.gap > 0
    assert np.ptp(rec.psi) < 1e-8
    assert rec.sup_norm == pytest.approx(1 / (2 * math.pi), rel=1e-10)
    assert rec.residual < 1e-8


def test_ground_state_normalization_and_positivity():
    metric = RevolutionMetric.revolution(2.0)
    rec = ground_state(metric, k=64)
    op = separated_operator(metric, 64)
    mass = float(np.sum(np.abs(rec.psi) ** 2 * np.sqrt(op.g_vals) * op.h))
    assert mass == pytest.approx(1 / (2 * math.pi), rel=1e-10)
    assert rec.lam > 64**2 / metric.g_max
    assert rec.gap > 0
    assert rec.residual < 1e-8


def test_ground_state_matches_harmonic_oracle():
    # Near the maximum of g the effective potential is harmonic:
    # lambda ~ k^2/g_max + k sqrt(nondegeneracy / 2).
    metric = RevolutionMetric.revolution(2.0)
    k = 128
    rec = ground_state(metric, k)
    oracle = k**2 / metric.g_max + k * math.sqrt(metric.nondegeneracy / 2)
    assert rec.lam == pytest.approx(oracle, rel=2e-3)
    # Localization width shrinks like lambda^{-1/4} ~ k^{-1/2}.
    rec2 = ground_state(metric, 4 * k)
    assert rec2.localization_width == pytest.approx(
        rec.localization_width / 2, rel=0.05
    )


def test_grid_refinement_converges():
    metric = RevolutionMetric.revolution(2.0)
    a = ground_state(metric, 64, grid_n=1024)
    b = ground_state(metric, 64, grid_n=2048)
    assert abs(a.lam - b.lam) / b.lam < 1e-5


def test_scaling_study_flat_and_csv():
    study = scaling_study(RevolutionMetric.flat(), [16, 32, 64])
    assert study.slope == 0.0
    csv = study.to_csv()
    lines = csv.splitlines()
    assert lines[0] == "k,lambda,sup_norm,localization_width"
    assert len(lines) == 4
    with pytest.raises(ValueError):
        scaling_study(RevolutionMetric.flat(), [16])


def test_scaling_study_rejects_bad_power_law():
    # A two-point "fit" is exact, so force a residual with three points on
    # a deliberately preasymptotic k-range paired with a tight residual cap.
    metric = RevolutionMetric.revolution(2.0)
    with pytest.raises(ValueError):
        scaling_study(metric, [1, 2, 64], max_fit_residual=1e-12)
