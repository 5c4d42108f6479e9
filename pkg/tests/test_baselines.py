"""Planted-parameter recovery tests for the regression baselines."""

from __future__ import annotations

import numpy as np
import pytest

from phenocycle.baselines import (
    compare_partitions,
    fit_lctm,
    fit_lmm,
)
from phenocycle.errors import InsufficientData, NoObservations, SingularDesign
from phenocycle.cohort import Cohort

from conftest import make_cohort, make_participant


def lmm_cohort(
    *,
    n_participants: int = 200,
    n_obs: int = 10,
    beta0: float = 2.0,
    beta1: float = 0.5,
    sigma2_group: float = 4.0,
    sigma2_resid: float = 1.0,
    seed: int = 16,
) -> Cohort:
    rng = np.random.default_rng(seed)
    participants = []
    for i in range(n_participants):
        b = rng.normal(0.0, np.sqrt(sigma2_group))
        scores = [
            (t, beta0 + beta1 * t + b + rng.normal(0.0, np.sqrt(sigma2_resid)))
            for t in range(n_obs)
        ]
        participants.append(make_participant(f"m{i:04d}", scores))
    return make_cohort(*participants)


class TestLmm:
    def test_recovers_planted_parameters(self):
        fit = fit_lmm(lmm_cohort())
        assert fit.converged
        assert fit.beta1 == pytest.approx(0.5, abs=0.05)
        assert fit.beta0 == pytest.approx(2.0, abs=0.5)
        assert abs(fit.sigma2_group - 4.0) / 4.0 < 0.25
        assert abs(fit.sigma2_resid - 1.0) / 1.0 < 0.25
        assert fit.p_beta1 < 1e-6
        assert fit.n_participants == 200
        assert fit.n_observations == 2000

    def test_loglik_trace_never_decreases(self):
        fit = fit_lmm(lmm_cohort(n_participants=60, seed=5))
        trace = fit.ll_trace
        for older, newer in zip(trace, trace[1:]):
            assert newer >= older - 1e-7 * (1.0 + abs(older))

    def test_flat_slope_is_not_significant(self):
        fit = fit_lmm(lmm_cohort(n_participants=80, beta1=0.0, seed=11))
        assert abs(fit.beta1) < 0.05
        assert fit.p_beta1 > 0.01

    def test_nonconvergence_reported_not_raised(self):
        fit = fit_lmm(lmm_cohort(n_participants=40, seed=3), max_iter=2)
        assert not fit.converged
        assert fit.n_iterations == 2
        assert np.isfinite(fit.log_likelihood)

    def test_constant_time_raises_singular(self):
        cohort = make_cohort(
            make_participant("a", [(5, 1.0), (5, 2.0)]),
            make_participant("b", [(5, 3.0), (5, 4.0)]),
        )
        with pytest.raises(SingularDesign):
            fit_lmm(cohort)

    def test_single_participant_insufficient(self):
        cohort = make_cohort(make_participant("a", [(0, 1.0), (1, 2.0), (2, 3.0)]))
        with pytest.raises(InsufficientData):
            fit_lmm(cohort)

    def test_empty_cohort_has_no_observations(self):
        with pytest.raises(NoObservations):
            fit_lmm(make_cohort())

    def test_wald_z_matches_ratio(self):
        fit = fit_lmm(lmm_cohort(n_participants=50, seed=8))
        assert fit.z_beta1 == pytest.approx(fit.beta1 / fit.se_beta1)


def lctm_cohort(*, per_class: int = 60, n_obs: int = 8, seed: int = 21) -> tuple[Cohort, dict[str, int]]:
    """Two noisy linear classes plus one exactly linear (zero noise) class."""
    rng = np.random.default_rng(seed)
    specs = [
        (2.0, 0.00, 0.7),
        (15.0, -0.12, 0.7),
        (8.0, 0.05, 0.0),  # exact line, should collapse to a degenerate class
    ]
    participants = []
    truth: dict[str, int] = {}
    for cls, (a, b, sd) in enumerate(specs):
        for i in range(per_class):
            pid = f"c{cls}_{i:03d}"
            scores = []
            for j in range(n_obs):
                t = j * 30
                noise = rng.normal(0.0, sd) if sd > 0 else 0.0
                scores.append((t, a + b * t + noise))
            participants.append(make_participant(pid, scores))
            truth[pid] = cls
    return make_cohort(*participants), truth


class TestLctm:
    def test_recovers_planted_classes(self):
        cohort, truth = lctm_cohort()
        fit = fit_lctm(cohort, n_classes=3, seed=2)
        assert compare_partitions(fit.assignments, truth) >= 0.90

    def test_exact_linear_class_flagged_degenerate(self):
        cohort, truth = lctm_cohort()
        fit = fit_lctm(cohort, n_classes=3, seed=2)
        exact_members = {pid for pid, cls in truth.items() if cls == 2}
        assigned = {fit.assignments[pid] for pid in exact_members}
        assert len(assigned) == 1
        klass = fit.classes[assigned.pop()]
        assert klass.degenerate
        assert klass.variance <= 1e-8
        assert klass.intercept == pytest.approx(8.0, abs=0.1)
        assert klass.slope == pytest.approx(0.05, abs=0.005)

    def test_noisy_classes_not_degenerate(self):
        cohort, truth = lctm_cohort()
        fit = fit_lctm(cohort, n_classes=3, seed=2)
        flags = [k.degenerate for k in fit.classes]
        assert flags.count(True) == 1

    def test_loglik_trace_never_decreases(self):
        cohort, _ = lctm_cohort(per_class=30, seed=4)
        fit = fit_lctm(cohort, n_classes=3, seed=7)
        trace = fit.ll_trace
        for older, newer in zip(trace, trace[1:]):
            assert newer >= older - 1e-6 * (1.0 + abs(older))

    def test_weights_form_distribution(self):
        cohort, _ = lctm_cohort(per_class=25, seed=6)
        fit = fit_lctm(cohort, n_classes=3, seed=1)
        total = sum(k.weight for k in fit.classes)
        assert total == pytest.approx(1.0, abs=1e-6)
        assert all(k.weight >= 0 for k in fit.classes)

    def test_same_seed_reproduces_fit(self):
        cohort, _ = lctm_cohort(per_class=20, seed=9)
        a = fit_lctm(cohort, n_classes=3, seed=5)
        b = fit_lctm(cohort, n_classes=3, seed=5)
        assert a.assignments == b.assignments
        assert a.log_likelihood == b.log_likelihood

    def test_single_class_covers_everyone(self):
        cohort, _ = lctm_cohort(per_class=10, seed=13)
        fit = fit_lctm(cohort, n_classes=1, seed=0)
        assert set(fit.assignments.values()) == {0}
        assert fit.classes[0].weight == pytest.approx(1.0)

    def test_too_few_usable_participants(self):
        cohort = make_cohort(
            make_participant("a", [(0, 1.0), (30, 2.0)]),
            make_participant("b", [(0, 5.0), (30, 6.0)]),
            make_participant("single", [(0, 9.0)]),  # one obs, not usable
        )
        with pytest.raises(InsufficientData):
            fit_lctm(cohort, n_classes=3)


class TestComparePartitions:
    def test_identical_partitions(self):
        a = {"x": 0, "y": 1, "z": 0}
        assert compare_partitions(a, dict(a)) == 1.0

    def test_label_permutation_is_perfect_agreement(self):
        a = {"x": 0, "y": 1, "z": 0, "w": 1}
        b = {"x": 5, "y": 2, "z": 5, "w": 2}
        assert compare_partitions(a, b) == 1.0

    def test_one_of_four_disagrees(self):
        a = {"x": 0, "y": 0, "z": 1, "w": 1}
        b = {"x": 0, "y": 0, "z": 1, "w": 0}
        assert compare_partitions(a, b) == 0.75

    def test_uneven_label_counts(self):
        a = {"x": 0, "y": 1, "z": 2}
        b = {"x": 0, "y": 1, "z": 1}
        assert compare_partitions(a, b) == pytest.approx(2.0 / 3.0)

    def test_disjoint_ids_raise(self):
        with pytest.raises(InsufficientData):
            compare_partitions({"x": 0}, {"y": 0})

    def test_only_shared_ids_counted(self):
        a = {"x": 0, "y": 1, "extra": 1}
        b = {"x": 0, "y": 1, "other": 0}
        assert compare_partitions(a, b) == 1.0
