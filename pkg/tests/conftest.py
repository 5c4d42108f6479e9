"""Shared builders for compact hand-made cohorts."""

from __future__ import annotations

from datetime import date, timedelta

import pytest

from phenocycle.cohort import (
    Cohort,
    Demographics,
    FeatureEvent,
    FeatureGroup,
    ParticipantRecord,
)

DAY0 = date(2022, 1, 3)


def day(offset: int) -> date:
    return DAY0 + timedelta(days=offset)


def make_demographics(*, age: int = 40, sex: str = "female", race: str = "other") -> Demographics:
    return Demographics(age_years=age, sex=sex, race_ethnicity=race)


def make_group(name: str, pairs, *, protected: bool = False) -> FeatureGroup:
    """pairs: iterable of (day_offset, value)."""
    events = tuple(
        FeatureEvent(value=float(v), timestamp=day(off)) for off, v in pairs
    )
    return FeatureGroup(name=name, events=events, protected=protected)


def make_participant(
    pid: str,
    scores,
    *,
    doses=None,
    extra_groups=(),
    age: int = 40,
    sex: str = "female",
    race: str = "other",
) -> ParticipantRecord:
    """scores: iterable of (day_offset, value); doses: iterable of day offsets."""
    groups = {"pasc_score": make_group("pasc_score", scores)}
    if doses is not None:
        groups["vaccine_dose"] = make_group(
            "vaccine_dose", [(off, i + 1) for i, off in enumerate(doses)]
        )
    for g in extra_groups:
        groups[g.name] = g
    return ParticipantRecord(
        id=pid,
        demographics=make_demographics(age=age, sex=sex, race=race),
        groups=groups,
    )


def make_cohort(*participants) -> Cohort:
    return Cohort(participants=list(participants))


@pytest.fixture
def tiny_cohort() -> Cohort:
    """Four participants, one per label plus a second Protected."""
    return make_cohort(
        make_participant("p1", [(0, 3), (90, 5), (180, 4)], doses=[10, 100]),
        make_participant("p2", [(0, 2), (90, 1), (180, 0)], doses=[15]),
        make_participant("p3", [(0, 9), (60, 15), (120, 14), (180, 8)], doses=[50, 110]),
        make_participant("p4", [(0, 14), (90, 18), (180, 21)], doses=[30]),
    )


@pytest.fixture(scope="session")
def default_cohort() -> Cohort:
    """Full-size generated cohort, built once per test session."""
    from phenocycle.synth import default_config, generate

    return generate(default_config())
