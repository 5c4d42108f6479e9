"""Longitudinal cohort data model and file formats.

A cohort is a list of participant records. Each participant carries
demographics and a set of named feature groups; a feature group is a
date-sorted series of (value, date) events. Exactly one group name,
``pasc_score``, is mandatory: it holds the symptom-survey severity
scores that everything downstream (labeling, statistics, judging)
is anchored to.

Two interchange formats are supported:

* JSONL: one participant object per line.
* CSV long format (``id,group,protected,date,value``) with a sidecar
  ``<stem>.demographics.csv`` holding ``id,age_years,sex,race_ethnicity``.

Note on CSV: a group with zero events has no rows to carry it, so the
CSV round trip is exact only for cohorts without empty groups (the
synthetic generator never emits one).
"""

from __future__ import annotations

import csv
import json
from bisect import bisect_right
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from .errors import DuplicateId, MissingPascGroup, ParseError

PASC_GROUP = "pasc_score"

SEXES = ("female", "male")
RACE_ETHNICITIES = ("asian", "hispanic_latino", "non_hispanic_black", "other")


@dataclass(frozen=True)
class FeatureEvent:
    """One timestamped measurement."""

    value: float
    timestamp: date


@dataclass(frozen=True)
class FeatureGroup:
    """A named, date-sorted series of events.

    ``protected`` marks demographic-derived groups that must never be
    shown to a model backend.
    """

    name: str
    events: tuple[FeatureEvent, ...]
    protected: bool = False

    def values(self) -> list[float]:
        return [e.value for e in self.events]

    def dates(self) -> list[date]:
        return [e.timestamp for e in self.events]


@dataclass(frozen=True)
class Demographics:
    age_years: int
    sex: str
    race_ethnicity: str


@dataclass(frozen=True)
class ParticipantRecord:
    id: str
    demographics: Demographics
    groups: dict[str, FeatureGroup] = field(default_factory=dict)

    def pasc(self) -> FeatureGroup:
        return self.groups[PASC_GROUP]

    def cumulative_count_at(self, group_name: str, when: date) -> int:
        """Events of ``group_name`` dated at or before ``when``.

        A participant without the group counts zero everywhere.
        """
        group = self.groups.get(group_name)
        if group is None:
            return 0
        return bisect_right(group.dates(), when)

    def last_value_at(self, group_name: str, when: date) -> float:
        """Value of the most recent event at or before ``when``, else 0.0.

        For cumulative-ordinal groups (vaccine doses valued 1, 2, ...)
        this equals the cumulative count, which is the covariate the
        dose analyses use.
        """
        group = self.groups.get(group_name)
        if group is None:
            return 0.0
        idx = bisect_right(group.dates(), when)
        if idx == 0:
            return 0.0
        return group.events[idx - 1].value


@dataclass
class Cohort:
    participants: list[ParticipantRecord]
    schema_version: int = 1

    def __len__(self) -> int:
        return len(self.participants)

    def __iter__(self):
        return iter(self.participants)

    def by_id(self) -> dict[str, ParticipantRecord]:
        return {p.id: p for p in self.participants}

    def ids(self) -> list[str]:
        return [p.id for p in self.participants]

    def schema(self) -> dict[str, bool]:
        """Union of group names across participants, mapped to protected flag.

        A name is protected if any participant carries it protected;
        mixed flags for one name would be a data defect and the stricter
        flag wins.
        """
        out: dict[str, bool] = {}
        for p in self.participants:
            for name, group in p.groups.items():
                out[name] = out.get(name, False) or group.protected
        return out

    def date_range(self) -> tuple[date, date] | None:
        lo: date | None = None
        hi: date | None = None
        for p in self.participants:
            for g in p.groups.values():
                for e in g.events:
                    if lo is None or e.timestamp < lo:
                        lo = e.timestamp
                    if hi is None or e.timestamp > hi:
                        hi = e.timestamp
        if lo is None or hi is None:
            return None
        return lo, hi


def _validate_demographics(raw: dict, line: int) -> Demographics:
    try:
        age = int(raw["age_years"])
        sex = str(raw["sex"])
        race = str(raw["race_ethnicity"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(line, f"bad demographics: {exc}") from exc
    if not 18 <= age <= 120:
        raise ParseError(line, f"age_years {age} outside [18, 120]")
    if sex not in SEXES:
        raise ParseError(line, f"sex {sex!r} not in {SEXES}")
    if race not in RACE_ETHNICITIES:
        raise ParseError(line, f"race_ethnicity {race!r} not in {RACE_ETHNICITIES}")
    return Demographics(age_years=age, sex=sex, race_ethnicity=race)


def _sorted_events(pairs: list[tuple[str, float]], line: int) -> tuple[FeatureEvent, ...]:
    events = []
    for iso, value in pairs:
        try:
            when = date.fromisoformat(iso)
            val = float(value)
        except (TypeError, ValueError) as exc:
            raise ParseError(line, f"bad event [{iso!r}, {value!r}]") from exc
        events.append(FeatureEvent(value=val, timestamp=when))
    # stable: same-day events keep file order
    events.sort(key=lambda e: e.timestamp)
    return tuple(events)


def _check_participant(p: ParticipantRecord) -> None:
    pasc = p.groups.get(PASC_GROUP)
    if pasc is None or not pasc.events:
        raise MissingPascGroup(f"participant {p.id!r} has no {PASC_GROUP} events")


def load_cohort(path: str | Path, format: str = "jsonl") -> Cohort:
    """Read a cohort file, validating ids, demographics and event order."""
    path = Path(path)
    if format == "jsonl":
        cohort = _load_jsonl(path)
    elif format == "csv":
        cohort = _load_csv(path)
    else:
        raise ValueError(f"unknown format {format!r}")
    seen: set[str] = set()
    for p in cohort.participants:
        if p.id in seen:
            raise DuplicateId(f"duplicate participant id {p.id!r}")
        seen.add(p.id)
        _check_participant(p)
    return cohort


def _load_jsonl(path: Path) -> Cohort:
    participants = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict) or "id" not in obj:
                raise ParseError(lineno, "record must be an object with an 'id'")
            demo = _validate_demographics(obj.get("demographics", {}), lineno)
            groups: dict[str, FeatureGroup] = {}
            for name, spec in (obj.get("groups") or {}).items():
                if not name:
                    raise ParseError(lineno, "empty group name")
                events = _sorted_events(
                    [(e[0], e[1]) for e in spec.get("events", [])], lineno
                )
                groups[name] = FeatureGroup(
                    name=name, events=events, protected=bool(spec.get("protected", False))
                )
            participants.append(
                ParticipantRecord(id=str(obj["id"]), demographics=demo, groups=groups)
            )
    return Cohort(participants=participants)


def _demographics_sidecar(path: Path) -> Path:
    return path.with_name(path.stem + ".demographics.csv")


def _load_csv(path: Path) -> Cohort:
    demo_by_id: dict[str, Demographics] = {}
    sidecar = _demographics_sidecar(path)
    with open(sidecar, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            demo_by_id[row["id"]] = _validate_demographics(row, lineno)

    # accumulate rows preserving first-seen participant and group order
    order: list[str] = []
    rows: dict[str, dict[str, tuple[bool, list[tuple[str, float]]]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = {"id", "group", "protected", "date", "value"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise ParseError(1, f"header must be {sorted(expected)}")
        for lineno, row in enumerate(reader, start=2):
            pid = row["id"]
            if pid not in rows:
                rows[pid] = {}
                order.append(pid)
            name = row["group"]
            if not name:
                raise ParseError(lineno, "empty group name")
            if row["protected"] not in ("0", "1"):
                raise ParseError(lineno, f"protected flag {row['protected']!r} not 0/1")
            protected = row["protected"] == "1"
            bucket = rows[pid].setdefault(name, (protected, []))
            if bucket[0] != protected:
                raise ParseError(lineno, f"group {name!r} flips protected flag")
            try:
                bucket[1].append((row["date"], float(row["value"])))
            except ValueError as exc:
                raise ParseError(lineno, f"bad value {row['value']!r}") from exc

    participants = []
    for pid in order:
        if pid not in demo_by_id:
            raise ParseError(0, f"participant {pid!r} missing from demographics sidecar")
        groups = {
            name: FeatureGroup(
                name=name, events=_sorted_events(pairs, 0), protected=protected
            )
            for name, (protected, pairs) in rows[pid].items()
        }
        participants.append(
            ParticipantRecord(id=pid, demographics=demo_by_id[pid], groups=groups)
        )
    return Cohort(participants=participants)


def save_cohort(cohort: Cohort, path: str | Path, format: str = "jsonl") -> None:
    """Write a cohort. An empty cohort yields an empty file (CSV: header only)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "jsonl":
        _save_jsonl(cohort, path)
    elif format == "csv":
        _save_csv(cohort, path)
    else:
        raise ValueError(f"unknown format {format!r}")


def participant_to_dict(p: ParticipantRecord) -> dict:
    return {
        "id": p.id,
        "demographics": {
            "age_years": p.demographics.age_years,
            "sex": p.demographics.sex,
            "race_ethnicity": p.demographics.race_ethnicity,
        },
        "groups": {
            name: {
                "protected": g.protected,
                "events": [[e.timestamp.isoformat(), e.value] for e in g.events],
            }
            for name, g in p.groups.items()
        },
    }


def _save_jsonl(cohort: Cohort, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in cohort.participants:
            fh.write(json.dumps(participant_to_dict(p), separators=(",", ":")))
            fh.write("\n")


def _save_csv(cohort: Cohort, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "group", "protected", "date", "value"])
        for p in cohort.participants:
            for name, g in p.groups.items():
                flag = "1" if g.protected else "0"
                for e in g.events:
                    writer.writerow([p.id, name, flag, e.timestamp.isoformat(), repr(e.value)])
    with open(_demographics_sidecar(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "age_years", "sex", "race_ethnicity"])
        for p in cohort.participants:
            d = p.demographics
            writer.writerow([p.id, d.age_years, d.sex, d.race_ethnicity])
