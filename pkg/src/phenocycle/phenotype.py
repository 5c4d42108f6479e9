"""Rule-based subphenotype labeling from severity-score trajectories.

Scores are binarized against a threshold (default 12: a score at or
above it counts as an affected state). The trajectory of binary states
decides the label:

* Protected: never affected (all states 0).
* Responder: affected at some point, with an adjacent 1 -> 0 transition,
  and unaffected at the final visit. Relapsing trajectories that end in
  state 0 still count; the final state decides.
* Refractory: everything else (including trajectories that end affected).
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from enum import Enum

from .cohort import Cohort, ParticipantRecord
from .errors import EmptyTrajectory

DEFAULT_THRESHOLD = 12.0


class PhenotypeLabel(str, Enum):
    PROTECTED = "Protected"
    RESPONDER = "Responder"
    REFRACTORY = "Refractory"


@dataclass(frozen=True)
class StateSequence:
    """Binary affected/unaffected states, one per score event, in date order."""

    dates: tuple[date, ...]
    states: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class LabelResult:
    label: PhenotypeLabel
    first_remission_date: date | None = None


def to_states(record: ParticipantRecord, threshold: float = DEFAULT_THRESHOLD) -> StateSequence:
    """Binarize the pasc_score trajectory. Score >= threshold maps to 1."""
    events = record.pasc().events
    if not events:
        raise EmptyTrajectory(f"participant {record.id!r} has no scores")
    return StateSequence(
        dates=tuple(e.timestamp for e in events),
        states=tuple(1 if e.value >= threshold else 0 for e in events),
    )


def label(states: StateSequence) -> LabelResult:
    """Apply the three-way rule to a state sequence."""
    if len(states) == 0:
        raise EmptyTrajectory("empty state sequence")
    seq = states.states
    if all(s == 0 for s in seq):
        return LabelResult(PhenotypeLabel.PROTECTED)
    if seq[-1] == 0:
        # a 1 exists and the sequence ends in 0, so an adjacent 1 -> 0
        # transition necessarily exists; find the first one
        for i in range(1, len(seq)):
            if seq[i - 1] == 1 and seq[i] == 0:
                return LabelResult(
                    PhenotypeLabel.RESPONDER, first_remission_date=states.dates[i]
                )
    return LabelResult(PhenotypeLabel.REFRACTORY)


def label_participant(
    record: ParticipantRecord, threshold: float = DEFAULT_THRESHOLD
) -> LabelResult:
    return label(to_states(record, threshold))


def label_cohort(
    cohort: Cohort, threshold: float = DEFAULT_THRESHOLD
) -> dict[str, PhenotypeLabel]:
    """Label every participant. Returns id -> label."""
    return {p.id: label_participant(p, threshold).label for p in cohort}


def label_counts(labels: dict[str, PhenotypeLabel]) -> dict[PhenotypeLabel, int]:
    counts = {lab: 0 for lab in PhenotypeLabel}
    for lab in labels.values():
        counts[lab] += 1
    return counts
