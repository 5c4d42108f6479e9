"""Exception types shared across the package.

Every operation that can fail raises one of these rather than a bare
ValueError, so callers (CLI, HTTP service) can map failures to exit
codes and API error payloads without string matching.
"""

from __future__ import annotations


class PhenocycleError(Exception):
    """Base class for all package errors."""


# ---- cohort model / io ----

class ParseError(PhenocycleError):
    """A cohort file line or field could not be parsed."""

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class DuplicateId(PhenocycleError):
    """Two participants share an id."""


class MissingPascGroup(PhenocycleError):
    """A participant record has no usable pasc_score group."""


# ---- synthetic generator ----

class ConfigError(PhenocycleError):
    """Generator or run configuration failed validation."""


# ---- phenotype labeling ----

class EmptyTrajectory(PhenocycleError):
    """No score events to derive states from."""


# ---- statistics ----

class AllValuesTied(PhenocycleError):
    """Every pooled value identical; rank test undefined."""


class TooFewGroups(PhenocycleError):
    """Fewer than two groups supplied."""


class ZeroWithinVariance(PhenocycleError):
    """ANOVA within-group variance is zero everywhere."""


class ConstantInput(PhenocycleError):
    """Correlation input has zero variance."""


class LengthMismatch(PhenocycleError):
    """Paired sequences differ in length."""


class NoObservations(PhenocycleError):
    """No observations matched the requested selection."""


class TooFewStrata(PhenocycleError):
    """Not enough dose strata in the requested range."""


# ---- baselines ----

class SingularDesign(PhenocycleError):
    """Design matrix is rank deficient (e.g. all times identical)."""


class InsufficientData(PhenocycleError):
    """Not enough usable participants for the requested model."""


# ---- judging ----

class UnknownFeature(PhenocycleError):
    """Feature name not present in the cohort schema."""


class CohortTooSmall(PhenocycleError):
    """Pairing requires at least two participants."""


class ContextOverflow(PhenocycleError):
    """Prompt cannot fit the budget even after truncation."""


class BackendError(PhenocycleError):
    """A model backend failed (network, timeout, malformed payload)."""


# ---- cycle engine ----

class EmptyPool(PhenocycleError):
    """Run started with no hypotheses."""


class WrongState(PhenocycleError):
    """Operation not valid in the run's current status."""


class RunLocked(PhenocycleError):
    """Another writer holds the run's single-writer lock."""
