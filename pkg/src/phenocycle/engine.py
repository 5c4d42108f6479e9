"""Iterative refinement state machine over hypotheses and feature subsets.

One cycle iteration: pair participants under the current subset, draw m
independent random batches, ask the backend to judge each batch against
the active hypothesis, then decide: converge on quorum alignment, apply
suggested subset edits, rotate to the next pooled hypothesis after a
stall, or pause for a human. Runs persist as append-only JSONL logs
whose records are hash-chained, so history is tamper-evident and a run
can be replayed byte for byte.

Batch judgments are independent of one another and could be issued
concurrently against a remote backend; this implementation keeps them
sequential on one control thread, which also makes runs deterministic.

Timestamps are logical ticks (the record index), not wall-clock times:
replay determinism is a hard requirement and wall clocks would break
byte-identical logs.
"""
from __future__ import annotations

import fcntl
import hashlib
import json
import math
import uuid
from contextlib import contextmanager
from dataclasses import asdict, dataclass, is_dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .backends import BackendConfig, build_backend
from .baselines import fit_lctm, fit_lmm
from .cohort import Cohort, PASC_GROUP
from .errors import (
    BackendError,
    ConfigError,
    EmptyPool,
    ParseError,
    RunLocked,
    UnknownFeature,
    WrongState,
)
from .judge import (
    Backend,
    EvidenceItem,
    EvidenceReport,
    FeatureSubset,
    build_pairing,
    fairness_filter,
    judge,
    validate_subset,
)
from .phenotype import PhenotypeLabel, label_cohort, label_counts
from .stats import (
    bootstrap_stability,
    dose_response,
    kruskal_wallis,
    one_way_anova,
    time_vs_dose_matrix,
)

HYPOTHESIS_STATUSES = ("active", "retired", "confirmed")
DECISIONS = ("Converged", "ReviseHypothesis", "UpdateFeatures", "AwaitHuman", "Abort")
RUN_STATUSES = ("running", "awaiting_human", "converged", "aborted", "max_iterations")
MODES = ("auto", "human")

# consecutive iterations without a subset change before the active
# hypothesis is retired and the next pool entry takes over
STALL_LIMIT = 2


@dataclass(frozen=True)
class Hypothesis:
    id: str
    statement: str
    focal_feature: str
    parent_id: str | None = None
    revision_reason: str = ""
    status: str = "active"

    def __post_init__(self) -> None:
        if not self.statement.strip():
            raise ConfigError("hypothesis statement must be nonempty")
        if not self.focal_feature.strip():
            raise ConfigError("hypothesis focal feature must be nonempty")
        if self.status not in HYPOTHESIS_STATUSES:
            raise ConfigError(f"unknown hypothesis status {self.status!r}")


def default_pool() -> tuple[Hypothesis, ...]:
    """Built-in hypothesis pool: recovery over time, dose response,
    and a wearable signal for cohorts that carry one."""
    return (
        Hypothesis(
            id="h0",
            statement="Long COVID severity eases as follow-up time accumulates.",
            focal_feature="time",
        ),
        Hypothesis(
            id="h1",
            statement="Severity falls after each additional vaccine dose.",
            focal_feature="vaccine_dose",
        ),
        Hypothesis(
            id="h2",
            statement="Shifts in weekly breathing rate track severity changes.",
            focal_feature="weekly_breathing_rate",
        ),
    )


@dataclass(frozen=True)
class RunConfig:
    backend: BackendConfig
    mode: str = "auto"
    m: int = 5                    # independent batch draws per iteration
    quorum: float = 0.8           # aligned fraction needed to converge
    max_iterations: int = 20
    batch_size: int = 10
    k: int = 10                   # pairing plan depth
    seed: int = 0
    initial_subset: tuple[str, ...] = (PASC_GROUP,)
    pairing_weights: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.m < 1:
            raise ConfigError("m must be at least 1")
        if not 0.0 < self.quorum <= 1.0:
            raise ConfigError("quorum must lie in (0, 1]")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if not self.initial_subset:
            raise ConfigError("initial subset must be nonempty")

    def as_dict(self) -> dict:
        return {
            "backend": self.backend.as_dict(),
            "mode": self.mode,
            "m": self.m,
            "quorum": self.quorum,
            "max_iterations": self.max_iterations,
            "batch_size": self.batch_size,
            "k": self.k,
            "seed": self.seed,
            "initial_subset": list(self.initial_subset),
            "pairing_weights": list(self.pairing_weights),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            backend = BackendConfig.from_dict(raw["backend"])
        except (KeyError, TypeError) as exc:
            raise ConfigError("run config needs a 'backend' section") from exc
        known = {
            "mode", "m", "quorum", "max_iterations", "batch_size", "k",
            "seed", "initial_subset", "pairing_weights",
        }
        extra = set(raw) - known - {"backend"}
        if extra:
            raise ConfigError(f"unknown run config keys: {sorted(extra)}")
        kwargs = {key: raw[key] for key in known if key in raw}
        if "initial_subset" in kwargs:
            kwargs["initial_subset"] = tuple(kwargs["initial_subset"])
        if "pairing_weights" in kwargs:
            kwargs["pairing_weights"] = tuple(kwargs["pairing_weights"])
        return cls(backend=backend, **kwargs)


@dataclass(frozen=True)
class IterationRecord:
    """One appended log entry; hash-chained to its predecessor.

    ``subset`` is what the judge saw this iteration, ``subset_after``
    what the decision left for the next one. ``timestamp`` is a logical
    tick equal to the index.
    """

    index: int
    hypothesis_id: str
    subset: FeatureSubset
    subset_after: FeatureSubset
    pairing: dict
    batches: tuple[tuple[str, ...], ...]
    excerpts: dict[str, tuple[tuple[int, float], ...]]
    reports: tuple[EvidenceReport, ...]
    decision: str
    decided_by: str
    timestamp: int
    stall_after: int
    error: str | None = None
    human_action: dict | None = None
    activated: Hypothesis | None = None
    prev_hash: str = ""
    record_hash: str = ""


@dataclass(frozen=True)
class CycleRun:
    """Immutable snapshot of one run; every operation returns a new one."""

    run_id: str
    config: RunConfig
    pool: tuple[Hypothesis, ...]
    schema: dict[str, bool]
    hypotheses: tuple[Hypothesis, ...]   # activation history; one active while live
    pool_cursor: int                     # next pool entry to activate
    subset: FeatureSubset                # current working subset
    iterations: tuple[IterationRecord, ...]
    status: str
    stall_count: int
    final_stats: dict | None = None

    def active_hypothesis(self) -> Hypothesis:
        for h in reversed(self.hypotheses):
            if h.status == "active":
                return h
        raise WrongState("run has no active hypothesis")


HUMAN_ACTIONS = ("approve_convergence", "revise", "edit_subset", "abort")


@dataclass(frozen=True)
class HumanDecision:
    action: str
    statement: str = ""
    focal_feature: str = ""
    add: tuple[str, ...] = ()
    remove: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.action not in HUMAN_ACTIONS:
            raise ConfigError(f"unknown decision action {self.action!r}")
        if self.action == "revise":
            if not self.statement.strip() or not self.focal_feature.strip():
                raise ConfigError("revise needs a statement and a focal feature")
        if self.action == "edit_subset" and not (self.add or self.remove):
            raise ConfigError("edit_subset needs names to add or remove")

    def as_dict(self) -> dict:
        out: dict = {"action": self.action}
        if self.action == "revise":
            out["statement"] = self.statement
            out["focal_feature"] = self.focal_feature
        if self.action == "edit_subset":
            out["add"] = list(self.add)
            out["remove"] = list(self.remove)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "HumanDecision":
        try:
            action = raw["action"]
        except (KeyError, TypeError) as exc:
            raise ConfigError("decision needs an 'action'") from exc
        known = {"statement", "focal_feature", "add", "remove"}
        extra = set(raw) - known - {"action"}
        if extra:
            raise ConfigError(f"unknown decision keys: {sorted(extra)}")
        kwargs = {key: raw[key] for key in known if key in raw}
        if "add" in kwargs:
            kwargs["add"] = tuple(kwargs["add"])
        if "remove" in kwargs:
            kwargs["remove"] = tuple(kwargs["remove"])
        return cls(action=action, **kwargs)


# ---- serialization ----


def _jsonify(obj):
    """Recursive conversion to JSON-ready values; enum keys become strings,
    numpy scalars become Python numbers, non-finite floats become None."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonify(asdict(obj))
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {
            (k.value if isinstance(k, Enum) else str(k)): _jsonify(v)
            for k, v in obj.items()
        }
    if isinstance(obj, (list, tuple)):
        return [_jsonify(x) for x in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _subset_to_dict(subset: FeatureSubset) -> dict:
    return {"included": list(subset.included), "rationale": subset.rationale}


def _subset_from_dict(raw: dict) -> FeatureSubset:
    return FeatureSubset(
        included=tuple(raw["included"]), rationale=raw.get("rationale", "")
    )


def _report_to_dict(report: EvidenceReport) -> dict:
    return {
        "verdict": report.verdict,
        "evidence": [
            {"participant_ids": list(e.participant_ids), "excerpt": e.excerpt}
            for e in report.evidence
        ],
        "suggested_additions": list(report.suggested_additions),
        "suggested_removals": list(report.suggested_removals),
        "unknown_suggestions": list(report.unknown_suggestions),
        "raw_response": report.raw_response,
    }


def _report_from_dict(raw: dict) -> EvidenceReport:
    return EvidenceReport(
        verdict=raw["verdict"],
        evidence=tuple(
            EvidenceItem(
                participant_ids=tuple(e["participant_ids"]),
                excerpt=e["excerpt"],
            )
            for e in raw["evidence"]
        ),
        suggested_additions=tuple(raw["suggested_additions"]),
        suggested_removals=tuple(raw["suggested_removals"]),
        unknown_suggestions=tuple(raw["unknown_suggestions"]),
        raw_response=raw["raw_response"],
    )


def _hypothesis_to_dict(h: Hypothesis) -> dict:
    return {
        "id": h.id,
        "statement": h.statement,
        "focal_feature": h.focal_feature,
        "parent_id": h.parent_id,
        "revision_reason": h.revision_reason,
        "status": h.status,
    }


def _hypothesis_from_dict(raw: dict) -> Hypothesis:
    return Hypothesis(**raw)


def record_to_dict(record: IterationRecord) -> dict:
    return {
        "index": record.index,
        "hypothesis_id": record.hypothesis_id,
        "subset": _subset_to_dict(record.subset),
        "subset_after": _subset_to_dict(record.subset_after),
        "pairing": _jsonify(record.pairing),
        "batches": [list(b) for b in record.batches],
        "excerpts": {
            pid: [[int(d), float(v)] for d, v in series]
            for pid, series in record.excerpts.items()
        },
        "reports": [_report_to_dict(r) for r in record.reports],
        "decision": record.decision,
        "decided_by": record.decided_by,
        "timestamp": record.timestamp,
        "stall_after": record.stall_after,
        "error": record.error,
        "human_action": record.human_action,
        "activated": (
            None if record.activated is None
            else _hypothesis_to_dict(record.activated)
        ),
        "prev_hash": record.prev_hash,
        "record_hash": record.record_hash,
    }


def record_from_dict(raw: dict) -> IterationRecord:
    return IterationRecord(
        index=raw["index"],
        hypothesis_id=raw["hypothesis_id"],
        subset=_subset_from_dict(raw["subset"]),
        subset_after=_subset_from_dict(raw["subset_after"]),
        pairing=raw["pairing"],
        batches=tuple(tuple(b) for b in raw["batches"]),
        excerpts={
            pid: tuple((int(d), float(v)) for d, v in series)
            for pid, series in raw["excerpts"].items()
        },
        reports=tuple(_report_from_dict(r) for r in raw["reports"]),
        decision=raw["decision"],
        decided_by=raw["decided_by"],
        timestamp=raw["timestamp"],
        stall_after=raw["stall_after"],
        error=raw.get("error"),
        human_action=raw.get("human_action"),
        activated=(
            None if raw.get("activated") is None
            else _hypothesis_from_dict(raw["activated"])
        ),
        prev_hash=raw["prev_hash"],
        record_hash=raw["record_hash"],
    )


def run_header(run: CycleRun) -> dict:
    """Genesis payload: everything replay needs before the first record."""
    initial = run.iterations[0].subset if run.iterations else run.subset
    return {
        "run_id": run.run_id,
        "config": run.config.as_dict(),
        "pool": [_hypothesis_to_dict(h) for h in run.pool],
        "schema": {name: bool(flag) for name, flag in sorted(run.schema.items())},
        "subset": _subset_to_dict(initial),
    }


def run_to_dict(run: CycleRun) -> dict:
    """Full snapshot, used by the API layer verbatim."""
    return {
        "run_id": run.run_id,
        "config": run.config.as_dict(),
        "pool": [_hypothesis_to_dict(h) for h in run.pool],
        "schema": {name: bool(flag) for name, flag in sorted(run.schema.items())},
        "hypotheses": [_hypothesis_to_dict(h) for h in run.hypotheses],
        "pool_cursor": run.pool_cursor,
        "subset": _subset_to_dict(run.subset),
        "status": run.status,
        "stall_count": run.stall_count,
        "n_iterations": len(run.iterations),
        "has_final_stats": run.final_stats is not None,
    }


def _genesis_hash(run: CycleRun) -> str:
    return _sha256(_canonical(run_header(run)))


def _hash_record(payload: dict) -> str:
    body = {key: value for key, value in payload.items() if key != "record_hash"}
    return _sha256(payload["prev_hash"] + _canonical(body))


def verify_chain(run: CycleRun) -> None:
    """Raise ParseError if any persisted record was altered."""
    expected_prev = _genesis_hash(run)
    for n, record in enumerate(run.iterations):
        payload = record_to_dict(record)
        if record.prev_hash != expected_prev:
            raise ParseError(n, "hash chain broken: prev link mismatch")
        if _hash_record(payload) != record.record_hash:
            raise ParseError(n, "hash chain broken: record tampered")
        expected_prev = record.record_hash


# ---- run lifecycle ----


def start_run(
    cohort: Cohort,
    hypothesis_pool: Sequence[Hypothesis],
    config: RunConfig,
    run_id: str | None = None,
) -> CycleRun:
    """Create a run with the pool head active and a fairness-filtered
    initial subset. The severity series is always kept under review."""
    if not hypothesis_pool:
        raise EmptyPool("hypothesis pool is empty")
    ids = [h.id for h in hypothesis_pool]
    if len(set(ids)) != len(ids):
        raise ConfigError("hypothesis pool has duplicate ids")
    schema = cohort.schema()

    included = tuple(config.initial_subset)
    if PASC_GROUP not in included:
        included = (PASC_GROUP,) + included
    subset = fairness_filter(FeatureSubset(included=included), schema)
    if not subset.included:
        raise ConfigError("initial subset is empty after the fairness filter")
    validate_subset(subset, schema)

    pool = tuple(hypothesis_pool)
    return CycleRun(
        run_id=run_id or f"run-{uuid.uuid4().hex[:12]}",
        config=config,
        pool=pool,
        schema=dict(schema),
        hypotheses=(replace(pool[0], status="active"),),
        pool_cursor=1,
        subset=subset,
        iterations=(),
        status="running",
        stall_count=0,
        final_stats=None,
    )


def _draw_batches(
    cohort: Cohort, config: RunConfig, index: int
) -> tuple[tuple[str, ...], ...]:
    """m independent draws without replacement, seeded by (seed, index, draw)."""
    ids = sorted(cohort.ids())
    size = min(config.batch_size, len(ids))
    batches = []
    for draw in range(config.m):
        rng = np.random.default_rng([config.seed, index, draw])
        chosen = rng.choice(len(ids), size=size, replace=False)
        batches.append(tuple(ids[i] for i in sorted(chosen)))
    return tuple(batches)


def _batch_excerpts(
    cohort: Cohort, batches: Sequence[Sequence[str]]
) -> dict[str, tuple[tuple[int, float], ...]]:
    """Severity series for every sampled participant, as (day, value)
    offsets from their first observation; the review UI draws these."""
    by_id = cohort.by_id()
    out: dict[str, tuple[tuple[int, float], ...]] = {}
    for pid in sorted({pid for batch in batches for pid in batch}):
        events = by_id[pid].pasc().events
        first = events[0].timestamp
        out[pid] = tuple(
            ((e.timestamp - first).days, float(e.value)) for e in events
        )
    return out


def _apply_suggestions(
    subset: FeatureSubset,
    reports: Sequence[EvidenceReport],
    schema: dict[str, bool],
    index: int,
) -> FeatureSubset:
    """Fold the reports' ADD/REMOVE suggestions into the subset.

    Unknown and protected names are ignored; the severity series is
    never removed. Returns the same object when nothing changes.
    """
    additions: list[str] = []
    removals: set[str] = set()
    for report in reports:
        unknown = set(report.unknown_suggestions)
        for name in report.suggested_additions:
            if name in unknown or name not in schema or schema[name]:
                continue
            if name not in additions:
                additions.append(name)
        for name in report.suggested_removals:
            if name in unknown or name == PASC_GROUP:
                continue
            removals.add(name)
    kept = [n for n in subset.included if n not in removals]
    added = [n for n in additions if n not in kept and n not in removals]
    kept += added
    if tuple(kept) == subset.included:
        return subset
    notes = []
    if added:
        notes.append("added " + ", ".join(added))
    dropped = [n for n in subset.included if n in removals]
    if dropped:
        notes.append("removed " + ", ".join(dropped))
    note = f"iter {index}: " + "; ".join(notes)
    rationale = f"{subset.rationale}; {note}" if subset.rationale else note
    return fairness_filter(
        FeatureSubset(included=tuple(kept), rationale=rationale), schema
    )


def _append(run: CycleRun, fields: dict) -> IterationRecord:
    """Build a hash-chained record from json-ready field values."""
    prev = run.iterations[-1].record_hash if run.iterations else _genesis_hash(run)
    payload = dict(fields)
    payload["prev_hash"] = prev
    payload["record_hash"] = ""
    payload["record_hash"] = _hash_record(payload)
    return record_from_dict(payload)


def _base_fields(index: int, hypothesis_id: str, subset: FeatureSubset) -> dict:
    return {
        "index": index,
        "hypothesis_id": hypothesis_id,
        "subset": _subset_to_dict(subset),
        "subset_after": _subset_to_dict(subset),
        "pairing": {},
        "batches": [],
        "excerpts": {},
        "reports": [],
        "decision": "UpdateFeatures",
        "decided_by": "auto",
        "timestamp": index,
        "stall_after": 0,
        "error": None,
        "human_action": None,
        "activated": None,
    }


def _confirm_active(hypotheses: tuple[Hypothesis, ...]) -> tuple[Hypothesis, ...]:
    return tuple(
        replace(h, status="confirmed") if h.status == "active" else h
        for h in hypotheses
    )


def _retire_active(hypotheses: tuple[Hypothesis, ...]) -> tuple[Hypothesis, ...]:
    return tuple(
        replace(h, status="retired") if h.status == "active" else h
        for h in hypotheses
    )


def step(run: CycleRun, cohort: Cohort, backend: Backend) -> CycleRun:
    """Execute one iteration and return the advanced run.

    A BackendError is recorded as a failed iteration (empty reports,
    error message kept) and the run stays running; reaching the
    iteration budget flips status to max_iterations without a record.
    """
    if run.status != "running":
        raise WrongState(f"cannot step a run in status {run.status!r}")
    config = run.config
    index = len(run.iterations)
    if index >= config.max_iterations:
        return replace(run, status="max_iterations")
    hyp = run.active_hypothesis()

    plan = build_pairing(
        cohort,
        run.subset,
        k=config.k,
        batch_size=config.batch_size,
        weights=config.pairing_weights,
    )
    pairing_summary = {
        "k": plan.k,
        "batch_size": plan.batch_size,
        "pairs": [[a, b, s] for a, b, s in plan.pairs],
    }
    batches = _draw_batches(cohort, config, index)
    by_id = cohort.by_id()

    fields = _base_fields(index, hyp.id, run.subset)
    fields["pairing"] = pairing_summary
    fields["batches"] = [list(b) for b in batches]
    fields["excerpts"] = _jsonify(_batch_excerpts(cohort, batches))

    try:
        reports = tuple(
            judge(
                hyp,
                [by_id[pid] for pid in batch],
                run.subset,
                backend,
                max_context_chars=config.backend.max_context_chars,
            )
            for batch in batches
        )
    except BackendError as exc:
        fields["error"] = str(exc)
        fields["stall_after"] = run.stall_count
        record = _append(run, fields)
        return replace(run, iterations=run.iterations + (record,))

    fields["reports"] = [_report_to_dict(r) for r in reports]
    aligned = sum(r.verdict == "Aligned" for r in reports)

    if aligned / config.m >= config.quorum:
        fields["decision"] = "Converged"
        record = _append(run, fields)
        converged = replace(
            run,
            hypotheses=_confirm_active(run.hypotheses),
            iterations=run.iterations + (record,),
            status="converged",
            stall_count=0,
        )
        return finalize(converged, cohort)

    if config.mode == "human":
        fields["decision"] = "AwaitHuman"
        fields["stall_after"] = run.stall_count
        record = _append(run, fields)
        return replace(
            run,
            iterations=run.iterations + (record,),
            status="awaiting_human",
        )

    new_subset = _apply_suggestions(run.subset, reports, run.schema, index)
    if new_subset.included != run.subset.included:
        fields["decision"] = "UpdateFeatures"
        fields["subset_after"] = _subset_to_dict(new_subset)
        record = _append(run, fields)
        return replace(
            run,
            subset=new_subset,
            iterations=run.iterations + (record,),
            stall_count=0,
        )

    stall = run.stall_count + 1
    if stall < STALL_LIMIT:
        fields["stall_after"] = stall
        record = _append(run, fields)
        return replace(
            run, iterations=run.iterations + (record,), stall_count=stall
        )

    if run.pool_cursor < len(run.pool):
        nxt = replace(run.pool[run.pool_cursor], status="active")
        fields["decision"] = "ReviseHypothesis"
        fields["activated"] = _hypothesis_to_dict(nxt)
        record = _append(run, fields)
        return replace(
            run,
            hypotheses=_retire_active(run.hypotheses) + (nxt,),
            pool_cursor=run.pool_cursor + 1,
            iterations=run.iterations + (record,),
            stall_count=0,
        )

    # stalled with nothing left to try
    fields["decision"] = "Abort"
    fields["stall_after"] = stall
    record = _append(run, fields)
    return replace(
        run,
        hypotheses=_retire_active(run.hypotheses),
        iterations=run.iterations + (record,),
        status="aborted",
        stall_count=stall,
    )


def apply_human_decision(
    run: CycleRun, decision: HumanDecision, cohort: Cohort | None = None
) -> CycleRun:
    """Append the human's decision and resume or terminate the run.

    Passing the cohort lets approve_convergence finalize immediately;
    without it the caller must finalize before publishing the run.
    """
    if run.status != "awaiting_human":
        raise WrongState(f"run is {run.status!r}, not awaiting a decision")
    index = len(run.iterations)
    hyp = run.active_hypothesis()
    fields = _base_fields(index, hyp.id, run.subset)
    fields["decided_by"] = "human"
    fields["human_action"] = decision.as_dict()

    if decision.action == "approve_convergence":
        fields["decision"] = "Converged"
        record = _append(run, fields)
        converged = replace(
            run,
            hypotheses=_confirm_active(run.hypotheses),
            iterations=run.iterations + (record,),
            status="converged",
            stall_count=0,
        )
        if cohort is not None:
            return finalize(converged, cohort)
        return converged

    if decision.action == "abort":
        fields["decision"] = "Abort"
        fields["stall_after"] = run.stall_count
        record = _append(run, fields)
        return replace(
            run,
            hypotheses=_retire_active(run.hypotheses),
            iterations=run.iterations + (record,),
            status="aborted",
        )

    if decision.action == "revise":
        pool_ids = {h.id for h in run.pool}
        revisions = sum(1 for h in run.hypotheses if h.id not in pool_ids)
        base = len(run.pool) + revisions
        taken = {h.id for h in run.hypotheses} | pool_ids
        while f"h{base}" in taken:
            base += 1
        new_hyp = Hypothesis(
            id=f"h{base}",
            statement=decision.statement,
            focal_feature=decision.focal_feature,
            parent_id=hyp.id,
            revision_reason="human revision",
            status="active",
        )
        fields["decision"] = "ReviseHypothesis"
        fields["activated"] = _hypothesis_to_dict(new_hyp)
        record = _append(run, fields)
        return replace(
            run,
            hypotheses=_retire_active(run.hypotheses) + (new_hyp,),
            iterations=run.iterations + (record,),
            status="running",
            stall_count=0,
        )

    # edit_subset
    for name in decision.add:
        if name not in run.schema:
            raise UnknownFeature(f"{name!r} is not a cohort feature group")
        if run.schema[name]:
            raise ConfigError(f"{name!r} is a protected attribute")
    if PASC_GROUP in decision.remove:
        raise ConfigError("the severity series cannot be removed")
    removals = set(decision.remove)
    kept = [n for n in run.subset.included if n not in removals]
    kept += [n for n in decision.add if n not in kept]
    if not kept:
        raise ConfigError("edit would leave the subset empty")
    notes = []
    if decision.add:
        notes.append("added " + ", ".join(decision.add))
    if decision.remove:
        notes.append("removed " + ", ".join(decision.remove))
    note = f"human edit at iter {index}: " + "; ".join(notes)
    rationale = f"{run.subset.rationale}; {note}" if run.subset.rationale else note
    new_subset = fairness_filter(
        FeatureSubset(included=tuple(kept), rationale=rationale), run.schema
    )
    fields["decision"] = "UpdateFeatures"
    fields["subset_after"] = _subset_to_dict(new_subset)
    record = _append(run, fields)
    return replace(
        run,
        subset=new_subset,
        iterations=run.iterations + (record,),
        status="running",
        stall_count=0,
    )


# ---- final validation bundle ----


def _per_label_values(
    cohort: Cohort,
    labels: dict[str, PhenotypeLabel],
    value_of: Callable,
) -> list[list[float]]:
    order = (
        PhenotypeLabel.PROTECTED,
        PhenotypeLabel.RESPONDER,
        PhenotypeLabel.REFRACTORY,
    )
    grouped: dict[PhenotypeLabel, list[float]] = {lab: [] for lab in order}
    for p in cohort:
        grouped[labels[p.id]].append(value_of(p))
    return [grouped[lab] for lab in order]


def finalize(run: CycleRun, cohort: Cohort) -> CycleRun:
    """Attach the statistical validation bundle to a converged run.

    Each analysis is attempted independently; failures are recorded in
    place so a partial report is still a report.
    """
    if run.status != "converged":
        raise WrongState("finalize requires a converged run")
    labels = label_cohort(cohort)
    stats_doc: dict = {
        "hypothesis": _hypothesis_to_dict(run.hypotheses[-1]),
        "subset": _subset_to_dict(run.subset),
    }
    stats_doc.update(stats_battery(cohort, labels, seed=run.config.seed))
    return replace(run, final_stats=stats_doc)


def stats_battery(
    cohort: Cohort,
    labels: dict[str, PhenotypeLabel],
    seed: int = 0,
) -> dict:
    """Every validation analysis over a labeled cohort, as one JSON-ready
    document. Failures are recorded per analysis (partial-report contract)."""
    stats_doc: dict = {
        "label_counts": {
            lab.value: n for lab, n in label_counts(labels).items()
        },
    }

    def attempt(name: str, fn: Callable[[], object]) -> None:
        try:
            stats_doc[name] = _jsonify(fn())
        except Exception as exc:                    # partial-report contract
            stats_doc[name] = {"error": f"{type(exc).__name__}: {exc}"}

    peaks = _per_label_values(cohort, labels, lambda p: max(p.pasc().values()))
    initials = _per_label_values(
        cohort, labels, lambda p: p.pasc().events[0].value
    )
    doses = _per_label_values(
        cohort,
        labels,
        lambda p: float(len(p.groups["vaccine_dose"].events))
        if "vaccine_dose" in p.groups else 0.0,
    )
    attempt("kruskal_peaks", lambda: kruskal_wallis(peaks))
    attempt("anova_initial", lambda: one_way_anova(initials))
    attempt("anova_doses", lambda: one_way_anova(doses))
    attempt(
        "stability",
        lambda: bootstrap_stability(cohort, label_cohort, seed=seed),
    )

    dose_doc: dict = {}
    for lab in (
        PhenotypeLabel.PROTECTED,
        PhenotypeLabel.RESPONDER,
        PhenotypeLabel.REFRACTORY,
    ):
        try:
            dose_doc[lab.value] = _jsonify(dose_response(cohort, labels, lab))
        except Exception as exc:
            dose_doc[lab.value] = {"error": f"{type(exc).__name__}: {exc}"}
    stats_doc["dose_response"] = dose_doc

    attempt("time_vs_dose_matrix", lambda: time_vs_dose_matrix(cohort, labels))
    attempt("lmm", lambda: fit_lmm(cohort))
    attempt("lctm", lambda: fit_lctm(cohort, n_classes=3, seed=seed))
    return stats_doc


# ---- persistence ----


class RunStore:
    """Append-only JSONL log per run plus a final-stats JSON document.

    Writes take an exclusive flock and verify the expected record index,
    so two writers can never interleave or double-append.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def run_path(self, run_id: str) -> Path:
        return self.root / f"{run_id}.jsonl"

    def stats_path(self, run_id: str) -> Path:
        return self.root / f"{run_id}.stats.json"

    @contextmanager
    def lock(self, run_id: str) -> Iterator[None]:
        path = self.root / f"{run_id}.lock"
        with open(path, "w") as handle:
            try:
                fcntl.flock(handle, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except BlockingIOError as exc:
                raise RunLocked(f"run {run_id} is locked by another writer") from exc
            try:
                yield
            finally:
                fcntl.flock(handle, fcntl.LOCK_UN)

    def list_runs(self) -> list[str]:
        # other jsonl files may share the directory (cohorts, exports);
        # only files opening with a run header are runs
        found = []
        for path in self.root.glob("*.jsonl"):
            with open(path, encoding="utf-8") as handle:
                head = handle.read(20)
            if head.startswith('{"type": "header"'):
                found.append(path.stem)
        return sorted(found)

    def exists(self, run_id: str) -> bool:
        return self.run_path(run_id).exists()

    def create(self, run: CycleRun) -> None:
        with self.lock(run.run_id):
            path = self.run_path(run.run_id)
            if path.exists():
                raise ConfigError(f"run {run.run_id} already exists")
            lines = [json.dumps({"type": "header", **run_header(run)})]
            lines += [
                json.dumps(record_to_dict(r)) for r in run.iterations
            ]
            path.write_text("\n".join(lines) + "\n")

    def append_record(self, run_id: str, record: IterationRecord) -> None:
        with self.lock(run_id):
            path = self.run_path(run_id)
            with open(path) as handle:
                existing = sum(1 for _ in handle) - 1
            if existing != record.index:
                raise RunLocked(
                    f"log already has {existing} records; "
                    f"refusing to append index {record.index}"
                )
            with open(path, "a") as handle:
                handle.write(json.dumps(record_to_dict(record)) + "\n")

    def write_stats(self, run_id: str, stats: dict) -> None:
        with self.lock(run_id):
            self.stats_path(run_id).write_text(
                json.dumps(stats, indent=2, sort_keys=True) + "\n"
            )

    def read_stats(self, run_id: str) -> dict | None:
        path = self.stats_path(run_id)
        if not path.exists():
            return None
        return json.loads(path.read_text())

    def load(self, run_id: str) -> CycleRun:
        """Fold the log back into a run, verifying the hash chain."""
        path = self.run_path(run_id)
        if not path.exists():
            raise FileNotFoundError(f"no run log for {run_id}")
        lines = path.read_text().splitlines()
        if not lines:
            raise ParseError(0, "empty run log")
        header = json.loads(lines[0])
        if header.pop("type", None) != "header":
            raise ParseError(0, "first line is not a run header")
        config = RunConfig.from_dict(header["config"])
        pool = tuple(_hypothesis_from_dict(h) for h in header["pool"])
        run = CycleRun(
            run_id=header["run_id"],
            config=config,
            pool=pool,
            schema={k: bool(v) for k, v in header["schema"].items()},
            hypotheses=(pool[0],),
            pool_cursor=1,
            subset=_subset_from_dict(header["subset"]),
            iterations=(),
            status="running",
            stall_count=0,
            final_stats=None,
        )
        expected_prev = _genesis_hash(run)
        for n, line in enumerate(lines[1:], start=1):
            record = record_from_dict(json.loads(line))
            payload = record_to_dict(record)
            if record.prev_hash != expected_prev:
                raise ParseError(n, "hash chain broken: prev link mismatch")
            if _hash_record(payload) != record.record_hash:
                raise ParseError(n, "hash chain broken: record tampered")
            expected_prev = record.record_hash
            run = _fold(run, record)
        if run.status == "converged":
            run = replace(run, final_stats=self.read_stats(run_id))
        return run


def _fold(run: CycleRun, record: IterationRecord) -> CycleRun:
    """Apply one persisted record to the in-memory state."""
    hypotheses = run.hypotheses
    cursor = run.pool_cursor
    status = run.status
    if record.decision == "Converged":
        hypotheses = _confirm_active(hypotheses)
        status = "converged"
    elif record.decision == "Abort":
        hypotheses = _retire_active(hypotheses)
        status = "aborted"
    elif record.decision == "ReviseHypothesis":
        hypotheses = _retire_active(hypotheses) + (record.activated,)
        if record.decided_by == "auto":
            cursor += 1
        status = "running"
    elif record.decision == "AwaitHuman":
        status = "awaiting_human"
    else:
        status = "running"
    iterations = run.iterations + (record,)
    if status == "running" and len(iterations) >= run.config.max_iterations:
        status = "max_iterations"
    return replace(
        run,
        hypotheses=hypotheses,
        pool_cursor=cursor,
        subset=record.subset_after,
        iterations=iterations,
        status=status,
        stall_count=record.stall_after,
    )


# ---- orchestration ----


def run_cycle(
    cohort: Cohort,
    pool: Sequence[Hypothesis],
    config: RunConfig,
    backend: Backend | None = None,
    store: RunStore | None = None,
    run_id: str | None = None,
) -> CycleRun:
    """Drive a run until it needs a human or terminates.

    Auto mode runs to convergence, abort, or the iteration budget;
    human mode returns at the first AwaitHuman. With a store attached,
    every record is persisted as it is decided.
    """
    backend = backend or build_backend(config.backend, cohort)
    run = start_run(cohort, pool, config, run_id=run_id)
    if store is not None:
        store.create(run)
    return continue_run(run, cohort, backend, store)


def continue_run(
    run: CycleRun,
    cohort: Cohort,
    backend: Backend | None = None,
    store: RunStore | None = None,
) -> CycleRun:
    """Step a run until it leaves the running state, persisting as it goes."""
    backend = backend or build_backend(run.config.backend, cohort)
    while run.status == "running":
        before = len(run.iterations)
        run = step(run, cohort, backend)
        if store is not None and len(run.iterations) > before:
            store.append_record(run.run_id, run.iterations[-1])
    if store is not None and run.final_stats is not None:
        store.write_stats(run.run_id, run.final_stats)
    return run


def resume_run(
    store: RunStore,
    run_id: str,
    cohort: Cohort,
    backend: Backend | None = None,
) -> CycleRun:
    """Reload a persisted run and keep going.

    A run that converged before its stats were written gets finalized
    now, so loaded converged runs always carry final_stats.
    """
    run = store.load(run_id)
    if run.status == "converged" and run.final_stats is None:
        run = finalize(run, cohort)
        store.write_stats(run_id, run.final_stats)
        return run
    if run.status != "running":
        return run
    return continue_run(run, cohort, backend, store)
