"""Model-facing layer: similarity, pairing, prompts, and verdict parsing.

Everything here is pure and deterministic given its inputs; the only
nondeterminism lives behind the Backend protocol. Prompts render each
participant as a fixed-format event table so that both real models and
the deterministic oracle stand-in can read them.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from itertools import combinations, islice
from typing import Iterable, Protocol, Sequence, runtime_checkable

from .cohort import Cohort, ParticipantRecord
from .errors import (
    BackendError,
    CohortTooSmall,
    ConfigError,
    ContextOverflow,
    UnknownFeature,
)

# pseudo-feature understood by the oracle: days since a participant's
# first recorded score observation
TIME_FEATURE = "time"

DEFAULT_MAX_CONTEXT_CHARS = 100_000


@runtime_checkable
class Backend(Protocol):
    def complete(self, prompt: str) -> str: ...


@runtime_checkable
class EmbeddingBackend(Protocol):
    def embed(self, text: str) -> Sequence[float]: ...


class HypothesisLike(Protocol):
    statement: str
    focal_feature: str


@dataclass(frozen=True)
class FeatureSubset:
    """Ordered feature-group names under review, with a running rationale."""

    included: tuple[str, ...]
    rationale: str = ""

    def __post_init__(self) -> None:
        if len(set(self.included)) != len(self.included):
            raise ConfigError("subset contains duplicate feature names")


@dataclass(frozen=True)
class PairingPlan:
    pairs: tuple[tuple[str, str, float], ...]   # (id_a, id_b, similarity) desc
    k: int
    batch_size: int


@dataclass(frozen=True)
class EvidenceItem:
    participant_ids: tuple[str, ...]
    excerpt: str


@dataclass(frozen=True)
class EvidenceReport:
    verdict: str                                 # Aligned | NotAligned | Inconclusive
    evidence: tuple[EvidenceItem, ...]
    suggested_additions: tuple[str, ...]
    suggested_removals: tuple[str, ...]
    unknown_suggestions: tuple[str, ...]         # suggestions not in the schema
    raw_response: str


VERDICTS = ("Aligned", "NotAligned", "Inconclusive")


def validate_subset(subset: FeatureSubset, schema: dict[str, bool]) -> None:
    """Names must exist in the schema; protected groups are not allowed."""
    for name in subset.included:
        if name not in schema:
            raise UnknownFeature(f"{name!r} is not a cohort feature group")
        if schema[name]:
            raise ConfigError(f"{name!r} is a protected attribute")


def _count_profile(p: ParticipantRecord, names: Sequence[str]) -> tuple[int, ...]:
    out = []
    for name in names:
        group = p.groups.get(name)
        out.append(0 if group is None else len(group.events))
    return tuple(out)


def statistical_similarity(
    a: ParticipantRecord,
    b: ParticipantRecord,
    subset: FeatureSubset,
    schema: dict[str, bool] | None = None,
) -> float:
    """1 / (1 + sum of absolute event-count differences).

    Counts only included, non-protected groups; a missing group counts
    zero. Pass the cohort schema to get UnknownFeature on bad names.
    """
    if schema is not None:
        validate_subset(subset, schema)
    names = _counting_names(subset, a, b)
    pa = _count_profile(a, names)
    pb = _count_profile(b, names)
    return 1.0 / (1.0 + sum(abs(x - y) for x, y in zip(pa, pb)))


def _counting_names(
    subset: FeatureSubset, *records: ParticipantRecord
) -> list[str]:
    names = []
    for name in subset.included:
        protected = any(
            r.groups[name].protected for r in records if name in r.groups
        )
        if not protected:
            names.append(name)
    return names


def _as_vector(raw: object) -> list[float]:
    if isinstance(raw, (str, bytes)) or not isinstance(raw, Iterable):
        raise BackendError("embedding backend returned a non-vector")
    try:
        vec = [float(x) for x in raw]
    except (TypeError, ValueError) as exc:
        raise BackendError("embedding vector has non-numeric entries") from exc
    if not vec or not all(math.isfinite(x) for x in vec):
        raise BackendError("embedding vector empty or non-finite")
    return vec


def semantic_similarity(
    a: ParticipantRecord,
    b: ParticipantRecord,
    subset: FeatureSubset,
    backend: EmbeddingBackend,
) -> float:
    """Cosine similarity of embeddings of the two rendered trajectories."""
    try:
        va = _as_vector(backend.embed(render_trajectory(a, subset)))
        vb = _as_vector(backend.embed(render_trajectory(b, subset)))
    except BackendError:
        raise
    except Exception as exc:
        raise BackendError(f"embedding backend failed: {exc}") from exc
    if len(va) != len(vb):
        raise BackendError(
            f"embedding dimensions differ: {len(va)} vs {len(vb)}"
        )
    na = math.sqrt(sum(x * x for x in va))
    nb = math.sqrt(sum(x * x for x in vb))
    if na == 0.0 or nb == 0.0:
        raise BackendError("embedding vector has zero norm")
    cos = sum(x * y for x, y in zip(va, vb)) / (na * nb)
    return max(-1.0, min(1.0, cos))


# Above this cohort size, pairing switches from the exhaustive scan to
# count-bucket candidate pruning.
EXHAUSTIVE_PAIRING_LIMIT = 2000


def build_pairing(
    cohort: Cohort,
    subset: FeatureSubset,
    k: int,
    batch_size: int = 10,
    weights: tuple[float, float] = (1.0, 0.0),
    embedding: EmbeddingBackend | None = None,
) -> PairingPlan:
    """Top-k most similar unordered participant pairs.

    Similarity is the weighted mean of the count-based metric and, when
    an embedding backend is supplied, the semantic metric. Exhaustive up
    to EXHAUSTIVE_PAIRING_LIMIT participants; beyond that, candidates
    are pruned by grouping identical count profiles into buckets and
    walking bucket pairs in increasing count distance. The pruned path
    is exact for the count metric alone and approximate when the
    semantic weight is nonzero, since only pruned candidates get scored.
    Ties break on the lexicographic (id_a, id_b) pair, which also makes
    the result independent of participant input order.
    """
    w_stat, w_sem = weights
    if w_stat < 0 or w_sem < 0 or w_stat + w_sem <= 0:
        raise ConfigError("weights must be nonnegative with a positive sum")
    if k < 1:
        raise ConfigError("k must be at least 1")
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    if w_sem > 0 and embedding is None:
        raise ConfigError("semantic weight set but no embedding backend given")
    if len(cohort) < 2:
        raise CohortTooSmall("pairing needs at least two participants")
    schema = cohort.schema()
    validate_subset(subset, schema)

    by_id = cohort.by_id()
    ids = sorted(by_id)
    names = [n for n in subset.included if not schema[n]]
    profiles = {pid: _count_profile(by_id[pid], names) for pid in ids}

    def score(pid_a: str, pid_b: str) -> float:
        dist = sum(abs(x - y) for x, y in zip(profiles[pid_a], profiles[pid_b]))
        sim = 1.0 / (1.0 + dist)
        if w_sem == 0:
            return sim
        sem = semantic_similarity(by_id[pid_a], by_id[pid_b], subset, embedding)
        return (w_stat * sim + w_sem * sem) / (w_stat + w_sem)

    if len(ids) <= EXHAUSTIVE_PAIRING_LIMIT:
        candidates = combinations(ids, 2)
    else:
        candidates = _pruned_candidates(ids, profiles, k)
    scored = [(a, b, score(a, b)) for a, b in candidates]
    scored.sort(key=lambda t: (-t[2], t[0], t[1]))
    return PairingPlan(pairs=tuple(scored[:k]), k=k, batch_size=batch_size)


def _pruned_candidates(
    ids: list[str],
    profiles: dict[str, tuple[int, ...]],
    k: int,
) -> list[tuple[str, str]]:
    """Candidate pairs from count-profile buckets, nearest buckets first."""
    buckets: dict[tuple[int, ...], list[str]] = {}
    for pid in ids:                       # ids sorted, so buckets stay sorted
        buckets.setdefault(profiles[pid], []).append(pid)
    keys = sorted(buckets)
    levels: dict[int, list[tuple[str, str]]] = {}
    for i, p in enumerate(keys):
        for q in keys[i:]:
            dist = sum(abs(x - y) for x, y in zip(p, q))
            levels.setdefault(dist, []).append((p, q))

    out: list[tuple[str, str]] = []
    for dist in sorted(levels):
        level_pairs: list[tuple[str, str]] = []
        for p, q in levels[dist]:
            if p == q:
                level_pairs.extend(islice(combinations(buckets[p], 2), k))
            else:
                # the k lexicographically smallest cross pairs can only
                # involve each side's smallest ids
                left = buckets[p][: k + 1]
                right = buckets[q][: k + 1]
                cross = sorted(
                    (a, b) if a < b else (b, a) for a in left for b in right
                )
                level_pairs.extend(cross[:k])
        level_pairs.sort()
        out.extend(level_pairs[: k - len(out)])
        if len(out) >= k:
            break
    return out


def fairness_filter(
    subset: FeatureSubset, schema: dict[str, bool]
) -> FeatureSubset:
    """Drop protected groups, noting the removal in the rationale.

    Idempotent; an all-protected subset comes back empty, which the
    engine treats as a hard error.
    """
    removed = [n for n in subset.included if schema.get(n, False)]
    if not removed:
        return subset
    kept = tuple(n for n in subset.included if not schema.get(n, False))
    note = "removed protected groups: " + ", ".join(removed)
    rationale = f"{subset.rationale}; {note}" if subset.rationale else note
    return replace(subset, included=kept, rationale=rationale)


# ---- prompt rendering ----

_TABLE_HEADER = "date | feature | value"


def _format_value(value: float) -> str:
    return f"{value:g}"


def _subset_rows(
    p: ParticipantRecord, subset: FeatureSubset
) -> list[tuple[str, str, str]]:
    rows = []
    for name in subset.included:
        group = p.groups.get(name)
        if group is None or group.protected:
            continue
        for e in group.events:
            rows.append((e.timestamp.isoformat(), name, _format_value(e.value)))
    rows.sort()
    return rows


def render_trajectory(p: ParticipantRecord, subset: FeatureSubset) -> str:
    """One participant's subset-restricted event table."""
    lines = [f"PARTICIPANT {p.id}", _TABLE_HEADER]
    lines += [" | ".join(row) for row in _subset_rows(p, subset)]
    return "\n".join(lines)


def _render_sections(
    batch: Sequence[ParticipantRecord],
    subset: FeatureSubset,
    dropped: dict[str, int],
    kept_rows: dict[str, list[tuple[str, str, str]]],
) -> str:
    sections = []
    for p in batch:
        lines = [f"PARTICIPANT {p.id}", _TABLE_HEADER]
        if dropped.get(p.id):
            lines.append(f"[omitted {dropped[p.id]} earliest rows]")
        lines += [" | ".join(row) for row in kept_rows[p.id]]
        sections.append("\n".join(lines))
    return "\n\n".join(sections)


_PROMPT_INTRO = (
    "You are auditing longitudinal health records against a hypothesis.\n"
    "Each participant's observations are listed as a table with columns\n"
    "date | feature | value, oldest first.\n"
)

_PROMPT_INSTRUCTIONS = (
    "Reply with exactly this structure:\n"
    "VERDICT: ALIGNED or NOT_ALIGNED\n"
    "EVIDENCE:\n"
    "- one bullet per supporting observation, naming participant ids\n"
    "ADD: feature names worth adding, comma separated (optional)\n"
    "REMOVE: feature names worth dropping, comma separated (optional)\n"
)


def render_prompt(
    hypothesis: HypothesisLike,
    batch: Sequence[ParticipantRecord],
    subset: FeatureSubset,
    max_chars: int = DEFAULT_MAX_CONTEXT_CHARS,
) -> str:
    """Deterministic prompt; oldest rows drop first when over budget.

    Every participant keeps at least its newest row; raises
    ContextOverflow if the prompt still cannot fit.
    """
    if not batch:
        raise ConfigError("batch must be nonempty")
    kept: dict[str, list[tuple[str, str, str]]] = {
        p.id: _subset_rows(p, subset) for p in batch
    }
    dropped: dict[str, int] = {p.id: 0 for p in batch}
    # belt and braces: a protected name never appears, even if the
    # subset was not fairness-filtered upstream
    visible = [
        name
        for name in subset.included
        if not any(
            name in p.groups and p.groups[name].protected for p in batch
        )
    ]

    def assemble() -> str:
        return "\n".join(
            [
                _PROMPT_INTRO,
                f"HYPOTHESIS: {hypothesis.statement}",
                f"FOCAL FEATURE: {hypothesis.focal_feature}",
                f"FEATURES UNDER REVIEW: {', '.join(visible)}",
                "",
                _render_sections(batch, subset, dropped, kept),
                "",
                _PROMPT_INSTRUCTIONS,
            ]
        )

    text = assemble()
    while len(text) > max_chars:
        oldest_pid = None
        oldest_row = None
        for p in batch:
            rows = kept[p.id]
            if len(rows) < 2:        # never drop a participant's last row
                continue
            if oldest_row is None or (rows[0], p.id) < (oldest_row, oldest_pid):
                oldest_pid, oldest_row = p.id, rows[0]
        if oldest_pid is None:
            raise ContextOverflow(
                f"prompt needs {len(text)} chars, budget is {max_chars}"
            )
        kept[oldest_pid].pop(0)
        dropped[oldest_pid] += 1
        text = assemble()
    return text


# ---- verdict parsing ----

_VERDICT_RE = re.compile(r"^\s*VERDICT:\s*(\S+)\s*$", re.MULTILINE)
_EVIDENCE_RE = re.compile(r"^\s*EVIDENCE:\s*$", re.MULTILINE)
_SUGGEST_RE = re.compile(r"^\s*(ADD|REMOVE):\s*(.*)$", re.MULTILINE)
_TOKEN_RE = re.compile(r"[A-Za-z0-9_\-]+")


def _bullet_items(raw: str, known_ids: Sequence[str]) -> list[EvidenceItem]:
    match = _EVIDENCE_RE.search(raw)
    if match is None:
        return []
    items = []
    known = set(known_ids)
    for line in raw[match.end():].splitlines():
        stripped = line.strip()
        if _SUGGEST_RE.match(line) or stripped.startswith("VERDICT:"):
            break
        if not stripped.startswith("- "):
            continue
        excerpt = stripped[2:].strip()
        ids = []
        for token in _TOKEN_RE.findall(excerpt):
            if token in known and token not in ids:
                ids.append(token)
        items.append(EvidenceItem(participant_ids=tuple(ids), excerpt=excerpt))
    return items


def _parse_names(raw_names: str) -> tuple[str, ...]:
    return tuple(n.strip() for n in raw_names.split(",") if n.strip())


def parse_verdict(
    raw: str,
    known_ids: Sequence[str] = (),
    schema_names: Iterable[str] | None = None,
) -> EvidenceReport:
    """Parse the structured verdict block out of a model response.

    Anything that fails the grammar collapses to Inconclusive; the raw
    response is always kept verbatim. An ALIGNED claim with no evidence
    bullets is also Inconclusive.
    """
    verdict = "Inconclusive"
    match = _VERDICT_RE.search(raw)
    if match is not None:
        verdict = {"ALIGNED": "Aligned", "NOT_ALIGNED": "NotAligned"}.get(
            match.group(1), "Inconclusive"
        )
    evidence = tuple(_bullet_items(raw, known_ids))
    if verdict == "Aligned" and not evidence:
        verdict = "Inconclusive"
    additions: tuple[str, ...] = ()
    removals: tuple[str, ...] = ()
    for m in _SUGGEST_RE.finditer(raw):
        if m.group(1) == "ADD":
            additions += _parse_names(m.group(2))
        else:
            removals += _parse_names(m.group(2))
    unknown: tuple[str, ...] = ()
    if schema_names is not None:
        known_names = set(schema_names)
        unknown = tuple(
            n for n in additions + removals if n not in known_names
        )
    return EvidenceReport(
        verdict=verdict,
        evidence=evidence,
        suggested_additions=additions,
        suggested_removals=removals,
        unknown_suggestions=unknown,
        raw_response=raw,
    )


def judge(
    hypothesis: HypothesisLike,
    batch: Sequence[ParticipantRecord],
    subset: FeatureSubset,
    backend: Backend,
    max_context_chars: int = DEFAULT_MAX_CONTEXT_CHARS,
) -> EvidenceReport:
    """Render the batch, ask the backend, parse the structured verdict."""
    prompt = render_prompt(hypothesis, batch, subset, max_chars=max_context_chars)
    raw = backend.complete(prompt)
    schema_names = set()
    for p in batch:
        schema_names.update(p.groups)
    return parse_verdict(raw, known_ids=[p.id for p in batch],
                         schema_names=schema_names)
