"""Run specification files.

A run spec is one JSON document that names the cohort, the hypothesis
pool, and the engine configuration. The CLI reads it from disk; the
HTTP service accepts the same document as a request body, so a run is
launchable from either side without translation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .cohort import Cohort, load_cohort
from .engine import Hypothesis, RunConfig, default_pool
from .errors import ConfigError

_SPEC_KEYS = {"cohort", "run_id", "data_dir", "pool"}


@dataclass(frozen=True)
class RunSpec:
    cohort_path: Path
    config: RunConfig
    pool: tuple[Hypothesis, ...]
    run_id: str | None = None
    data_dir: Path | None = None

    def load_cohort(self) -> Cohort:
        fmt = "csv" if self.cohort_path.suffix == ".csv" else "jsonl"
        return load_cohort(self.cohort_path, format=fmt)


def _parse_pool(raw: object) -> tuple[Hypothesis, ...]:
    if raw is None:
        return default_pool()
    if not isinstance(raw, list):
        raise ConfigError("pool must be a list of hypothesis objects")
    pool = []
    for n, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise ConfigError(f"pool entry {n} is not an object")
        extra = set(entry) - {"id", "statement", "focal_feature"}
        if extra:
            raise ConfigError(f"pool entry {n} has unknown keys: {sorted(extra)}")
        try:
            pool.append(
                Hypothesis(
                    id=str(entry["id"]),
                    statement=str(entry["statement"]),
                    focal_feature=str(entry["focal_feature"]),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"pool entry {n} is missing {exc}") from exc
    return tuple(pool)


def parse_run_spec(doc: dict, base_dir: str | Path = ".") -> RunSpec:
    """Validate a spec document. Relative paths resolve against base_dir."""
    if not isinstance(doc, dict):
        raise ConfigError("run spec must be a JSON object")
    base = Path(base_dir)
    if "cohort" not in doc:
        raise ConfigError("run spec is missing 'cohort'")
    cohort_path = Path(doc["cohort"])
    if not cohort_path.is_absolute():
        cohort_path = base / cohort_path
    run_id = doc.get("run_id")
    if run_id is not None and (not isinstance(run_id, str) or not run_id.strip()):
        raise ConfigError("run_id must be a non-empty string")
    # run ids become file names; keep them path-safe
    if run_id is not None and any(c in run_id for c in "/\\"):
        raise ConfigError("run_id must not contain path separators")
    data_dir = doc.get("data_dir")
    if data_dir is not None:
        data_dir = Path(data_dir)
        if not data_dir.is_absolute():
            data_dir = base / data_dir
    pool = _parse_pool(doc.get("pool"))
    config = RunConfig.from_dict(
        {k: v for k, v in doc.items() if k not in _SPEC_KEYS}
    )
    return RunSpec(
        cohort_path=cohort_path,
        config=config,
        pool=pool,
        run_id=run_id,
        data_dir=data_dir,
    )


def load_run_spec(path: str | Path) -> RunSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc.msg}") from exc
    return parse_run_spec(doc, base_dir=path.parent)
