"""Pluggable model backends: scripted replay, HTTP chat, and an oracle.

The oracle is a deterministic stand-in for a language model. It reads
the batch ids and focal feature back out of the rendered prompt, then
checks the planted correlation structure directly against cohort data,
so end-to-end runs need no model server.
"""
from __future__ import annotations

import os
import re
import time
import zlib
from dataclasses import dataclass
from typing import Callable, Sequence

import requests

from .cohort import Cohort, PASC_GROUP
from .errors import BackendError, ConfigError
from .judge import TIME_FEATURE

BACKEND_KINDS = ("http_chat", "scripted", "oracle")

DEFAULT_TIMEOUT_S = 120.0
DEFAULT_MAX_CONTEXT_CHARS = 100_000


@dataclass(frozen=True)
class BackendConfig:
    kind: str
    endpoint: str | None = None
    model_name: str = ""
    auth_env: str | None = None          # name of the env var holding the token
    timeout_s: float = DEFAULT_TIMEOUT_S
    max_context_chars: int = DEFAULT_MAX_CONTEXT_CHARS
    threshold_r: float = 0.3             # oracle alignment threshold
    responses: tuple[str, ...] = ()      # scripted replies, in order

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http_chat" and not self.endpoint:
            raise ConfigError("http_chat backend requires an endpoint")
        if self.timeout_s <= 0:
            raise ConfigError("timeout must be positive")
        if self.max_context_chars < 1:
            raise ConfigError("max_context_chars must be positive")
        if not 0.0 < self.threshold_r < 1.0:
            raise ConfigError("threshold_r must lie in (0, 1)")

    def as_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.kind == "http_chat":
            out.update(
                endpoint=self.endpoint,
                model_name=self.model_name,
                auth_env=self.auth_env,
                timeout_s=self.timeout_s,
            )
        if self.kind == "oracle":
            out["threshold_r"] = self.threshold_r
        if self.kind == "scripted":
            out["responses"] = list(self.responses)
        out["max_context_chars"] = self.max_context_chars
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "BackendConfig":
        try:
            kind = raw["kind"]
        except (KeyError, TypeError) as exc:
            raise ConfigError("backend config needs a 'kind'") from exc
        known = {
            "endpoint", "model_name", "auth_env", "timeout_s",
            "max_context_chars", "threshold_r", "responses",
        }
        extra = set(raw) - known - {"kind"}
        if extra:
            raise ConfigError(f"unknown backend config keys: {sorted(extra)}")
        kwargs = {k: raw[k] for k in known if k in raw}
        if "responses" in kwargs:
            kwargs["responses"] = tuple(kwargs["responses"])
        return cls(kind=kind, **kwargs)


class ScriptedBackend:
    """Replays canned responses in order; errors when the script runs out."""

    def __init__(self, responses: Sequence[str]):
        self._responses = list(responses)
        self.prompts: list[str] = []     # kept for test introspection

    def complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if not self._responses:
            raise BackendError("scripted backend has no responses left")
        return self._responses.pop(0)


class HttpChatBackend:
    """Chat-completion wire format over HTTP.

    Sends {model, messages:[{role, content}]} and reads
    choices[0].message.content back. Failed calls retry with
    exponential backoff before surfacing BackendError.
    """

    def __init__(
        self,
        config: BackendConfig,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
        backoff_s: tuple[float, ...] = (1.0, 2.0),
    ):
        if config.kind != "http_chat":
            raise ConfigError("HttpChatBackend needs an http_chat config")
        self._config = config
        self._session = session or requests.Session()
        self._sleep = sleep
        self._backoff = backoff_s

    def _call(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self._config.auth_env:
            token = os.environ.get(self._config.auth_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        response = self._session.post(
            self._config.endpoint,
            json={
                "model": self._config.model_name,
                "messages": [{"role": "user", "content": prompt}],
            },
            headers=headers,
            timeout=self._config.timeout_s,
        )
        if response.status_code != 200:
            raise BackendError(
                f"backend returned HTTP {response.status_code}: "
                f"{response.text[:200]}"
            )
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed chat response: {exc}") from exc
        if not isinstance(content, str):
            raise BackendError("chat response content is not text")
        return content

    def complete(self, prompt: str) -> str:
        last: Exception | None = None
        for attempt in range(len(self._backoff) + 1):
            try:
                return self._call(prompt)
            except (requests.RequestException, BackendError) as exc:
                last = exc
                if attempt < len(self._backoff):
                    self._sleep(self._backoff[attempt])
        raise BackendError(
            f"backend failed after {len(self._backoff) + 1} attempts: {last}"
        ) from last


_FOCAL_RE = re.compile(r"^FOCAL FEATURE: (.+)$", re.MULTILINE)
_INCLUDED_RE = re.compile(r"^FEATURES UNDER REVIEW: (.*)$", re.MULTILINE)
_PARTICIPANT_RE = re.compile(r"^PARTICIPANT (\S+)$", re.MULTILINE)


def _pearson_or_zero(xs: list[float], ys: list[float]) -> tuple[float, int]:
    n = len(xs)
    if n < 3:
        return 0.0, n
    mx = sum(xs) / n
    my = sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    if sxx == 0.0 or syy == 0.0:
        return 0.0, n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    return sxy / (sxx * syy) ** 0.5, n


class OracleBackend:
    """Judges alignment from planted correlations instead of a model.

    For a schema feature, each of its events pairs with the score in
    force when the event happened (the latest score at or before the
    event date); for the pseudo-feature "time", each score observation
    pairs with its day offset from the participant's first observation.
    The verdict is ALIGNED when the pooled batch correlation of the
    focal feature clears the threshold; otherwise the strongest
    not-yet-included feature is suggested as an addition.
    """

    def __init__(self, cohort: Cohort, threshold_r: float = 0.3):
        if not 0.0 < threshold_r < 1.0:
            raise ConfigError("threshold_r must lie in (0, 1)")
        self._by_id = cohort.by_id()
        self._schema = cohort.schema()
        self._threshold = threshold_r

    def _feature_pairs(self, pid: str, name: str) -> list[tuple[float, float]]:
        p = self._by_id.get(pid)
        if p is None or PASC_GROUP not in p.groups:
            return []
        if name == TIME_FEATURE and TIME_FEATURE not in p.groups:
            events = p.pasc().events
            first = events[0].timestamp
            return [
                (float((e.timestamp - first).days), e.value) for e in events
            ]
        group = p.groups.get(name)
        if group is None:
            return []
        pairs = []
        for e in group.events:
            if p.cumulative_count_at(PASC_GROUP, e.timestamp) > 0:
                pairs.append((e.value, p.last_value_at(PASC_GROUP, e.timestamp)))
        return pairs

    def _batch_r(self, ids: Sequence[str], name: str) -> tuple[float, int]:
        xs: list[float] = []
        ys: list[float] = []
        for pid in ids:
            for x, y in self._feature_pairs(pid, name):
                xs.append(x)
                ys.append(y)
        return _pearson_or_zero(xs, ys)

    def complete(self, prompt: str) -> str:
        focal_match = _FOCAL_RE.search(prompt)
        included_match = _INCLUDED_RE.search(prompt)
        ids = _PARTICIPANT_RE.findall(prompt)
        focal = focal_match.group(1).strip() if focal_match else ""
        included = set()
        if included_match:
            included = {
                n.strip() for n in included_match.group(1).split(",") if n.strip()
            }
        r, n = self._batch_r(ids, focal)
        id_list = ", ".join(ids)
        if abs(r) >= self._threshold:
            return (
                "VERDICT: ALIGNED\n"
                "EVIDENCE:\n"
                f"- {id_list}: {focal} tracks the concurrent score, "
                f"r={r:+.3f} over {n} paired observations\n"
            )
        lines = [
            "VERDICT: NOT_ALIGNED",
            "EVIDENCE:",
            f"- {id_list}: {focal} does not track the concurrent score, "
            f"r={r:+.3f} over {n} paired observations",
        ]
        candidates = [
            name
            for name, protected in self._schema.items()
            if not protected and name not in included and name != focal
        ]
        if candidates:
            scored = {name: self._batch_r(ids, name)[0] for name in candidates}
            best = min(candidates, key=lambda nm: (-abs(scored[nm]), nm))
            lines.append(f"ADD: {best}")
        return "\n".join(lines) + "\n"


class HashingEmbedding:
    """Deterministic bag-of-words embedding for offline semantic scoring."""

    def __init__(self, dim: int = 64):
        if dim < 2:
            raise ConfigError("embedding dimension must be at least 2")
        self._dim = dim

    def embed(self, text: str) -> list[float]:
        vec = [0.0] * self._dim
        for token in re.findall(r"[a-z0-9]+", text.lower()):
            vec[zlib.crc32(token.encode()) % self._dim] += 1.0
        norm = sum(x * x for x in vec) ** 0.5
        if norm == 0.0:
            return vec
        return [x / norm for x in vec]


def build_backend(config: BackendConfig, cohort: Cohort | None = None):
    """Instantiate the backend a config describes."""
    if config.kind == "scripted":
        return ScriptedBackend(config.responses)
    if config.kind == "oracle":
        if cohort is None:
            raise ConfigError("oracle backend needs the cohort")
        return OracleBackend(cohort, config.threshold_r)
    return HttpChatBackend(config)
