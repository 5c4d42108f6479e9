"""Judge-layer tests: similarity, pairing, prompts, parsing, backends."""

from __future__ import annotations

import math
import re
from types import SimpleNamespace

import pytest
import requests
from hypothesis import given, settings
from hypothesis import strategies as st

import phenocycle.judge as judge_mod
from conftest import make_cohort, make_group, make_participant
from phenocycle.backends import (
    BackendConfig,
    HashingEmbedding,
    HttpChatBackend,
    OracleBackend,
    ScriptedBackend,
    build_backend,
)
from phenocycle.errors import (
    BackendError,
    CohortTooSmall,
    ConfigError,
    ContextOverflow,
    UnknownFeature,
)
from phenocycle.judge import (
    FeatureSubset,
    build_pairing,
    fairness_filter,
    judge,
    parse_verdict,
    render_prompt,
    render_trajectory,
    semantic_similarity,
    statistical_similarity,
    validate_subset,
)

HYP = SimpleNamespace(
    statement="Severity declines steadily over follow-up.",
    focal_feature="time",
)
DOSE_HYP = SimpleNamespace(
    statement="Severity falls after each additional vaccine dose.",
    focal_feature="vaccine_dose",
)

SUBSET = FeatureSubset(included=("pasc_score", "vaccine_dose"))


# ---------------------------------------------------------------- subsets


class TestFeatureSubset:
    def test_duplicate_names_rejected(self):
        with pytest.raises(ConfigError):
            FeatureSubset(included=("pasc_score", "pasc_score"))

    def test_unknown_name_rejected_against_schema(self):
        schema = {"pasc_score": False}
        with pytest.raises(UnknownFeature):
            validate_subset(FeatureSubset(included=("heart_rate",)), schema)

    def test_protected_name_rejected_against_schema(self):
        schema = {"pasc_score": False, "sex": True}
        with pytest.raises(ConfigError):
            validate_subset(FeatureSubset(included=("sex",)), schema)


# ---------------------------------------------------------------- statistical similarity


class TestStatisticalSimilarity:
    def test_identical_records_score_one(self):
        a = make_participant("a", [(0, 3), (30, 4)], doses=[10])
        b = make_participant("b", [(0, 5), (30, 6)], doses=[20])
        assert statistical_similarity(a, b, SUBSET) == 1.0

    def test_single_count_difference_halves_score(self):
        a = make_participant("a", [(0, 3), (30, 4)], doses=[10])
        b = make_participant("b", [(0, 5), (30, 6), (60, 7)], doses=[20])
        assert statistical_similarity(a, b, SUBSET) == 0.5

    def test_three_two_versus_five_four(self):
        a = make_participant("a", [(0, 1), (10, 2), (20, 3)], doses=[5, 15])
        b = make_participant(
            "b", [(0, 1), (10, 2), (20, 3), (30, 4), (40, 5)], doses=[5, 15, 25, 35]
        )
        assert statistical_similarity(a, b, SUBSET) == pytest.approx(0.2)

    def test_missing_group_counts_zero(self):
        a = make_participant("a", [(0, 3)], doses=[10, 20])
        b = make_participant("b", [(0, 3)])
        assert statistical_similarity(a, b, SUBSET) == pytest.approx(1.0 / 3.0)

    def test_unknown_feature_with_schema(self):
        a = make_participant("a", [(0, 3)])
        b = make_participant("b", [(0, 3)])
        subset = FeatureSubset(included=("pasc_score", "heart_rate"))
        with pytest.raises(UnknownFeature):
            statistical_similarity(a, b, subset, schema={"pasc_score": False})

    def test_protected_group_never_counts(self):
        flag = make_group("sex", [(0, 1)], protected=True)
        a = make_participant("a", [(0, 3)], extra_groups=[flag])
        b = make_participant("b", [(0, 4)])
        subset = FeatureSubset(included=("pasc_score", "sex"))
        assert statistical_similarity(a, b, subset) == 1.0

    @given(
        na=st.integers(min_value=1, max_value=12),
        nb=st.integers(min_value=1, max_value=12),
        da=st.integers(min_value=0, max_value=6),
        db=st.integers(min_value=0, max_value=6),
    )
    @settings(max_examples=60, deadline=None)
    def test_symmetric_and_bounded(self, na, nb, da, db):
        a = make_participant(
            "a", [(i, 1) for i in range(na)], doses=list(range(100, 100 + da))
        )
        b = make_participant(
            "b", [(i, 1) for i in range(nb)], doses=list(range(100, 100 + db))
        )
        s_ab = statistical_similarity(a, b, SUBSET)
        s_ba = statistical_similarity(b, a, SUBSET)
        assert s_ab == s_ba
        assert 0.0 < s_ab <= 1.0
        expected = 1.0 / (1.0 + abs(na - nb) + abs(da - db))
        assert s_ab == pytest.approx(expected)


# ---------------------------------------------------------------- semantic similarity


class SeqEmbedding:
    """Returns queued vectors in order, ignoring the text."""

    def __init__(self, vectors):
        self._vectors = list(vectors)

    def embed(self, text):
        return self._vectors.pop(0)


class TestSemanticSimilarity:
    def _pair(self):
        a = make_participant("a", [(0, 3)])
        b = make_participant("b", [(0, 5)])
        return a, b

    def test_identical_vectors_score_one(self):
        a, b = self._pair()
        backend = SeqEmbedding([[0.3, 0.4], [0.3, 0.4]])
        assert semantic_similarity(a, b, SUBSET, backend) == pytest.approx(1.0)

    def test_orthogonal_vectors_score_zero(self):
        a, b = self._pair()
        backend = SeqEmbedding([[1.0, 0.0], [0.0, 1.0]])
        assert semantic_similarity(a, b, SUBSET, backend) == pytest.approx(0.0)

    def test_opposed_vectors_score_minus_one(self):
        a, b = self._pair()
        backend = SeqEmbedding([[1.0, 0.0], [-1.0, 0.0]])
        assert semantic_similarity(a, b, SUBSET, backend) == pytest.approx(-1.0)

    def test_dimension_mismatch(self):
        a, b = self._pair()
        backend = SeqEmbedding([[1.0, 0.0], [1.0, 0.0, 0.0]])
        with pytest.raises(BackendError):
            semantic_similarity(a, b, SUBSET, backend)

    def test_zero_norm_vector(self):
        a, b = self._pair()
        backend = SeqEmbedding([[0.0, 0.0], [1.0, 0.0]])
        with pytest.raises(BackendError):
            semantic_similarity(a, b, SUBSET, backend)

    def test_malformed_vector(self):
        a, b = self._pair()
        with pytest.raises(BackendError):
            semantic_similarity(a, b, SUBSET, SeqEmbedding(["nonsense", "x"]))
        with pytest.raises(BackendError):
            semantic_similarity(a, b, SUBSET, SeqEmbedding([[1.0, None], [1.0, 0.0]]))

    def test_backend_exception_is_wrapped(self):
        a, b = self._pair()

        class Boom:
            def embed(self, text):
                raise TimeoutError("deadline")

        with pytest.raises(BackendError):
            semantic_similarity(a, b, SUBSET, Boom())

    def test_cosine_clipped_to_unit_interval(self):
        a, b = self._pair()
        # rounding can push a raw cosine a hair past 1
        v = [0.1] * 50
        backend = SeqEmbedding([v, list(v)])
        assert semantic_similarity(a, b, SUBSET, backend) <= 1.0


# ---------------------------------------------------------------- pairing


def _pairing_cohort():
    return make_cohort(
        make_participant("p1", [(0, 3), (30, 4)], doses=[10]),
        make_participant("p2", [(0, 5), (30, 6)], doses=[20]),
        make_participant("p3", [(0, 1), (15, 2), (30, 3), (45, 4)]),
    )


class TestBuildPairing:
    def test_all_pairs_sorted_by_similarity(self):
        plan = build_pairing(_pairing_cohort(), SUBSET, k=3)
        assert [(a, b) for a, b, _ in plan.pairs] == [
            ("p1", "p2"),
            ("p1", "p3"),
            ("p2", "p3"),
        ]
        sims = [s for _, _, s in plan.pairs]
        assert sims == sorted(sims, reverse=True)
        assert sims[0] == 1.0
        assert sims[1] == sims[2] == pytest.approx(0.25)

    def test_k_clamps_to_available_pairs(self):
        plan = build_pairing(_pairing_cohort(), SUBSET, k=50)
        assert len(plan.pairs) == 3
        assert plan.k == 50

    def test_most_similar_pair_wins_k_one(self):
        plan = build_pairing(_pairing_cohort(), SUBSET, k=1)
        assert plan.pairs == (("p1", "p2", 1.0),)

    def test_ties_break_lexicographically(self):
        cohort = make_cohort(
            make_participant("a", [(0, 1)]),
            make_participant("b", [(0, 1)]),
            make_participant("c", [(0, 1)]),
        )
        plan = build_pairing(cohort, FeatureSubset(included=("pasc_score",)), k=2)
        assert [(a, b) for a, b, _ in plan.pairs] == [("a", "b"), ("a", "c")]

    def test_cohort_too_small(self):
        cohort = make_cohort(make_participant("only", [(0, 1)]))
        with pytest.raises(CohortTooSmall):
            build_pairing(cohort, SUBSET, k=1)

    def test_parameter_validation(self):
        cohort = _pairing_cohort()
        with pytest.raises(ConfigError):
            build_pairing(cohort, SUBSET, k=0)
        with pytest.raises(ConfigError):
            build_pairing(cohort, SUBSET, k=1, batch_size=0)
        with pytest.raises(ConfigError):
            build_pairing(cohort, SUBSET, k=1, weights=(0.0, 0.0))
        with pytest.raises(ConfigError):
            build_pairing(cohort, SUBSET, k=1, weights=(1.0, -0.5))
        with pytest.raises(ConfigError):
            build_pairing(cohort, SUBSET, k=1, weights=(1.0, 1.0))  # no embedding

    def test_unknown_subset_name(self):
        with pytest.raises(UnknownFeature):
            build_pairing(
                _pairing_cohort(),
                FeatureSubset(included=("heart_rate",)),
                k=1,
            )

    @given(perm=st.permutations(list(range(5))))
    @settings(max_examples=25, deadline=None)
    def test_input_order_invariance(self, perm):
        base = [
            make_participant("p1", [(0, 3), (30, 4)], doses=[10]),
            make_participant("p2", [(0, 5), (30, 6)], doses=[20]),
            make_participant("p3", [(0, 1), (15, 2), (30, 3), (45, 4)]),
            make_participant("p4", [(0, 2)], doses=[5, 25, 45]),
            make_participant("p5", [(0, 2), (10, 2), (20, 2)], doses=[5]),
        ]
        reference = build_pairing(make_cohort(*base), SUBSET, k=4)
        shuffled = build_pairing(
            make_cohort(*(base[i] for i in perm)), SUBSET, k=4
        )
        assert shuffled == reference

    def test_pruned_path_matches_exhaustive(self, monkeypatch):
        participants = [
            make_participant(
                f"q{i:02d}",
                [(d, 1) for d in range(i % 7 + 1)],
                doses=list(range(100, 100 + i % 4)),
            )
            for i in range(30)
        ]
        cohort = make_cohort(*participants)
        exhaustive = build_pairing(cohort, SUBSET, k=12)
        monkeypatch.setattr(judge_mod, "EXHAUSTIVE_PAIRING_LIMIT", 5)
        pruned = build_pairing(cohort, SUBSET, k=12)
        assert pruned == exhaustive

    def test_weighted_semantic_blend(self):
        a = make_participant("a", [(0, 3)])
        b = make_participant("b", [(0, 5)])
        backend = SeqEmbedding([[1.0, 0.0], [0.0, 1.0]])
        subset = FeatureSubset(included=("pasc_score",))
        plan = build_pairing(
            make_cohort(a, b), subset, k=1, weights=(1.0, 1.0), embedding=backend
        )
        # stat sim 1.0, semantic 0.0, equal weights
        assert plan.pairs[0][2] == pytest.approx(0.5)

    def test_judge_never_mutates_cohort(self):
        cohort = _pairing_cohort()
        before = [(p.id, dict(p.groups)) for p in cohort.participants]
        build_pairing(cohort, SUBSET, k=3)
        after = [(p.id, dict(p.groups)) for p in cohort.participants]
        assert before == after


# ---------------------------------------------------------------- fairness filter


class TestFairnessFilter:
    SCHEMA = {"pasc_score": False, "vaccine_dose": False, "sex": True, "race": True}

    def test_removes_protected_and_notes_it(self):
        subset = FeatureSubset(included=("pasc_score", "sex", "vaccine_dose"))
        out = fairness_filter(subset, self.SCHEMA)
        assert out.included == ("pasc_score", "vaccine_dose")
        assert "sex" in out.rationale
        assert "removed protected" in out.rationale

    def test_clean_subset_passes_through(self):
        subset = FeatureSubset(included=("pasc_score",), rationale="seed")
        assert fairness_filter(subset, self.SCHEMA) is subset

    def test_all_protected_comes_back_empty(self):
        subset = FeatureSubset(included=("sex", "race"))
        out = fairness_filter(subset, self.SCHEMA)
        assert out.included == ()

    @given(
        names=st.lists(
            st.sampled_from(["pasc_score", "vaccine_dose", "sex", "race"]),
            unique=True,
        )
    )
    @settings(max_examples=40, deadline=None)
    def test_idempotent(self, names):
        subset = FeatureSubset(included=tuple(names))
        once = fairness_filter(subset, self.SCHEMA)
        twice = fairness_filter(once, self.SCHEMA)
        assert twice == once
        assert not any(self.SCHEMA[n] for n in once.included)


# ---------------------------------------------------------------- prompt rendering


def _date_rows(text: str) -> list[str]:
    return [l for l in text.splitlines() if re.match(r"^\d{4}-\d{2}-\d{2} \| ", l)]


class TestRenderPrompt:
    def test_two_events_render_two_rows(self):
        p = make_participant("p1", [(0, 3), (30, 5)])
        prompt = render_prompt(HYP, [p], FeatureSubset(included=("pasc_score",)))
        rows = _date_rows(prompt)
        assert len(rows) == 2
        assert rows[0] == "2022-01-03 | pasc_score | 3"
        assert rows[1] == "2022-02-02 | pasc_score | 5"

    def test_contains_header_lines(self):
        p = make_participant("p1", [(0, 3)])
        prompt = render_prompt(DOSE_HYP, [p], SUBSET)
        assert f"HYPOTHESIS: {DOSE_HYP.statement}" in prompt
        assert "FOCAL FEATURE: vaccine_dose" in prompt
        assert "FEATURES UNDER REVIEW: pasc_score, vaccine_dose" in prompt
        assert "PARTICIPANT p1" in prompt

    def test_deterministic(self):
        batch = [
            make_participant("p1", [(0, 3), (10, 4)], doses=[5]),
            make_participant("p2", [(0, 6)], doses=[8, 40]),
        ]
        one = render_prompt(HYP, batch, SUBSET)
        two = render_prompt(HYP, batch, SUBSET)
        assert one == two

    def test_truncation_drops_oldest_row_first(self):
        batch = [
            make_participant("p1", [(0, 3), (10, 4)]),
            make_participant("p2", [(5, 6), (15, 7)]),
        ]
        subset = FeatureSubset(included=("pasc_score",))
        full = render_prompt(HYP, batch, subset)
        trimmed = render_prompt(HYP, batch, subset, max_chars=len(full) - 1)
        assert "[omitted 1 earliest rows]" in trimmed
        assert "2022-01-03" not in trimmed   # p1 day 0 went first
        assert "2022-01-13" in trimmed       # p1 newest row survives
        assert len(trimmed) <= len(full) - 1

    def test_last_row_per_participant_survives(self):
        batch = [
            make_participant("p1", [(0, 3)]),
            make_participant("p2", [(5, 6), (15, 7), (25, 8)]),
        ]
        subset = FeatureSubset(included=("pasc_score",))
        full = render_prompt(HYP, batch, subset)
        marker = "[omitted 2 earliest rows]"
        trimmed = render_prompt(
            HYP, batch, subset, max_chars=len(full) - 1
        )
        while marker not in trimmed:
            trimmed = render_prompt(
                HYP, batch, subset, max_chars=len(trimmed) - 1
            )
        assert "2022-01-03 | pasc_score | 3" in trimmed
        assert "2022-01-28 | pasc_score | 8" in trimmed

    def test_context_overflow_when_nothing_left_to_drop(self):
        p = make_participant("p1", [(0, 3)])
        with pytest.raises(ContextOverflow):
            render_prompt(HYP, [p], FeatureSubset(included=("pasc_score",)), max_chars=40)

    def test_empty_batch_rejected(self):
        with pytest.raises(ConfigError):
            render_prompt(HYP, [], SUBSET)

    def test_protected_group_never_rendered(self):
        flag = make_group("self_reported_sex", [(0, 1)], protected=True)
        p = make_participant("p1", [(0, 3)], extra_groups=[flag])
        subset = FeatureSubset(included=("pasc_score", "self_reported_sex"))
        prompt = render_prompt(HYP, [p], subset)
        assert "self_reported_sex" not in prompt

    def test_trajectory_restricted_to_subset(self):
        p = make_participant("p1", [(0, 3)], doses=[10])
        text = render_trajectory(p, FeatureSubset(included=("pasc_score",)))
        assert "pasc_score" in text
        assert "vaccine_dose" not in text


# ---------------------------------------------------------------- verdict parsing


class TestParseVerdict:
    def test_aligned_with_evidence(self):
        raw = (
            "VERDICT: ALIGNED\n"
            "EVIDENCE:\n"
            "- p1, p2: scores fall after the second dose\n"
            "- p3: remission holds through follow-up\n"
        )
        report = parse_verdict(raw, known_ids=["p1", "p2", "p3"])
        assert report.verdict == "Aligned"
        assert len(report.evidence) == 2
        assert report.evidence[0].participant_ids == ("p1", "p2")
        assert report.evidence[1].participant_ids == ("p3",)
        assert "second dose" in report.evidence[0].excerpt
        assert report.raw_response == raw

    def test_not_aligned(self):
        raw = "VERDICT: NOT_ALIGNED\nEVIDENCE:\n- p1: scores keep climbing\n"
        report = parse_verdict(raw, known_ids=["p1"])
        assert report.verdict == "NotAligned"

    def test_free_prose_is_inconclusive(self):
        raw = "The trajectories look mixed; hard to say either way."
        report = parse_verdict(raw)
        assert report.verdict == "Inconclusive"
        assert report.raw_response == raw
        assert report.evidence == ()

    def test_aligned_without_evidence_is_inconclusive(self):
        report = parse_verdict("VERDICT: ALIGNED\n")
        assert report.verdict == "Inconclusive"

    def test_unrecognized_verdict_word_is_inconclusive(self):
        report = parse_verdict("VERDICT: MAYBE\nEVIDENCE:\n- p1: hmm\n")
        assert report.verdict == "Inconclusive"

    def test_add_and_remove_lines(self):
        raw = (
            "VERDICT: NOT_ALIGNED\n"
            "EVIDENCE:\n"
            "- p1: flat trend\n"
            "ADD: weekly_breathing_rate, weekly_heart_rate\n"
            "REMOVE: vaccine_dose\n"
        )
        report = parse_verdict(
            raw,
            known_ids=["p1"],
            schema_names=["pasc_score", "vaccine_dose", "weekly_breathing_rate"],
        )
        assert report.suggested_additions == (
            "weekly_breathing_rate",
            "weekly_heart_rate",
        )
        assert report.suggested_removals == ("vaccine_dose",)
        assert report.unknown_suggestions == ("weekly_heart_rate",)

    def test_bullets_stop_at_suggestion_block(self):
        raw = (
            "VERDICT: ALIGNED\n"
            "EVIDENCE:\n"
            "- p1: down after dose\n"
            "ADD: weekly_heart_rate\n"
            "- p2: stray bullet below the block\n"
        )
        report = parse_verdict(raw, known_ids=["p1", "p2"])
        assert len(report.evidence) == 1

    def test_unknown_ids_not_extracted(self):
        raw = "VERDICT: ALIGNED\nEVIDENCE:\n- p9 improved, p1 too\n"
        report = parse_verdict(raw, known_ids=["p1"])
        assert report.evidence[0].participant_ids == ("p1",)

    def test_evidence_without_verdict_line(self):
        raw = "EVIDENCE:\n- p1: something\n"
        report = parse_verdict(raw, known_ids=["p1"])
        assert report.verdict == "Inconclusive"
        assert len(report.evidence) == 1


# ---------------------------------------------------------------- scripted backend


class TestScriptedBackend:
    def test_replays_in_order(self):
        backend = ScriptedBackend(["first", "second"])
        assert backend.complete("a") == "first"
        assert backend.complete("b") == "second"
        assert backend.prompts == ["a", "b"]

    def test_exhaustion_raises(self):
        backend = ScriptedBackend(["only"])
        backend.complete("x")
        with pytest.raises(BackendError):
            backend.complete("y")

    def test_judge_round_trip(self):
        backend = ScriptedBackend(
            [
                "VERDICT: NOT_ALIGNED\n"
                "EVIDENCE:\n"
                "- p1: severity flat across doses\n"
                "ADD: vaccine_dose\n"
            ]
        )
        p = make_participant("p1", [(0, 3), (30, 3)], doses=[10])
        report = judge(HYP, [p], FeatureSubset(included=("pasc_score",)), backend)
        assert report.verdict == "NotAligned"
        assert report.suggested_additions == ("vaccine_dose",)
        assert report.unknown_suggestions == ()
        assert report.evidence[0].participant_ids == ("p1",)
        assert "PARTICIPANT p1" in backend.prompts[0]


# ---------------------------------------------------------------- http backend


class FakeResponse:
    def __init__(self, status_code=200, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text

    def json(self):
        if self._payload is None:
            raise ValueError("body is not json")
        return self._payload


class FakeSession:
    def __init__(self, outcomes):
        self._outcomes = list(outcomes)
        self.calls: list[dict] = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append(
            {"url": url, "json": json, "headers": headers, "timeout": timeout}
        )
        outcome = self._outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def _chat_payload(content) -> dict:
    return {"choices": [{"message": {"content": content}}]}


def _http_config(**overrides) -> BackendConfig:
    base = dict(
        kind="http_chat",
        endpoint="http://model.test/v1/chat",
        model_name="judge-1",
        auth_env="PHENO_TOKEN",
    )
    base.update(overrides)
    return BackendConfig(**base)


class TestHttpChatBackend:
    def test_success_passes_prompt_and_returns_content(self, monkeypatch):
        monkeypatch.setenv("PHENO_TOKEN", "sekrit")
        session = FakeSession([FakeResponse(payload=_chat_payload("VERDICT: ALIGNED"))])
        backend = HttpChatBackend(_http_config(), session=session)
        assert backend.complete("the prompt") == "VERDICT: ALIGNED"
        call = session.calls[0]
        assert call["url"] == "http://model.test/v1/chat"
        assert call["json"]["messages"] == [
            {"role": "user", "content": "the prompt"}
        ]
        assert call["json"]["model"] == "judge-1"
        assert call["headers"]["Authorization"] == "Bearer sekrit"
        assert call["timeout"] == pytest.approx(120.0)

    def test_missing_token_sends_no_auth_header(self, monkeypatch):
        monkeypatch.delenv("PHENO_TOKEN", raising=False)
        session = FakeSession([FakeResponse(payload=_chat_payload("ok"))])
        HttpChatBackend(_http_config(), session=session).complete("p")
        assert "Authorization" not in session.calls[0]["headers"]

    def test_retries_then_succeeds(self):
        sleeps: list[float] = []
        session = FakeSession(
            [
                requests.ConnectionError("refused"),
                FakeResponse(payload=_chat_payload("late but fine")),
            ]
        )
        backend = HttpChatBackend(
            _http_config(), session=session, sleep=sleeps.append
        )
        assert backend.complete("p") == "late but fine"
        assert sleeps == [1.0]
        assert len(session.calls) == 2

    def test_gives_up_after_backoff_schedule(self):
        sleeps: list[float] = []
        session = FakeSession(
            [
                requests.ConnectionError("a"),
                FakeResponse(status_code=503, text="busy"),
                requests.Timeout("b"),
            ]
        )
        backend = HttpChatBackend(
            _http_config(), session=session, sleep=sleeps.append
        )
        with pytest.raises(BackendError):
            backend.complete("p")
        assert sleeps == [1.0, 2.0]
        assert len(session.calls) == 3

    def test_malformed_body_is_backend_error(self):
        session = FakeSession(
            [
                FakeResponse(payload={"nope": []}),
                FakeResponse(payload={"choices": []}),
                FakeResponse(payload=_chat_payload(17)),
            ]
        )
        backend = HttpChatBackend(
            _http_config(), session=session, sleep=lambda s: None
        )
        with pytest.raises(BackendError):
            backend.complete("p")
        assert len(session.calls) == 3

    def test_non_json_body_is_backend_error(self):
        session = FakeSession([FakeResponse(payload=None, text="<html>")])
        backend = HttpChatBackend(
            _http_config(), session=session, sleep=lambda s: None, backoff_s=()
        )
        with pytest.raises(BackendError):
            backend.complete("p")


class TestBackendConfig:
    def test_http_requires_endpoint(self):
        with pytest.raises(ConfigError):
            BackendConfig(kind="http_chat")

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            BackendConfig(kind="carrier_pigeon")

    def test_timeout_must_be_positive(self):
        with pytest.raises(ConfigError):
            _http_config(timeout_s=0.0)

    def test_threshold_must_be_a_proper_fraction(self):
        with pytest.raises(ConfigError):
            BackendConfig(kind="oracle", threshold_r=1.0)
        with pytest.raises(ConfigError):
            BackendConfig(kind="oracle", threshold_r=0.0)

    def test_dict_round_trip(self):
        config = _http_config(timeout_s=30.0)
        assert BackendConfig.from_dict(config.as_dict()) == config
        oracle = BackendConfig(kind="oracle", threshold_r=0.25)
        assert BackendConfig.from_dict(oracle.as_dict()) == oracle
        scripted = BackendConfig(kind="scripted", responses=("a", "b"))
        assert BackendConfig.from_dict(scripted.as_dict()) == scripted

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigError):
            BackendConfig.from_dict({"kind": "scripted", "temperature": 0.7})
        with pytest.raises(ConfigError):
            BackendConfig.from_dict({})

    def test_build_backend_dispatch(self):
        assert isinstance(
            build_backend(BackendConfig(kind="scripted")), ScriptedBackend
        )
        cohort = _pairing_cohort()
        assert isinstance(
            build_backend(BackendConfig(kind="oracle"), cohort), OracleBackend
        )
        with pytest.raises(ConfigError):
            build_backend(BackendConfig(kind="oracle"))
        assert isinstance(build_backend(_http_config()), HttpChatBackend)


# ---------------------------------------------------------------- oracle backend


def _oracle_prompt(hyp, batch, subset) -> str:
    return render_prompt(hyp, batch, subset)


class TestOracleBackend:
    def test_perfect_negative_dose_correlation_aligns(self):
        p = make_participant(
            "p1", [(0, 10), (30, 8), (60, 6), (90, 4)], doses=[30, 60, 90]
        )
        cohort = make_cohort(p, make_participant("p2", [(0, 1)]))
        oracle = OracleBackend(cohort)
        prompt = _oracle_prompt(DOSE_HYP, [p], SUBSET)
        raw = oracle.complete(prompt)
        assert raw.startswith("VERDICT: ALIGNED")
        assert "r=-1.000" in raw
        assert "p1" in raw

    def test_constant_focal_suggests_best_alternative(self):
        breathing = make_group(
            "weekly_breathing_rate", [(0, 15), (7, 15), (14, 17), (21, 17)]
        )
        supplement = make_group("supplement_dose", [(0, 1), (14, 1), (21, 1)])
        p = make_participant(
            "p1",
            [(0, 5), (7, 5), (14, 7), (21, 7)],
            extra_groups=[breathing, supplement],
        )
        cohort = make_cohort(p, make_participant("p2", [(0, 1)]))
        oracle = OracleBackend(cohort)
        hyp = SimpleNamespace(
            statement="Supplement intake tracks severity.",
            focal_feature="supplement_dose",
        )
        subset = FeatureSubset(included=("pasc_score", "supplement_dose"))
        raw = oracle.complete(_oracle_prompt(hyp, [p], subset))
        assert raw.startswith("VERDICT: NOT_ALIGNED")
        assert "ADD: weekly_breathing_rate" in raw

    def test_breathing_rate_beats_flat_heart_rate(self):
        breathing = make_group(
            "weekly_breathing_rate", [(0, 15), (7, 15), (14, 17), (21, 17)]
        )
        heart = make_group(
            "weekly_heart_rate", [(0, 71), (7, 72), (14, 71), (21, 72)]
        )
        p = make_participant(
            "p1",
            [(0, 5), (7, 5), (14, 7), (21, 7)],
            extra_groups=[breathing, heart],
        )
        cohort = make_cohort(p, make_participant("p2", [(0, 1)]))
        oracle = OracleBackend(cohort)
        hyp = SimpleNamespace(
            statement="Heart rate tracks severity week to week.",
            focal_feature="weekly_heart_rate",
        )
        subset = FeatureSubset(included=("pasc_score", "weekly_heart_rate"))
        raw = oracle.complete(_oracle_prompt(hyp, [p], subset))
        assert raw.startswith("VERDICT: NOT_ALIGNED")
        assert "weekly_breathing_rate" in raw

    def test_time_pseudo_feature_uses_day_offsets(self):
        p = make_participant("p1", [(0, 2), (30, 4), (60, 6)])
        cohort = make_cohort(p, make_participant("p2", [(0, 1)]))
        oracle = OracleBackend(cohort)
        subset = FeatureSubset(included=("pasc_score",))
        raw = oracle.complete(_oracle_prompt(HYP, [p], subset))
        assert raw.startswith("VERDICT: ALIGNED")
        assert "r=+1.000" in raw

    def test_no_candidates_means_no_add_line(self):
        p = make_participant("p1", [(0, 5), (30, 5), (60, 5)])
        cohort = make_cohort(p, make_participant("p2", [(0, 5)]))
        oracle = OracleBackend(cohort)
        subset = FeatureSubset(included=("pasc_score",))
        hyp = SimpleNamespace(statement=HYP.statement, focal_feature="time")
        raw = oracle.complete(_oracle_prompt(hyp, [p], subset))
        assert raw.startswith("VERDICT: NOT_ALIGNED")
        assert "ADD:" not in raw

    def test_protected_groups_never_suggested(self):
        flag = make_group("sex", [(0, 1)], protected=True)
        p = make_participant("p1", [(0, 5), (30, 5), (60, 5)], extra_groups=[flag])
        cohort = make_cohort(p, make_participant("p2", [(0, 5)]))
        raw = OracleBackend(cohort).complete(
            _oracle_prompt(HYP, [p], FeatureSubset(included=("pasc_score",)))
        )
        assert "sex" not in raw

    def test_deterministic(self):
        p = make_participant("p1", [(0, 10), (30, 6), (60, 2)], doses=[30, 60])
        cohort = make_cohort(p, make_participant("p2", [(0, 1)]))
        oracle = OracleBackend(cohort)
        prompt = _oracle_prompt(DOSE_HYP, [p], SUBSET)
        assert oracle.complete(prompt) == oracle.complete(prompt)

    def test_threshold_validation(self):
        cohort = make_cohort(make_participant("p1", [(0, 1)]))
        with pytest.raises(ConfigError):
            OracleBackend(cohort, threshold_r=0.0)
        with pytest.raises(ConfigError):
            OracleBackend(cohort, threshold_r=1.0)

    def test_judge_round_trip_parses_oracle_output(self):
        p1 = make_participant(
            "p1", [(0, 10), (30, 8), (60, 6), (90, 4)], doses=[30, 60, 90]
        )
        p2 = make_participant(
            "p2", [(0, 12), (30, 9), (60, 7), (90, 5)], doses=[30, 60, 90]
        )
        cohort = make_cohort(p1, p2)
        report = judge(DOSE_HYP, [p1, p2], SUBSET, OracleBackend(cohort))
        assert report.verdict == "Aligned"
        assert report.evidence[0].participant_ids == ("p1", "p2")
        assert report.suggested_additions == ()
        assert "VERDICT: ALIGNED" in report.raw_response


# ---------------------------------------------------------------- hashing embedding


class TestHashingEmbedding:
    def test_deterministic_across_instances(self):
        text = "severity falls after the booster"
        assert HashingEmbedding().embed(text) == HashingEmbedding().embed(text)

    def test_unit_norm(self):
        vec = HashingEmbedding(dim=16).embed("one two three two")
        assert math.isclose(sum(x * x for x in vec), 1.0, abs_tol=1e-12)

    def test_identical_trajectories_score_one(self):
        a = make_participant("a", [(0, 3), (30, 4)])
        b = make_participant("b", [(0, 3), (30, 4)])
        subset = FeatureSubset(included=("pasc_score",))
        backend = HashingEmbedding()
        sim = semantic_similarity(a, b, subset, backend)
        assert sim > 0.9    # only the id token differs

    def test_dimension_validation(self):
        with pytest.raises(ConfigError):
            HashingEmbedding(dim=1)
