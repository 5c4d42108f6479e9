"""phenocycle: iterative LLM-assisted subphenotype discovery and
statistical validation for longitudinal symptom-survey cohorts."""

__version__ = "0.1.0"

from .cohort import (      # noqa: F401
    Cohort,
    Demographics,
    FeatureEvent,
    FeatureGroup,
    ParticipantRecord,
    load_cohort,
    save_cohort,
)
from .phenotype import (   # noqa: F401
    LabelResult,
    PhenotypeLabel,
    StateSequence,
    label,
    label_cohort,
    label_counts,
    label_participant,
    to_states,
)
from .stats import (       # noqa: F401
    AnovaResult,
    CorrelationResult,
    DoseResponseCurve,
    KruskalWallisResult,
    StabilityReport,
    bootstrap_stability,
    dose_response,
    jaccard,
    kruskal_wallis,
    one_way_anova,
    pearson,
    time_vs_dose_matrix,
    trend_test,
)
from .backends import (    # noqa: F401
    BackendConfig,
    HttpChatBackend,
    OracleBackend,
    ScriptedBackend,
    build_backend,
)
# the judge() entry point stays at phenocycle.judge.judge so the
# package attribute keeps naming the submodule
from .judge import (       # noqa: F401
    EvidenceReport,
    FeatureSubset,
    build_pairing,
    fairness_filter,
    parse_verdict,
    render_prompt,
)
from .engine import (      # noqa: F401
    CycleRun,
    HumanDecision,
    Hypothesis,
    IterationRecord,
    RunConfig,
    RunStore,
    apply_human_decision,
    default_pool,
    finalize,
    resume_run,
    run_cycle,
    start_run,
    stats_battery,
    step,
)
from .runspec import RunSpec, load_run_spec, parse_run_spec   # noqa: F401
