"""Statistical validation suite.

The test statistics (Kruskal-Wallis with midranks and tie correction,
one-way ANOVA, Pearson correlation, Jaccard, clusterwise bootstrap
stability, dose-response strata) are implemented directly from their
formulas; only the distribution tail probabilities are delegated to
the regularized incomplete gamma/beta functions.

Severity scores are integers in practice, so ties are pervasive and the
tie-corrected H is the statistic reported. p-values below 1e-300 are not
distinguished; they display as "<1e-300".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np
from scipy import special

from .cohort import Cohort
from .errors import (
    AllValuesTied,
    ConstantInput,
    LengthMismatch,
    NoObservations,
    TooFewGroups,
    TooFewStrata,
    ZeroWithinVariance,
)
from .phenotype import PhenotypeLabel

P_FLOOR = 1e-300


def _p_display(p: float) -> str:
    if p < P_FLOOR:
        return "<1e-300"
    return format(p, ".6g")


def stars(p: float) -> str:
    """Significance markers: *** / ** / * / ns."""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return "ns"


def chi2_sf(x: float, df: int) -> float:
    """Upper tail of the chi-square distribution via regularized gamma."""
    if x <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


def f_sf(f: float, df1: int, df2: int) -> float:
    """Upper tail of the F distribution via the regularized incomplete beta."""
    if f <= 0:
        return 1.0
    return float(special.betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f)))


def t_sf_two_sided(t: float, df: int) -> float:
    """Two-sided tail of Student's t via the regularized incomplete beta."""
    if not math.isfinite(t):
        return 0.0
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


def midranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..N with tied values sharing the mean rank of their block."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=float)
    sorted_vals = values[order]
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class KruskalWallisResult:
    h: float                    # tie-corrected statistic
    h_uncorrected: float
    df: int
    p_value: float
    p_display: str
    epsilon_squared: float      # H / (N - 1)
    eta_squared_h: float        # (H - k + 1) / (N - k)
    rank_sums: tuple[float, ...]
    group_sizes: tuple[int, ...]
    n_total: int
    tie_correction: float


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> KruskalWallisResult:
    """Rank test across k groups with midranks and tie correction.

    H = 12 / (N (N+1)) * sum(R_i^2 / n_i) - 3 (N+1), divided by
    1 - sum(t^3 - t) / (N^3 - N). Both effect-size conventions are
    reported since the source literature is ambiguous about which one
    accompanies H.
    """
    if len(groups) < 2:
        raise TooFewGroups("kruskal_wallis needs at least 2 groups")
    sizes = [len(g) for g in groups]
    if any(s == 0 for s in sizes):
        raise TooFewGroups("kruskal_wallis groups must be nonempty")
    pooled = np.concatenate([np.asarray(g, dtype=float) for g in groups])
    n_total = len(pooled)
    if np.all(pooled == pooled[0]):
        raise AllValuesTied("all pooled values identical")

    ranks = midranks(pooled)
    rank_sums = []
    pos = 0
    h = 0.0
    for size in sizes:
        r = float(ranks[pos : pos + size].sum())
        rank_sums.append(r)
        h += r * r / size
        pos += size
    h = 12.0 / (n_total * (n_total + 1)) * h - 3.0 * (n_total + 1)

    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts.astype(float) ** 3 - counts))
    correction = 1.0 - tie_term / (n_total**3 - n_total)
    h_corrected = h / correction

    k = len(groups)
    df = k - 1
    p = chi2_sf(h_corrected, df)
    return KruskalWallisResult(
        h=h_corrected,
        h_uncorrected=h,
        df=df,
        p_value=p,
        p_display=_p_display(p),
        epsilon_squared=h_corrected / (n_total - 1),
        eta_squared_h=(h_corrected - k + 1) / (n_total - k)
        if n_total > k
        else float("nan"),
        rank_sums=tuple(rank_sums),
        group_sizes=tuple(sizes),
        n_total=n_total,
        tie_correction=correction,
    )


@dataclass(frozen=True)
class AnovaResult:
    f: float
    df_between: int
    df_within: int
    p_value: float
    p_display: str
    ss_between: float
    ss_within: float
    group_means: tuple[float, ...]


def one_way_anova(groups: Sequence[Sequence[float]]) -> AnovaResult:
    """Classic between/within decomposition."""
    if len(groups) < 2:
        raise TooFewGroups("one_way_anova needs at least 2 groups")
    arrays = [np.asarray(g, dtype=float) for g in groups]
    if any(len(a) == 0 for a in arrays):
        raise TooFewGroups("one_way_anova groups must be nonempty")
    pooled = np.concatenate(arrays)
    grand = pooled.mean()
    ss_between = sum(len(a) * (a.mean() - grand) ** 2 for a in arrays)
    ss_within = sum(float(((a - a.mean()) ** 2).sum()) for a in arrays)
    df_between = len(arrays) - 1
    df_within = len(pooled) - len(arrays)
    if df_within <= 0:
        raise TooFewGroups("need more observations than groups")
    if ss_within == 0.0:
        raise ZeroWithinVariance("within-group variance is zero")
    f = (ss_between / df_between) / (ss_within / df_within)
    p = f_sf(f, df_between, df_within)
    return AnovaResult(
        f=float(f),
        df_between=df_between,
        df_within=df_within,
        p_value=p,
        p_display=_p_display(p),
        ss_between=float(ss_between),
        ss_within=float(ss_within),
        group_means=tuple(float(a.mean()) for a in arrays),
    )


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    p_value: float
    n: int
    stars: str
    p_display: str = ""
    degenerate: bool = False    # constant input surfaced as a no-trend result


def pearson(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Pearson r with the usual t-distributed two-sided p-value."""
    if len(x) != len(y):
        raise LengthMismatch(f"lengths differ: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 3:
        raise LengthMismatch("pearson needs at least 3 pairs")
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    xd = xa - xa.mean()
    yd = ya - ya.mean()
    vx = float((xd * xd).sum())
    vy = float((yd * yd).sum())
    if vx == 0.0 or vy == 0.0:
        raise ConstantInput("zero variance in correlation input")
    r = float((xd * yd).sum() / math.sqrt(vx * vy))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = t_sf_two_sided(t, n - 2)
    return CorrelationResult(r=r, p_value=p, n=n, stars=stars(p), p_display=_p_display(p))


def jaccard(a: Iterable[Hashable], b: Iterable[Hashable]) -> float:
    """Set similarity; two empty sets are identical (1.0)."""
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


@dataclass(frozen=True)
class StabilityReport:
    per_label: dict[str, float]          # mean max-Jaccard per original label
    n_bootstrap: int
    seed: int
    threshold: float = 0.85              # conventional "stable" floor, reported only


Labeler = Callable[[Cohort], dict[str, Hashable]]


def bootstrap_stability(
    cohort: Cohort,
    labeler: Labeler,
    n_bootstrap: int = 100,
    seed: int = 0,
    threshold: float = 0.85,
) -> StabilityReport:
    """Clusterwise bootstrap stability.

    For each resample (participants drawn with replacement, then
    deduplicated to an id set for Jaccard purposes): relabel the
    resampled cohort, restrict each original label set to the ids the
    resample actually contains, and record the best Jaccard match among
    the bootstrap label sets. Reported per original label as the mean
    over resamples.
    """
    if n_bootstrap < 1:
        raise ValueError("n_bootstrap must be >= 1")
    original = labeler(cohort)
    original_sets: dict[Hashable, set[str]] = {}
    for pid, lab in original.items():
        original_sets.setdefault(lab, set()).add(pid)

    participants = cohort.participants
    n = len(participants)
    rng = np.random.default_rng(seed)
    sums: dict[Hashable, float] = {lab: 0.0 for lab in original_sets}

    for _ in range(n_bootstrap):
        idx = rng.integers(0, n, size=n)
        sample = [participants[i] for i in idx]
        relabeled = labeler(Cohort(participants=sample, schema_version=cohort.schema_version))
        sampled_ids = {p.id for p in sample}
        boot_sets: dict[Hashable, set[str]] = {}
        for pid, lab in relabeled.items():
            boot_sets.setdefault(lab, set()).add(pid)
        for lab, full_set in original_sets.items():
            restricted = full_set & sampled_ids
            best = max(
                (jaccard(restricted, bs) for bs in boot_sets.values()), default=0.0
            )
            if not restricted and not boot_sets:
                best = 1.0
            sums[lab] += best

    per_label = {
        lab.value if isinstance(lab, Enum) else str(lab): sums[lab] / n_bootstrap
        for lab in sums
    }
    return StabilityReport(
        per_label=per_label, n_bootstrap=n_bootstrap, seed=seed, threshold=threshold
    )


@dataclass(frozen=True)
class DoseStratum:
    dose: int
    n: int
    mean: float
    ci95_lo: float
    ci95_hi: float
    pct_change_from_peak: float
    sparse: bool                 # n < 5: interval not trustworthy


@dataclass(frozen=True)
class DoseResponseCurve:
    phenotype: str
    strata: tuple[DoseStratum, ...]
    # raw (dose, score) pairs retained for the trend test
    observations: tuple[tuple[int, float], ...] = field(repr=False, default=())


def dose_response(
    cohort: Cohort,
    labels: dict[str, PhenotypeLabel],
    phenotype: PhenotypeLabel,
    dose_group: str = "vaccine_dose",
) -> DoseResponseCurve:
    """Severity by cumulative dose stratum for one subphenotype.

    Every (observation date, score) pair of every matching participant
    is assigned the stratum ``cumulative_count_at(dose_group, date)``.
    The 95% interval is the normal approximation mean +/- 1.96 sd/sqrt(n);
    strata with n < 5 are flagged sparse. pct_change_from_peak is the
    improvement relative to the stratum with the highest mean.
    """
    obs: list[tuple[int, float]] = []
    for p in cohort:
        if labels.get(p.id) != phenotype:
            continue
        for e in p.pasc().events:
            obs.append((p.cumulative_count_at(dose_group, e.timestamp), e.value))
    if not obs:
        raise NoObservations(f"no observations for {phenotype}")

    by_dose: dict[int, list[float]] = {}
    for dose, score in obs:
        by_dose.setdefault(dose, []).append(score)

    summaries = {}
    for dose, values in by_dose.items():
        arr = np.asarray(values, dtype=float)
        mean = float(arr.mean())
        if len(arr) > 1:
            half = 1.96 * float(arr.std(ddof=1)) / math.sqrt(len(arr))
        else:
            half = 0.0
        summaries[dose] = (len(arr), mean, mean - half, mean + half)

    peak_mean = max(s[1] for s in summaries.values())
    strata = tuple(
        DoseStratum(
            dose=dose,
            n=n,
            mean=mean,
            ci95_lo=lo,
            ci95_hi=hi,
            pct_change_from_peak=(peak_mean - mean) / peak_mean * 100.0
            if peak_mean != 0
            else 0.0,
            sparse=n < 5,
        )
        for dose, (n, mean, lo, hi) in sorted(summaries.items())
    )
    return DoseResponseCurve(
        phenotype=phenotype.value, strata=strata, observations=tuple(obs)
    )


def trend_test(
    curve: DoseResponseCurve, dose_range: tuple[int, int]
) -> CorrelationResult:
    """Linear dose-severity trend over the observation pairs in range.

    A Pearson correlation over (dose, score) pairs stands in for a
    formal monotone trend test. Flat input is surfaced as a no-trend
    result rather than an error.
    """
    lo, hi = dose_range
    pairs = [(d, s) for d, s in curve.observations if lo <= d <= hi]
    strata_in_range = {d for d, _ in pairs}
    if len(strata_in_range) < 3:
        raise TooFewStrata(
            f"need >= 3 strata in [{lo}, {hi}], found {len(strata_in_range)}"
        )
    doses = [float(d) for d, _ in pairs]
    scores = [s for _, s in pairs]
    try:
        return pearson(doses, scores)
    except ConstantInput:
        return CorrelationResult(
            r=0.0, p_value=1.0, n=len(pairs), stars="ns", p_display="1", degenerate=True
        )


MATRIX_ROWS = ("All", "Protected", "Responder", "Refractory")
MATRIX_COLS = ("time_severity", "dose_severity")


def time_vs_dose_matrix(
    cohort: Cohort,
    labels: dict[str, PhenotypeLabel],
    dose_group: str = "vaccine_dose",
) -> dict[str, dict[str, CorrelationResult]]:
    """4x2 correlation matrix: rows All/Protected/Responder/Refractory,
    columns time-severity and dose-severity.

    Time is days since the participant's first vaccine event, so
    participants without one contribute only to the dose column.
    Degenerate cells (fewer than 3 pairs, or constant input) are marked
    with n = 0 and r = 0.
    """
    time_pairs: dict[str, list[tuple[float, float]]] = {r: [] for r in MATRIX_ROWS}
    dose_pairs: dict[str, list[tuple[float, float]]] = {r: [] for r in MATRIX_ROWS}
    for p in cohort:
        row = labels.get(p.id)
        row_name = row.value if row is not None else None
        dose_dates = p.groups[dose_group].dates() if dose_group in p.groups else []
        first_dose = dose_dates[0] if dose_dates else None
        for e in p.pasc().events:
            dose = float(p.cumulative_count_at(dose_group, e.timestamp))
            targets = ["All"] + ([row_name] if row_name in MATRIX_ROWS else [])
            for t in targets:
                dose_pairs[t].append((dose, e.value))
                if first_dose is not None:
                    time_pairs[t].append(
                        (float((e.timestamp - first_dose).days), e.value)
                    )

    def cell(pairs: list[tuple[float, float]]) -> CorrelationResult:
        if len(pairs) < 3:
            return CorrelationResult(
                r=0.0, p_value=1.0, n=0, stars="ns", p_display="1", degenerate=True
            )
        try:
            return pearson([a for a, _ in pairs], [b for _, b in pairs])
        except ConstantInput:
            return CorrelationResult(
                r=0.0, p_value=1.0, n=0, stars="ns", p_display="1", degenerate=True
            )

    return {
        row: {"time_severity": cell(time_pairs[row]), "dose_severity": cell(dose_pairs[row])}
        for row in MATRIX_ROWS
    }
