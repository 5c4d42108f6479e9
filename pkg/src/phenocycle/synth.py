"""Synthetic longitudinal cohort generator.

Builds a three-subphenotype cohort (Protected / Responder / Refractory)
with planted, recoverable structure: group-level score means, a fixed
per-dose improvement step for responders, and dose counts that fall with
severity. All scores are rounded to integers, so ties are pervasive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import date, timedelta

import numpy as np
from scipy.special import ndtr

from .cohort import (
    Cohort,
    Demographics,
    FeatureEvent,
    FeatureGroup,
    ParticipantRecord,
    RACE_ETHNICITIES,
    SEXES,
)
from .errors import ConfigError
from .phenotype import PhenotypeLabel

PASC_GROUP = "pasc_score"
DOSE_GROUP = "vaccine_dose"
SEX_GROUP = "sex"

AGE_BANDS = {"18-45": (18, 45), "46-64": (46, 64), "65+": (65, 90)}

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _phi(x: float) -> float:
    return math.exp(-0.5 * x * x) / _SQRT_2PI


def censored_normal_mean(mu: float, sigma: float, lo: float, hi: float) -> float:
    """Expected value of clip(N(mu, sigma), lo, hi)."""
    if sigma <= 0:
        return min(max(mu, lo), hi)
    a = (lo - mu) / sigma
    b = (hi - mu) / sigma
    return (
        lo * ndtr(a)
        + hi * (1.0 - ndtr(b))
        + mu * (ndtr(b) - ndtr(a))
        - sigma * (_phi(b) - _phi(a))
    )


def calibrate_location(target: float, sigma: float, lo: float, hi: float) -> float:
    """Location mu such that the clipped normal has the target mean.

    The clipped mean is strictly increasing in mu, so plain bisection
    converges; the caller is responsible for lo < target < hi.
    """
    if not lo < target < hi:
        raise ConfigError(f"target mean {target} not inside clip range [{lo}, {hi}]")
    left = lo - 10.0 * sigma
    right = hi + 10.0 * sigma
    for _ in range(200):
        mid = 0.5 * (left + right)
        if censored_normal_mean(mid, sigma, lo, hi) < target:
            left = mid
        else:
            right = mid
    return 0.5 * (left + right)


@dataclass(frozen=True)
class TrajectoryParams:
    """Score-scale and dose targets for one subphenotype."""

    baseline_mean: float
    baseline_sd: float
    peak_mean: float
    peak_sd: float
    mean_doses: float


@dataclass(frozen=True)
class GroupParams:
    protected: TrajectoryParams
    responder: TrajectoryParams
    refractory: TrajectoryParams

    def for_label(self, label: PhenotypeLabel) -> TrajectoryParams:
        return getattr(self, label.value.lower())


@dataclass(frozen=True)
class CategoricalMix:
    """Full per-category probabilities; each must sum to 1."""

    sex: dict[str, float]
    age_band: dict[str, float]
    race_ethnicity: dict[str, float]


@dataclass(frozen=True)
class DemographicsMix:
    protected: CategoricalMix
    responder: CategoricalMix
    refractory: CategoricalMix

    def for_label(self, label: PhenotypeLabel) -> CategoricalMix:
        return getattr(self, label.value.lower())


# (first dose day as window fraction, gap between later doses in days).
# Responder first doses are pinned to the symptom spike instead.
_DOSE_TIMING = {
    PhenotypeLabel.PROTECTED: ((0.30, 0.60), (30, 46)),
    PhenotypeLabel.RESPONDER: (None, (34, 52)),
    PhenotypeLabel.REFRACTORY: ((0.03, 0.25), (30, 45)),
}


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 7
    n_protected: int = 9544
    n_responder: int = 3302
    n_refractory: int = 665
    observation_window_days: int = 540
    visits_per_participant: tuple[int, int] = (6, 14)
    group_params: GroupParams = None
    demographics_mix: DemographicsMix = None
    start_date: date = date(2022, 1, 3)
    score_max: float = 44.0
    threshold: float = 12.0
    # planted per-dose drop in responder plateau scores
    dose_step_points: float = 0.54
    # planted protected-group dose response: level drop per dose received
    # overall, and a further step down after each successive dose
    dose_protection_points: float = 1.0
    dose_relief_points: float = 0.65
    max_doses: int = 10

    def count_for(self, label: PhenotypeLabel) -> int:
        return {
            PhenotypeLabel.PROTECTED: self.n_protected,
            PhenotypeLabel.RESPONDER: self.n_responder,
            PhenotypeLabel.REFRACTORY: self.n_refractory,
        }[label]


def default_config(seed: int = 7) -> GeneratorConfig:
    return GeneratorConfig(
        seed=seed,
        group_params=GroupParams(
            protected=TrajectoryParams(
                baseline_mean=4.98, baseline_sd=1.5, peak_mean=4.98,
                peak_sd=1.5, mean_doses=3.41,
            ),
            responder=TrajectoryParams(
                baseline_mean=8.50, baseline_sd=2.5, peak_mean=18.40,
                peak_sd=7.1, mean_doses=2.38,
            ),
            refractory=TrajectoryParams(
                baseline_mean=14.20, baseline_sd=1.5, peak_mean=22.80,
                peak_sd=5.1, mean_doses=1.82,
            ),
        ),
        demographics_mix=DemographicsMix(
            protected=CategoricalMix(
                sex={"female": 0.70, "male": 0.30},
                age_band={"18-45": 0.32, "46-64": 0.52, "65+": 0.16},
                race_ethnicity={
                    "asian": 0.08, "hispanic_latino": 0.16,
                    "non_hispanic_black": 0.17, "other": 0.59,
                },
            ),
            responder=CategoricalMix(
                sex={"female": 0.76, "male": 0.24},
                age_band={"18-45": 0.41, "46-64": 0.44, "65+": 0.15},
                race_ethnicity={
                    "asian": 0.06, "hispanic_latino": 0.18,
                    "non_hispanic_black": 0.14, "other": 0.62,
                },
            ),
            refractory=CategoricalMix(
                sex={"female": 0.82, "male": 0.18},
                age_band={"18-45": 0.48, "46-64": 0.43, "65+": 0.09},
                race_ethnicity={
                    "asian": 0.05, "hispanic_latino": 0.16,
                    "non_hispanic_black": 0.08, "other": 0.71,
                },
            ),
        ),
    )


def _check_categorical(name: str, probs: dict[str, float], allowed: tuple[str, ...]) -> None:
    if set(probs) != set(allowed):
        raise ConfigError(f"{name} must have exactly the categories {sorted(allowed)}")
    if min(probs.values()) < 0.0:
        raise ConfigError(f"{name} has a negative probability")
    if abs(sum(probs.values()) - 1.0) > 1e-9:
        raise ConfigError(f"{name} probabilities must sum to 1")


def _validate(config: GeneratorConfig) -> None:
    if config.group_params is None or config.demographics_mix is None:
        raise ConfigError("group_params and demographics_mix are required")
    for n in (config.n_protected, config.n_responder, config.n_refractory):
        if n < 0:
            raise ConfigError("cohort counts must be nonnegative")
    if config.observation_window_days < 60:
        raise ConfigError("observation window must be at least 60 days")
    if not 0 < config.threshold < config.score_max:
        raise ConfigError("threshold must lie inside (0, score_max)")
    for label in PhenotypeLabel:
        params = config.group_params.for_label(label)
        if params.baseline_sd < 0 or params.peak_sd < 0:
            raise ConfigError(f"negative sd for {label.value}")
        if params.mean_doses < 0:
            raise ConfigError(f"negative mean_doses for {label.value}")
        mix = config.demographics_mix.for_label(label)
        prefix = label.value.lower()
        _check_categorical(f"{prefix}.sex", mix.sex, SEXES)
        _check_categorical(f"{prefix}.age_band", mix.age_band, tuple(AGE_BANDS))
        _check_categorical(
            f"{prefix}.race_ethnicity", mix.race_ethnicity, RACE_ETHNICITIES
        )


def _truncated_poisson_pmf(mean: float, cap: int) -> np.ndarray:
    pmf = np.empty(cap + 1)
    pmf[0] = math.exp(-mean)
    for k in range(1, cap + 1):
        pmf[k] = pmf[k - 1] * mean / k
    pmf[cap] += 1.0 - pmf.sum()
    return pmf


def _calibrate_protected_anchor(config: GeneratorConfig) -> float:
    """Anchor c so clip(c - protection*doses + noise) has the target mean.

    Dose counts vary per participant, so the target is a mixture of clipped
    normals over the truncated Poisson dose distribution.
    """
    prot = config.group_params.protected
    step = config.dose_protection_points
    ceiling = config.threshold - 1.0
    pmf = _truncated_poisson_pmf(prot.mean_doses, config.max_doses)

    def mixture_mean(c: float) -> float:
        return sum(
            p * censored_normal_mean(c - step * n, prot.baseline_sd, 0.0, ceiling)
            for n, p in enumerate(pmf)
        )

    left, right = -30.0, 60.0
    if not mixture_mean(left) < prot.baseline_mean < mixture_mean(right):
        raise ConfigError("protected baseline mean unreachable with these settings")
    for _ in range(200):
        mid = 0.5 * (left + right)
        if mixture_mean(mid) < prot.baseline_mean:
            left = mid
        else:
            right = mid
    return 0.5 * (left + right)


@dataclass(frozen=True)
class _Calibration:
    protected_anchor_mu: float
    responder_initial_mu: float
    responder_peak_mu: float
    refractory_initial_mu: float
    refractory_rise_mu: float
    refractory_rise_sd: float


def _calibrate(config: GeneratorConfig) -> _Calibration:
    resp = config.group_params.responder
    refr = config.group_params.refractory
    below = config.threshold - 1.0  # integer scores stay below threshold
    above = config.threshold + 1.0
    rise_target = refr.peak_mean - refr.baseline_mean
    rise_sd = math.sqrt(max(refr.peak_sd**2 - refr.baseline_sd**2, 1.0))
    return _Calibration(
        protected_anchor_mu=_calibrate_protected_anchor(config),
        responder_initial_mu=calibrate_location(
            resp.baseline_mean, resp.baseline_sd, 0.0, below
        ),
        responder_peak_mu=calibrate_location(
            resp.peak_mean, resp.peak_sd, above, config.score_max
        ),
        refractory_initial_mu=calibrate_location(
            refr.baseline_mean, refr.baseline_sd, above, config.score_max - 4.0
        ),
        refractory_rise_mu=calibrate_location(rise_target, rise_sd, 1.0, 28.0),
        refractory_rise_sd=rise_sd,
    )


def _clip_draw(rng: np.random.Generator, mu: float, sd: float, lo: float, hi: float) -> float:
    return float(np.clip(rng.normal(mu, sd), lo, hi))


def _sorted_days(rng: np.random.Generator, k: int, lo: int, hi: int) -> list[int]:
    if hi <= lo or k <= 0:
        return []
    days = np.unique(rng.integers(lo, hi, size=k))
    return [int(d) for d in days]


def _dose_schedule(
    rng: np.random.Generator,
    n_doses: int,
    first_day: int,
    gap_range: tuple[int, int],
    last_day: int,
) -> list[int]:
    """First dose on a pinned day, later ones at random gaps, capped."""
    if n_doses == 0:
        return []
    days = [first_day]
    for _ in range(n_doses - 1):
        gap = int(rng.integers(gap_range[0], gap_range[1] + 1))
        days.append(min(days[-1] + gap, last_day))
    return days


def _demographics(rng: np.random.Generator, mix: CategoricalMix) -> Demographics:
    def pick(probs: dict[str, float], order: tuple[str, ...]) -> str:
        u = rng.random()
        acc = 0.0
        for name in order:
            acc += probs[name]
            if u < acc:
                return name
        return order[-1]

    sex = pick(mix.sex, SEXES)
    band = AGE_BANDS[pick(mix.age_band, tuple(AGE_BANDS))]
    age = int(rng.integers(band[0], band[1] + 1))
    race = pick(mix.race_ethnicity, RACE_ETHNICITIES)
    return Demographics(age_years=age, sex=sex, race_ethnicity=race)


def _round_score(value: float, hi: float) -> float:
    return float(np.clip(round(value), 0.0, round(hi)))


def _protected_scores(
    rng: np.random.Generator,
    cal: _Calibration,
    config: GeneratorConfig,
    window: int,
    dose_days: list[int],
) -> list[tuple[int, float]]:
    prot = config.group_params.protected
    ceiling = config.threshold - 1.0
    mu = cal.protected_anchor_mu - config.dose_protection_points * len(dose_days)
    baseline = _clip_draw(rng, mu, prot.baseline_sd, 0.0, ceiling)
    visits = [(0, _round_score(baseline, ceiling))]
    # residual burden steps down again after each dose received
    for day in _sorted_days(rng, int(rng.integers(5, 10)), 14, window):
        doses_so_far = sum(1 for d in dose_days if d <= day)
        value = baseline - config.dose_relief_points * doses_so_far
        value -= abs(rng.normal(0.0, 0.25))
        visits.append((day, _round_score(max(value, 0.0), ceiling)))
    return visits


def _responder_scores(
    rng: np.random.Generator,
    cal: _Calibration,
    config: GeneratorConfig,
    window: int,
    spike_day: int,
    dose_days: list[int],
) -> list[tuple[int, float]]:
    resp = config.group_params.responder
    ceiling = config.threshold - 1.0
    initial = _clip_draw(rng, cal.responder_initial_mu, resp.baseline_sd, 0.0, ceiling)
    peak = _clip_draw(
        rng, cal.responder_peak_mu, resp.peak_sd, config.threshold + 1.0, config.score_max
    )
    plateau = float(rng.uniform(7.5, ceiling))
    visits = [(0, _round_score(initial, config.score_max))]
    # mostly flat run-in, then a sharp climb into the spike
    for day in _sorted_days(rng, int(rng.integers(2, 4)), 10, spike_day - 8):
        frac = day / spike_day
        value = initial + (peak - initial) * frac**5 + rng.normal(0.0, 0.3)
        value = min(max(value, 0.0), peak - 0.8)
        visits.append((day, _round_score(value, config.score_max)))
    visits.append((spike_day, _round_score(peak, config.score_max)))
    plunge_day = spike_day + int(rng.integers(10, 19))
    plunge = 0.5 * (peak + plateau) + rng.normal(0.0, 0.5)
    visits.append((plunge_day, _round_score(max(plunge, 0.0), config.score_max)))
    rem_day = plunge_day + int(rng.integers(8, 15))
    tail_days = _sorted_days(rng, int(rng.integers(4, 7)), rem_day, window - 10)
    tail_days.append(window - int(rng.integers(0, 6)))
    for day in tail_days:
        boosters = sum(1 for d in dose_days if d <= day)
        value = plateau - config.dose_step_points * max(boosters - 1, 0)
        value += rng.normal(0.0, 0.4)
        value = min(max(value, 0.5), ceiling)
        visits.append((day, _round_score(value, ceiling)))
    return visits


def _refractory_scores(
    rng: np.random.Generator, cal: _Calibration, config: GeneratorConfig, window: int
) -> list[tuple[int, float]]:
    refr = config.group_params.refractory
    floor = config.threshold + 0.6
    initial = _clip_draw(
        rng, cal.refractory_initial_mu, refr.baseline_sd,
        config.threshold + 1.0, config.score_max - 4.0,
    )
    rise = _clip_draw(rng, cal.refractory_rise_mu, cal.refractory_rise_sd, 1.0, 28.0)
    final = min(initial + rise, config.score_max)
    visits = [(0, _round_score(initial, config.score_max))]
    for day in _sorted_days(rng, int(rng.integers(5, 10)), 20, window - 20):
        value = initial + rise * (day / window) ** 1.1 + rng.normal(0.0, 0.5)
        value = min(max(value, floor), final - 0.55)
        visits.append((day, _round_score(value, config.score_max)))
    visits.append((window - int(rng.integers(0, 6)), _round_score(final, config.score_max)))
    return visits


def generate(config: GeneratorConfig | None = None) -> Cohort:
    """Generate the cohort; same config (including seed) gives identical output."""
    config = config or default_config()
    _validate(config)
    cal = _calibrate(config)
    window = config.observation_window_days
    start = config.start_date
    participants: list[ParticipantRecord] = []
    index = 0
    for label in PhenotypeLabel:
        params = config.group_params.for_label(label)
        mix = config.demographics_mix.for_label(label)
        first_frac, gaps = _DOSE_TIMING[label]
        for _ in range(config.count_for(label)):
            rng = np.random.default_rng([config.seed, index])
            n_doses = min(int(rng.poisson(params.mean_doses)), config.max_doses)
            if label is PhenotypeLabel.RESPONDER:
                spike_day = int(rng.uniform(0.55, 0.72) * window)
                dose_days = _dose_schedule(rng, n_doses, spike_day, gaps, window - 25)
                scores = _responder_scores(rng, cal, config, window, spike_day, dose_days)
            else:
                first = int(rng.uniform(first_frac[0], first_frac[1]) * window)
                dose_days = _dose_schedule(rng, n_doses, first, gaps, window - 10)
                if label is PhenotypeLabel.PROTECTED:
                    scores = _protected_scores(rng, cal, config, window, dose_days)
                else:
                    scores = _refractory_scores(rng, cal, config, window)
            demo = _demographics(rng, mix)
            groups = {
                PASC_GROUP: FeatureGroup(
                    name=PASC_GROUP,
                    events=tuple(
                        FeatureEvent(value=v, timestamp=start + timedelta(days=d))
                        for d, v in sorted(scores)
                    ),
                ),
                SEX_GROUP: FeatureGroup(
                    name=SEX_GROUP,
                    events=(
                        FeatureEvent(
                            value=0.0 if demo.sex == "female" else 1.0, timestamp=start
                        ),
                    ),
                    protected=True,
                ),
            }
            if dose_days:
                groups[DOSE_GROUP] = FeatureGroup(
                    name=DOSE_GROUP,
                    events=tuple(
                        FeatureEvent(value=float(i + 1), timestamp=start + timedelta(days=d))
                        for i, d in enumerate(dose_days)
                    ),
                )
            participants.append(
                ParticipantRecord(
                    id=f"p{index:05d}", demographics=demo, groups=groups
                )
            )
            index += 1
    return Cohort(participants=tuple(participants))
