"""Regression baselines: random-intercept LMM and latent-class trajectories.

Both models treat the score sequence as a linear function of time
(days since the cohort's earliest observation) and are fit by EM with
an explicit marginal log-likelihood trace, so convergence behaviour is
inspectable rather than implicit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp, ndtr

from .cohort import Cohort
from .errors import InsufficientData, NoObservations, SingularDesign

_VAR_FLOOR = 1e-10
_LOG_2PI = math.log(2.0 * math.pi)


def _panel(cohort: Cohort) -> tuple[list[str], np.ndarray, np.ndarray, np.ndarray]:
    """Flatten score events to (ids, participant index, time-in-days, value)."""
    ids: list[str] = []
    pidx: list[int] = []
    times: list[float] = []
    values: list[float] = []
    t0 = None
    for p in cohort:
        for e in p.pasc().events:
            if t0 is None or e.timestamp < t0:
                t0 = e.timestamp
    if t0 is None:
        raise NoObservations("cohort has no score observations")
    for p in cohort:
        events = p.pasc().events
        if not events:
            continue
        idx = len(ids)
        ids.append(p.id)
        for e in events:
            pidx.append(idx)
            times.append((e.timestamp - t0).days)
            values.append(e.value)
    return (
        ids,
        np.asarray(pidx, dtype=int),
        np.asarray(times, dtype=float),
        np.asarray(values, dtype=float),
    )


@dataclass(frozen=True)
class LmmFit:
    """Random-intercept model y = b0 + b1 * t + u_i + e."""

    beta0: float
    beta1: float
    sigma2_group: float
    sigma2_resid: float
    se_beta1: float
    z_beta1: float
    p_beta1: float
    log_likelihood: float
    n_iterations: int
    converged: bool
    ll_trace: tuple[float, ...]
    n_participants: int
    n_observations: int


def fit_lmm(
    cohort: Cohort, *, max_iter: int = 500, tol: float = 1e-8
) -> LmmFit:
    """EM fit of the random-intercept linear model on score vs time.

    Non-convergence is reported through ``converged=False`` on the
    returned fit rather than raised, so long-running callers can decide
    what to do with a partial answer.
    """
    ids, pidx, t, y = _panel(cohort)
    n_obs = len(y)
    n_part = len(ids)
    if n_part < 2 or n_obs < 3:
        raise InsufficientData("need at least 2 participants and 3 observations")
    if float(np.ptp(t)) == 0.0:
        raise SingularDesign("time covariate is constant")

    x = np.column_stack([np.ones(n_obs), t])
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    s2e = max(float(resid.var()), _VAR_FLOOR)
    s2g = max(0.1 * s2e, _VAR_FLOOR)

    n_per = np.bincount(pidx, minlength=n_part).astype(float)
    sum_t = np.bincount(pidx, weights=t, minlength=n_part)
    sum_t2 = np.bincount(pidx, weights=t * t, minlength=n_part)

    def marginal_ll(beta, s2g, s2e) -> float:
        r = y - x @ beta
        sum_r = np.bincount(pidx, weights=r, minlength=n_part)
        sum_r2 = np.bincount(pidx, weights=r * r, minlength=n_part)
        denom = s2e + n_per * s2g
        logdet = n_per * math.log(s2e) + np.log(denom / s2e)
        quad = (sum_r2 - (s2g / denom) * sum_r**2) / s2e
        return float(-0.5 * np.sum(n_per * _LOG_2PI + logdet + quad))

    trace = [marginal_ll(beta, s2g, s2e)]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        # E-step: posterior mean/variance of each random intercept
        r = y - x @ beta
        sum_r = np.bincount(pidx, weights=r, minlength=n_part)
        v = 1.0 / (1.0 / s2g + n_per / s2e)
        m = v * sum_r / s2e
        # M-step
        y_adj = y - m[pidx]
        beta, *_ = np.linalg.lstsq(x, y_adj, rcond=None)
        s2g = max(float(np.mean(m * m + v)), _VAR_FLOOR)
        e = y - x @ beta - m[pidx]
        s2e = max(float(np.mean(e * e) + np.mean(v[pidx])), _VAR_FLOOR)
        ll = marginal_ll(beta, s2g, s2e)
        trace.append(ll)
        if abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break

    # Wald z from the GLS information matrix at the final estimates
    c = s2g / (s2e + n_per * s2g)
    a00 = np.sum(n_per - c * n_per**2) / s2e
    a01 = np.sum(sum_t - c * n_per * sum_t) / s2e
    a11 = np.sum(sum_t2 - c * sum_t**2) / s2e
    info = np.array([[a00, a01], [a01, a11]])
    cov = np.linalg.inv(info)
    se1 = math.sqrt(max(float(cov[1, 1]), 0.0))
    z = float(beta[1]) / se1 if se1 > 0 else math.inf
    p = float(2.0 * ndtr(-abs(z))) if math.isfinite(z) else 0.0

    return LmmFit(
        beta0=float(beta[0]),
        beta1=float(beta[1]),
        sigma2_group=s2g,
        sigma2_resid=s2e,
        se_beta1=se1,
        z_beta1=z,
        p_beta1=p,
        log_likelihood=trace[-1],
        n_iterations=iterations,
        converged=converged,
        ll_trace=tuple(trace),
        n_participants=n_part,
        n_observations=n_obs,
    )


@dataclass(frozen=True)
class TrajectoryClass:
    weight: float
    intercept: float
    slope: float
    variance: float
    degenerate: bool


@dataclass(frozen=True)
class LctmFit:
    classes: tuple[TrajectoryClass, ...]
    assignments: dict[str, int]
    log_likelihood: float
    ll_trace: tuple[float, ...]
    converged: bool
    n_iterations: int


def _per_participant_ols(
    pidx: np.ndarray, t: np.ndarray, y: np.ndarray, n_part: int
) -> np.ndarray:
    n = np.bincount(pidx, minlength=n_part).astype(float)
    st = np.bincount(pidx, weights=t, minlength=n_part)
    sy = np.bincount(pidx, weights=y, minlength=n_part)
    sty = np.bincount(pidx, weights=t * y, minlength=n_part)
    st2 = np.bincount(pidx, weights=t * t, minlength=n_part)
    denom = n * st2 - st**2
    slope = np.where(denom > 0, (n * sty - st * sy) / np.where(denom > 0, denom, 1.0), 0.0)
    intercept = (sy - slope * st) / n
    return np.column_stack([intercept, slope])


def _kmeans_init(
    features: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """k-means++ seeding plus a few Lloyd steps; returns assignments."""
    n = len(features)
    centers = [features[rng.integers(n)]]
    for _ in range(k - 1):
        d2 = np.min(
            [np.sum((features - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(features[rng.integers(n)])
            continue
        centers.append(features[rng.choice(n, p=d2 / total)])
    centers = np.array(centers)
    assign = np.zeros(n, dtype=int)
    for _ in range(10):
        dists = ((features[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dists.argmin(axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            mask = assign == c
            if mask.any():
                centers[c] = features[mask].mean(axis=0)
    return assign


def fit_lctm(
    cohort: Cohort,
    n_classes: int,
    *,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> LctmFit:
    """EM mixture of linear score trajectories with hard final assignment.

    Classes whose fitted variance or weight collapses are flagged
    degenerate instead of being dropped, so planted exact-linear groups
    remain visible in the result.
    """
    if n_classes < 1:
        raise InsufficientData("need at least one class")
    ids, pidx, t, y = _panel(cohort)
    n_part = len(ids)
    n_per = np.bincount(pidx, minlength=n_part)
    usable = int(np.sum(n_per >= 2))
    if usable < n_classes:
        raise InsufficientData(
            f"{usable} participants with >= 2 observations for {n_classes} classes"
        )

    rng = np.random.default_rng(seed)
    feats = _per_participant_ols(pidx, t, y, n_part)
    scale = feats.std(axis=0)
    scale[scale == 0] = 1.0
    assign = _kmeans_init(feats / scale, n_classes, rng)

    # initial class parameters from the seeded hard assignment
    resp = np.full((n_part, n_classes), 1e-6)
    resp[np.arange(n_part), assign] = 1.0
    resp /= resp.sum(axis=1, keepdims=True)

    weights = np.full(n_classes, 1.0 / n_classes)
    coefs = np.zeros((n_classes, 2))
    variances = np.full(n_classes, max(float(y.var()), _VAR_FLOOR))

    x = np.column_stack([np.ones(len(y)), t])
    trace: list[float] = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        # M-step from current responsibilities
        weights = resp.mean(axis=0)
        for c in range(n_classes):
            w_obs = resp[pidx, c]
            wx = x * w_obs[:, None]
            gram = wx.T @ x
            if np.linalg.matrix_rank(gram) < 2:
                coefs[c] = [float(np.average(y, weights=w_obs)), 0.0]
            else:
                coefs[c] = np.linalg.solve(gram, wx.T @ y)
            res = y - x @ coefs[c]
            total = w_obs.sum()
            variances[c] = (
                max(float(np.sum(w_obs * res * res) / total), _VAR_FLOOR)
                if total > 0
                else _VAR_FLOOR
            )
        # E-step: participant-level log responsibilities
        log_resp = np.zeros((n_part, n_classes))
        for c in range(n_classes):
            res = y - x @ coefs[c]
            obs_ll = -0.5 * (_LOG_2PI + math.log(variances[c]) + res**2 / variances[c])
            log_resp[:, c] = np.bincount(pidx, weights=obs_ll, minlength=n_part)
        log_resp += np.log(np.maximum(weights, 1e-300))
        norm = logsumexp(log_resp, axis=1)
        trace.append(float(norm.sum()))
        resp = np.exp(log_resp - norm[:, None])
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break

    assignments = {
        ids[i]: int(resp[i].argmax()) for i in range(n_part)
    }
    classes = tuple(
        TrajectoryClass(
            weight=float(weights[c]),
            intercept=float(coefs[c, 0]),
            slope=float(coefs[c, 1]),
            variance=float(variances[c]),
            degenerate=bool(variances[c] <= 1e-8 or weights[c] <= 1e-6),
        )
        for c in range(n_classes)
    )
    return LctmFit(
        classes=classes,
        assignments=assignments,
        log_likelihood=trace[-1],
        ll_trace=tuple(trace),
        converged=converged,
        n_iterations=iterations,
    )


def compare_partitions(a: dict[str, int], b: dict[str, int]) -> float:
    """Best-permutation agreement between two hard partitions (0..1)."""
    keys = sorted(set(a) & set(b))
    if not keys:
        raise InsufficientData("partitions share no ids")
    labels_a = sorted({a[k] for k in keys})
    labels_b = sorted({b[k] for k in keys})
    conf = np.zeros((len(labels_a), len(labels_b)))
    index_a = {lab: i for i, lab in enumerate(labels_a)}
    index_b = {lab: i for i, lab in enumerate(labels_b)}
    for k in keys:
        conf[index_a[a[k]], index_b[b[k]]] += 1
    rows, cols = linear_sum_assignment(-conf)
    return float(conf[rows, cols].sum() / len(keys))
