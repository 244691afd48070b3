"""Within-dataset paired tests and their cross-dataset combination.

Every ordered pair of pipelines ``(a, b)`` is tested one-tailed for
"a scores higher than b".  Inside a dataset the test is an exhaustive
sign-flip permutation t-test when fewer than 20 subjects are paired, and a
Wilcoxon signed-rank test otherwise.  Dataset p-values are merged with a
weighted Stouffer Z (weights sqrt(n_subjects)), Bonferroni-corrected for the
N_pipelines - 1 comparisons each pipeline takes part in, and standardized
mean differences are merged with the same weights.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.stats import rankdata

from . import kernels
from .errors import EmptyInput, TooFewPipelines

log = logging.getLogger(__name__)

_NORMAL = NormalDist()
P_CLIP = 1e-15
PERM_TEST_MAX_SUBJECTS = 20  # the t-test branch applies strictly below this
WILCOXON_EXACT_MAX = 25
ALL_ZERO = "all_zero_diffs"
ZERO_VARIANCE = "zero_variance"


class TestResult(NamedTuple):
    statistic: float
    pvalue: float
    n: int
    flag: str = ""


class SmdResult(NamedTuple):
    smd: float
    zero_variance: bool


def norm_cdf(z: float) -> float:
    # erfc keeps full relative precision in the lower tail
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def norm_ppf(p: float) -> float:
    return _NORMAL.inv_cdf(p)


def _sum_tolerance(d: np.ndarray) -> float:
    return 1e-12 * float(np.abs(d).sum())


def perm_paired_t(diffs, max_exhaustive: int = PERM_TEST_MAX_SUBJECTS) -> TestResult:
    """One-tailed sign-flip permutation paired t-test of mean(diffs) > 0.

    All 2**n sign patterns are enumerated, the identity included, so the
    p-value is a multiple of 2**-n and never below it.
    """
    d = np.ascontiguousarray(diffs, dtype=np.float64)
    n = d.shape[0]
    if n < 2:
        raise ValueError("the paired t-test needs at least two differences")
    if n > max_exhaustive:
        raise ValueError(f"exhaustive enumeration limited to n <= {max_exhaustive}, got {n}")
    if not np.any(d):
        return TestResult(0.0, 1.0, n, ALL_ZERO)

    mean = d.mean()
    sd = d.std(ddof=1)
    t_obs = mean / (sd / math.sqrt(n)) if sd > 0 else math.copysign(math.inf, mean)
    # For a fixed sum of squares t is strictly increasing in the pattern sum,
    # so ranking patterns by their sums ranks them by t (+-inf at the extremes).
    s_obs = float(d.sum())
    count = kernels.signflip_count(d, s_obs - _sum_tolerance(d))
    return TestResult(float(t_obs), count / 2.0**n, n)


def wilcoxon_signed_rank(diffs) -> TestResult:
    """One-tailed Wilcoxon signed-rank test of a positive location shift.

    Zero differences are dropped and tied magnitudes share average ranks.
    Up to 25 non-zero differences the null distribution of the positive rank
    sum is counted exactly over all sign assignments; beyond that a normal
    approximation with tie-corrected variance and 0.5 continuity correction
    is used.
    """
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0]
    n = d.shape[0]
    if n == 0:
        return TestResult(0.0, 1.0, 0, ALL_ZERO)
    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())
    if n <= WILCOXON_EXACT_MAX:
        # average ranks are multiples of 1/2, so doubled ranks are integers
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        counts = kernels.signed_rank_counts(ranks2)
        w2 = int(ranks2[d > 0].sum())
        return TestResult(w_plus, int(counts[w2:].sum()) / 2.0**n, n)

    _, tie_sizes = np.unique(ranks, return_counts=True)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float((tie_sizes**3 - tie_sizes).sum()) / 48.0
    z = (w_plus - mean - 0.5) / math.sqrt(var)
    return TestResult(w_plus, norm_sf(z), n)


def stouffer(p_values: Sequence[float], weights: Sequence[float]) -> float:
    """Weighted Stouffer combination of one-tailed p-values."""
    p = np.asarray(p_values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if p.size == 0:
        raise EmptyInput("no p-values to combine")
    if p.shape != w.shape:
        raise ValueError("p_values and weights differ in length")
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValueError("p-values must lie in [0, 1]")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    p = np.clip(p, P_CLIP, 1 - P_CLIP)
    z = np.array([-norm_ppf(pi) for pi in p])
    big_z = float(np.dot(w, z) / math.sqrt(float(np.dot(w, w))))
    return norm_sf(big_z)


def bonferroni(p: float, m: int) -> float:
    if m < 1:
        raise ValueError("number of comparisons must be >= 1")
    return min(1.0, m * p)


def smd(diffs) -> SmdResult:
    """Standardized mean difference mean(d) / sd(d) with the n-1 deviation."""
    d = np.asarray(diffs, dtype=np.float64)
    if d.size < 2:
        raise ValueError("need at least two differences")
    sd = d.std(ddof=1)
    if not sd > 0:
        return SmdResult(0.0, True)
    return SmdResult(float(d.mean() / sd), False)


def smd_interval(effect: float, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Approximate 95% interval from var(SMD) ~ 1/n + SMD^2 / (2n)."""
    half = z * math.sqrt(1.0 / n + effect**2 / (2.0 * n))
    return effect - half, effect + half


def combine_smd(smds: Sequence[float], weights: Sequence[float]) -> float:
    e = np.asarray(smds, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if e.size == 0:
        raise EmptyInput("no effects to combine")
    if e.shape != w.shape:
        raise ValueError("smds and weights differ in length")
    return float(np.dot(w, e) / w.sum())


def hypothesis_key(a: str, b: str) -> str:
    return f"{a} > {b}"


@dataclass
class DatasetResult:
    p: float
    smd: float
    n: int
    test: str
    ci_low: float
    ci_high: float
    flags: list[str] = field(default_factory=list)


@dataclass
class CombinedResult:
    pipeline_a: str
    pipeline_b: str
    p: float
    p_corrected: float
    smd: float
    significant: bool
    suppressed: bool
    n_datasets: int
    flags: list[str] = field(default_factory=list)


@dataclass
class MetaReport:
    pipelines: list[str]
    alpha: float
    per_dataset: dict[str, dict[str, DatasetResult]]
    combined: dict[str, CombinedResult]

    def to_dict(self) -> dict:
        r = _sig9
        per_dataset = {
            ds: {
                h: {
                    "p": r(v.p),
                    "smd": r(v.smd),
                    "n": v.n,
                    "test": v.test,
                    "ci_low": r(v.ci_low),
                    "ci_high": r(v.ci_high),
                    "flags": list(v.flags),
                }
                for h, v in hyps.items()
            }
            for ds, hyps in self.per_dataset.items()
        }
        combined = {
            h: {
                "pipeline_a": v.pipeline_a,
                "pipeline_b": v.pipeline_b,
                "p": r(v.p),
                "p_corrected": r(v.p_corrected),
                "smd": r(v.smd),
                "significant_at_alpha": v.significant,
                "suppressed": v.suppressed,
                "n_datasets": v.n_datasets,
                "flags": list(v.flags),
            }
            for h, v in self.combined.items()
        }
        return {
            "alpha": r(self.alpha),
            "pipelines": list(self.pipelines),
            "per_dataset": per_dataset,
            "combined": combined,
        }


def _sig9(x: float) -> float:
    return float(f"{x:.9g}")


def _score_matrix(rows: Iterable[tuple[str, str, str, float]]):
    """dataset -> subject -> pipeline -> score, skipping missing scores."""
    table: dict[str, dict[str, dict[str, float]]] = {}
    for dataset, subject, pipeline, score in rows:
        if score is None or not math.isfinite(score):
            continue
        table.setdefault(dataset, {}).setdefault(subject, {})[pipeline] = float(score)
    return table


def meta_analyze(subject_scores, pipelines: Sequence[str] | None = None, alpha: float = 0.05) -> MetaReport:
    """Run the full pairwise meta-analysis.

    ``subject_scores`` is an iterable of ``(dataset, subject, pipeline,
    score)`` rows holding one session-averaged score per subject; a missing
    score is ``None`` or NaN and removes that subject from the pairs it is
    part of.
    """
    table = _score_matrix(subject_scores)
    if pipelines is None:
        pipelines = sorted({p for subs in table.values() for s in subs.values() for p in s})
    pipelines = list(pipelines)
    if len(pipelines) < 2:
        raise TooFewPipelines("meta-analysis needs at least two pipelines")
    m = len(pipelines) - 1

    per_dataset: dict[str, dict[str, DatasetResult]] = {}
    combined: dict[str, CombinedResult] = {}
    for a in pipelines:
        for b in pipelines:
            if a == b:
                continue
            key = hypothesis_key(a, b)
            ps, smds, p_w, e_w, flags = [], [], [], [], []
            for dataset in sorted(table):
                subs = table[dataset]
                diffs = np.array(
                    [subs[s][a] - subs[s][b] for s in sorted(subs) if a in subs[s] and b in subs[s]]
                )
                n = diffs.size
                if n < 2:
                    log.warning("dataset %s: %d paired subjects for %s, skipped", dataset, n, key)
                    continue
                if n < PERM_TEST_MAX_SUBJECTS:
                    res, test = perm_paired_t(diffs), "perm_paired_t"
                else:
                    res, test = wilcoxon_signed_rank(diffs), "wilcoxon"
                eff = smd(diffs)
                ds_flags = [res.flag] if res.flag else []
                if eff.zero_variance:
                    ds_flags.append(ZERO_VARIANCE)
                lo, hi = smd_interval(eff.smd, n)
                per_dataset.setdefault(dataset, {})[key] = DatasetResult(
                    res.pvalue, eff.smd, n, test, lo, hi, ds_flags
                )
                w = math.sqrt(n)
                ps.append(res.pvalue)
                p_w.append(w)
                if not eff.zero_variance:
                    smds.append(eff.smd)
                    e_w.append(w)
                flags.extend(f"{dataset}:{f}" for f in ds_flags)
            if not ps:
                log.warning("no dataset supports hypothesis %s", key)
                continue
            p = stouffer(ps, p_w)
            effect = combine_smd(smds, e_w) if smds else 0.0
            p_corr = bonferroni(p, m)
            combined[key] = CombinedResult(
                a, b, p, p_corr, effect, p_corr < alpha, effect < 0, len(ps), flags
            )
    return MetaReport(pipelines, alpha, per_dataset, combined)
