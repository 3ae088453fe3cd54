"""Cohort-level statistics on fitted speckle parameters.

Region comparison uses pooled-variance Student's t-tests with a Bonferroni
threshold computed from the number of comparisons actually run.
Stratification by patient characteristics uses one-way ANOVA (Tukey HSD
follow-up when significant) for categorical fields and two-tailed Pearson
correlation for numeric ones.  Records missing a field are dropped from the
analyses that need it and kept everywhere else.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats as _stats

from .envelope_models import FAMILIES, FAMILY_ORDER
from .region_analysis import REGIONS, Region
from .special import betainc

__all__ = [
    "InsufficientDataError",
    "TTestResult",
    "AnovaResult",
    "TukeyPair",
    "CorrelationResult",
    "two_sample_t_test",
    "student_t_sf",
    "f_sf",
    "bonferroni_alpha",
    "family_wise_error",
    "one_way_anova",
    "tukey_posthoc",
    "pearson_correlation",
    "normality_summary",
    "PatientRecord",
    "read_cohort_csv",
    "write_cohort_csv",
    "filter_rare_categories",
    "CohortRow",
    "CohortTable",
    "ComparisonTest",
    "RegionComparisonReport",
    "run_region_comparison",
    "StratificationTest",
    "StratificationReport",
    "run_stratification",
    "CATEGORICAL_FIELDS",
    "NUMERIC_FIELDS",
    "REGION_PAIRS",
]

log = logging.getLogger(__name__)


class InsufficientDataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# distribution tails via the regularised incomplete beta function


def student_t_sf2(t, df):
    """Two-sided tail probability P(|T| >= |t|) for Student's t."""
    t = abs(float(t))
    if math.isinf(t):
        return 0.0
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def student_t_sf(t, df):
    """One-sided upper tail P(T >= t)."""
    half = 0.5 * student_t_sf2(t, df)
    return half if t >= 0 else 1.0 - half


def f_sf(f, d1, d2):
    """Upper tail of the F distribution with (d1, d2) degrees of freedom."""
    f = float(f)
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return float(betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)))


# ---------------------------------------------------------------------------
# tests


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: float


@dataclass(frozen=True)
class AnovaResult:
    F: float
    p: float
    df_between: int
    df_within: int


@dataclass(frozen=True)
class TukeyPair:
    i: int
    j: int
    diff: float
    q: float
    p_adj: float
    p_unadj: float


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    p: float
    n: int


def _clean(values, name):
    a = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def two_sample_t_test(a, b, equal_var: bool = True) -> TTestResult:
    """Two-sided independent-samples t-test.

    Pooled-variance Student's test by default; ``equal_var=False`` gives
    Welch's test with Satterthwaite degrees of freedom.
    """
    a, b = _clean(a, "a"), _clean(b, "b")
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise InsufficientDataError("each group needs at least 2 values")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if equal_var:
        df = na + nb - 2
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        se = math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    else:
        sa, sb = va / na, vb / nb
        se = math.sqrt(sa + sb)
        df = (sa + sb) ** 2 / (sa**2 / (na - 1) + sb**2 / (nb - 1)) if se > 0 else na + nb - 2
    diff = ma - mb
    if se == 0:
        if diff == 0:
            raise InsufficientDataError("both groups are constant and equal")
        t = math.copysign(math.inf, diff)
    else:
        t = diff / se
    return TTestResult(float(t), student_t_sf2(t, df), float(df))


def bonferroni_alpha(alpha: float, n_comparisons: int) -> float:
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if n_comparisons < 1:
        raise ValueError("n_comparisons must be >= 1")
    return alpha / n_comparisons


def family_wise_error(alpha: float, n_comparisons: int) -> float:
    """Chance of at least one false positive over independent tests."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return 1.0 - (1.0 - alpha) ** n_comparisons


def _groups(groups):
    out = [_clean(g, "group") for g in groups]
    if len(out) < 2:
        raise InsufficientDataError("need at least 2 groups")
    if any(g.size < 2 for g in out):
        raise InsufficientDataError("each group needs at least 2 values")
    return out


def _anova_parts(groups):
    all_values = np.concatenate(groups)
    grand = all_values.mean()
    ss_between = sum(g.size * (g.mean() - grand) ** 2 for g in groups)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in groups)
    return ss_between, ss_within, all_values.size


def one_way_anova(groups) -> AnovaResult:
    groups = _groups(groups)
    ss_between, ss_within, n = _anova_parts(groups)
    k = len(groups)
    if ss_between + ss_within == 0:
        raise InsufficientDataError("total variance is zero")
    d1, d2 = k - 1, n - k
    if ss_within == 0:
        F = math.inf
    else:
        F = (ss_between / d1) / (ss_within / d2)
    return AnovaResult(float(F), f_sf(F, d1, d2), d1, d2)


def tukey_posthoc(groups) -> list[TukeyPair]:
    """Tukey HSD (Tukey-Kramer for unequal sizes) on all group pairs.

    ``p_unadj`` is the matching pairwise t-test p-value using the pooled
    within-group variance, for comparison against ``p_adj``.
    """
    groups = _groups(groups)
    ss_between, ss_within, n = _anova_parts(groups)
    if ss_between + ss_within == 0:
        raise InsufficientDataError("total variance is zero")
    k = len(groups)
    df = n - k
    msw = ss_within / df
    out = []
    for i, j in itertools.combinations(range(k), 2):
        gi, gj = groups[i], groups[j]
        diff = float(gi.mean() - gj.mean())
        se = math.sqrt(msw / 2.0 * (1.0 / gi.size + 1.0 / gj.size))
        if se == 0:
            q = 0.0 if diff == 0 else math.inf
        else:
            q = abs(diff) / se
        if q == 0:
            p_adj = p_unadj = 1.0
        elif math.isinf(q):
            p_adj = p_unadj = 0.0
        else:
            p_adj = float(_stats.studentized_range.sf(q, k, df))
            p_unadj = student_t_sf2(q / math.sqrt(2.0), df)
        out.append(TukeyPair(i, j, diff, float(q), p_adj, p_unadj))
    return out


def pearson_correlation(x, y) -> CorrelationResult:
    """Pearson's rho with a two-tailed p-value from the t transform."""
    x, y = _clean(x, "x"), _clean(y, "y")
    if x.size != y.size:
        raise ValueError("x and y must have equal length")
    n = x.size
    if n < 3:
        raise InsufficientDataError("need at least 3 pairs")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise InsufficientDataError("correlation is undefined for constant input")
    rho = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    if abs(rho) == 1.0:
        return CorrelationResult(rho, 0.0, n)
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return CorrelationResult(rho, student_t_sf2(t, n - 2), n)


def normality_summary(values) -> dict:
    """Sample skewness and excess kurtosis (informational only)."""
    v = _clean(values, "values")
    if v.size < 4 or np.ptp(v) == 0:
        return {"n": int(v.size), "skewness": math.nan, "excess_kurtosis": math.nan}
    return {
        "n": int(v.size),
        "skewness": float(_stats.skew(v, bias=False)),
        "excess_kurtosis": float(_stats.kurtosis(v, bias=False)),
    }


# ---------------------------------------------------------------------------
# patient records

CATEGORICAL_FIELDS = ("sex", "ethnicity", "primary_diagnosis", "donor_type")
NUMERIC_FIELDS = ("age", "bmi", "donor_age")
COHORT_COLUMNS = ("patient_id", "age", "sex", "bmi", "ethnicity", "primary_diagnosis",
                  "donor_type", "donor_age")


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    age: Optional[float] = None
    sex: Optional[str] = None
    bmi: Optional[float] = None
    ethnicity: Optional[str] = None
    primary_diagnosis: Optional[str] = None
    donor_type: Optional[str] = None
    donor_age: Optional[float] = None

    def __post_init__(self):
        for name in NUMERIC_FIELDS:
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive when present, got {v!r}")

    @property
    def age_at_transplant(self):
        return self.age


def _parse_num(text):
    text = text.strip()
    return float(text) if text else None


def _parse_cat(text):
    text = text.strip()
    return text or None


def read_cohort_csv(path) -> list[PatientRecord]:
    """Read patient characteristics; empty cells are missing values.

    Lines starting with ``#`` are treated as comments.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        missing = set(COHORT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"cohort CSV lacks columns {sorted(missing)}")
        records = []
        for row in reader:
            kwargs = {"patient_id": row["patient_id"].strip()}
            for name in NUMERIC_FIELDS:
                kwargs[name] = _parse_num(row[name])
            for name in CATEGORICAL_FIELDS:
                kwargs[name] = _parse_cat(row[name])
            records.append(PatientRecord(**kwargs))
    return records


def write_cohort_csv(records, path, header_comment: str | None = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COHORT_COLUMNS)
        for r in records:
            writer.writerow(["" if getattr(r, c) is None else _fmt(getattr(r, c)) for c in COHORT_COLUMNS])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def filter_rare_categories(records, field: str, min_count: int = 10, key=None):
    """Drop records whose ``field`` value occurs fewer than ``min_count`` times.

    Records with the field missing are kept. ``key`` overrides attribute
    access for non-record rows.
    """
    get = key or (lambda r: getattr(r, field))
    records = list(records)
    counts = Counter(get(r) for r in records if get(r) is not None)
    rare = {value for value, c in counts.items() if c < min_count}
    if rare:
        log.info("removing rare %s categories (< %d): %s", field, min_count,
                 ", ".join(f"{v} ({counts[v]})" for v in sorted(rare)))
    return [r for r in records if get(r) not in rare]


# ---------------------------------------------------------------------------
# cohort table


@dataclass
class CohortRow:
    patient_id: str
    image_id: str
    record: Optional[PatientRecord]
    # (region key, family, parameter name) -> value
    params: dict = field(default_factory=dict)

    def value(self, region, family, param):
        return self.params.get((Region.parse(region).key, family, param), math.nan)


@dataclass
class CohortTable:
    rows: list
    unmatched: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def column(self, region, family, param) -> np.ndarray:
        return np.array([r.value(region, family, param) for r in self.rows], dtype=float)

    @classmethod
    def from_summary_rows(cls, summary_rows, records=None) -> "CohortTable":
        """Join fit-summary rows (see ``SUMMARY_COLUMNS``) with patient records.

        Images are matched to patients by ``image_id == patient_id``.  When
        records are supplied, images without a record are listed in
        ``unmatched`` and left out.
        """
        by_image: dict[str, dict] = {}
        for row in summary_rows:
            status = str(row.get("status", "ok"))
            if status != "ok":
                continue
            family = row["family"]
            params = by_image.setdefault(row["image_id"], {})
            for name, _ in FAMILIES[family].fields_:
                raw = row.get(name, "")
                if raw not in ("", None):
                    params[(Region.parse(row["region"]).key, family, name)] = float(raw)
        lookup = None if records is None else {r.patient_id: r for r in records}
        rows, unmatched = [], []
        for image_id in sorted(by_image):
            rec = None
            if lookup is not None:
                rec = lookup.get(image_id)
                if rec is None:
                    unmatched.append(image_id)
                    continue
            rows.append(CohortRow(image_id, image_id, rec, by_image[image_id]))
        if unmatched:
            log.warning("%d images have no patient record: %s", len(unmatched), ", ".join(unmatched))
        return cls(rows, unmatched)


# ---------------------------------------------------------------------------
# region comparison

REGION_PAIRS = tuple(itertools.combinations(REGIONS, 2))


@dataclass
class ComparisonTest:
    family: str
    param: str
    region_a: str
    region_b: str
    n_a: int
    n_b: int
    t: float
    p: float
    error: str = ""
    significant_alpha: bool = False
    significant_alpha_c: bool = False


@dataclass
class RegionComparisonReport:
    alpha: float
    alpha_c: float
    n_comparisons: int
    family_wise_error: float
    tests: list
    flagged_families: list

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "alpha_c": self.alpha_c,
            "n_comparisons": self.n_comparisons,
            "family_wise_error": self.family_wise_error,
            "flagged_families": list(self.flagged_families),
            "tests": [asdict(t) for t in self.tests],
        }


def run_region_comparison(cohort: CohortTable, families=FAMILY_ORDER, alpha: float = 0.05,
                          equal_var: bool = True) -> RegionComparisonReport:
    """Pairwise region t-tests for every parameter of every family.

    A family is flagged when, for each of the three region pairs, at least
    one of its parameters differs at the Bonferroni-corrected level.
    """
    if len(cohort) < 2:
        raise InsufficientDataError("region comparison needs at least 2 patients")
    families = [f for f in FAMILY_ORDER if f in set(families)]
    tests = []
    for family in families:
        for param, _ in FAMILIES[family].fields_:
            for ra, rb in REGION_PAIRS:
                a = cohort.column(ra, family, param)
                b = cohort.column(rb, family, param)
                a, b = a[np.isfinite(a)], b[np.isfinite(b)]
                test = ComparisonTest(family, param, ra.key, rb.key, a.size, b.size, math.nan, math.nan)
                try:
                    res = two_sample_t_test(a, b, equal_var=equal_var)
                    test.t, test.p = res.t, res.p
                except (InsufficientDataError, ValueError) as exc:
                    test.error = str(exc)
                tests.append(test)
    n = len(tests)
    alpha_c = bonferroni_alpha(alpha, n)
    for t in tests:
        if math.isfinite(t.p):
            t.significant_alpha = t.p <= alpha
            t.significant_alpha_c = t.p <= alpha_c
    flagged = []
    for family in families:
        pair_hit = {
            (ra.key, rb.key): any(
                t.significant_alpha_c for t in tests
                if t.family == family and (t.region_a, t.region_b) == (ra.key, rb.key)
            )
            for ra, rb in REGION_PAIRS
        }
        if all(pair_hit.values()):
            flagged.append(family)
    return RegionComparisonReport(alpha, alpha_c, n, family_wise_error(alpha, n), tests, flagged)


# ---------------------------------------------------------------------------
# stratification


@dataclass
class StratificationTest:
    characteristic: str
    region: str
    family: str
    param: str
    test: str
    statistic: float
    p: float
    n: int
    groups: list = field(default_factory=list)
    posthoc: list = field(default_factory=list)
    error: str = ""
    significant_alpha: bool = False
    significant_alpha_c: bool = False


@dataclass
class StratificationReport:
    family: str
    alpha: float
    alpha_c: float
    n_tests: int
    tests: list
    normality: dict

    def significant(self, level: str = "alpha") -> list:
        attr = "significant_alpha" if level == "alpha" else "significant_alpha_c"
        return [t for t in self.tests if getattr(t, attr)]

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "alpha": self.alpha,
            "alpha_c": self.alpha_c,
            "n_tests": self.n_tests,
            "normality": self.normality,
            "tests": [asdict(t) for t in self.tests],
        }


def run_stratification(cohort: CohortTable, family: str = "Nakagami", alpha: float = 0.05,
                       min_category_count: int = 10,
                       characteristics=CATEGORICAL_FIELDS + NUMERIC_FIELDS) -> StratificationReport:
    """Test one family's regional parameters against patient characteristics.

    Primary diagnoses seen fewer than ``min_category_count`` times are
    removed before their ANOVA.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    rows = [r for r in cohort.rows if r.record is not None]
    tests = []
    normality = {}
    for region in REGIONS:
        for param, _ in FAMILIES[family].fields_:
            normality[f"{region.key}.{param}"] = normality_summary(
                [v for v in (r.value(region, family, param) for r in rows) if math.isfinite(v)]
            )
            for char in characteristics:
                usable = [
                    r for r in rows
                    if getattr(r.record, char) is not None
                    and math.isfinite(r.value(region, family, param))
                ]
                if char in CATEGORICAL_FIELDS:
                    if char == "primary_diagnosis":
                        usable = filter_rare_categories(
                            usable, char, min_category_count, key=lambda r: r.record.primary_diagnosis
                        )
                    tests.append(_categorical_test(usable, char, region, family, param, alpha))
                else:
                    tests.append(_numeric_test(usable, char, region, family, param))
    n = len(tests)
    alpha_c = bonferroni_alpha(alpha, n) if n else alpha
    for t in tests:
        if math.isfinite(t.p):
            t.significant_alpha = t.p <= alpha
            t.significant_alpha_c = t.p <= alpha_c
    return StratificationReport(family, alpha, alpha_c, n, tests, normality)


def _categorical_test(rows, char, region, family, param, alpha):
    levels = sorted({getattr(r.record, char) for r in rows})
    groups = [
        [r.value(region, family, param) for r in rows if getattr(r.record, char) == lv]
        for lv in levels
    ]
    test = StratificationTest(char, region.key, family, param, "anova", math.nan, math.nan,
                              len(rows), groups=levels)
    try:
        res = one_way_anova(groups)
    except (InsufficientDataError, ValueError) as exc:
        test.error = str(exc)
        return test
    test.statistic, test.p = res.F, res.p
    if res.p <= alpha:
        test.posthoc = [
            {"a": levels[p.i], "b": levels[p.j], "diff": p.diff, "q": p.q, "p_adj": p.p_adj}
            for p in tukey_posthoc(groups)
        ]
    return test


def _numeric_test(rows, char, region, family, param):
    x = [getattr(r.record, char) for r in rows]
    y = [r.value(region, family, param) for r in rows]
    test = StratificationTest(char, region.key, family, param, "pearson", math.nan, math.nan, len(rows))
    try:
        res = pearson_correlation(x, y)
    except (InsufficientDataError, ValueError) as exc:
        test.error = str(exc)
        return test
    test.statistic, test.p = res.rho, res.p
    return test
