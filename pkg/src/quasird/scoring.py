"""Admission rubric and forcing-variable reconstruction.

The original five-component rubric scores applicants 0-100.  Three of the
sub-scores (economic status, social group, district development status)
are pure functions of application-form fields.  The remaining two are
rebuilt statistically:

* the trade-specific education score (nominally 15 for everyone, 0/5/10
  in exceptional cases) is predicted from education attainment with
  course-specific regressions, excluding a donut of records within five
  points of the original cutoff where tampering concentrates, and
* the interview score is replaced by the residual of a regression on the
  other four sub-scores, their full interaction set, and course dummies,
  which strips the component a tamperer could target while keeping the
  committee's idiosyncratic assessment.

Every reconstructed component is divided by five, giving a 0-20 scale
forcing variable with far less heaping than the original.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .dataset import EDUCATION_CODE
from .errors import InsufficientDonutSample, UnknownDistrict
from .regression import ols

DONUT_HALF_WIDTH = 5.0
DISTRICT_STATUSES = ("developed", "moderately_developed", "least_developed")


@dataclass
class ScoreComponents:
    orig: tuple  # (s1..s5), as recorded
    recon: tuple  # (r1..r5); r1..r4 integers, r5 real
    recon_total: float


def load_district_table(path=None) -> dict:
    """district -> development status; bundled 75-row table by default."""
    if path is None:
        source = resources.files("quasird.data").joinpath("districts.csv")
        text = source.read_text(encoding="utf-8")
        rows = list(csv.DictReader(text.splitlines()))
    else:
        with open(path, encoding="utf-8", newline="") as handle:
            rows = list(csv.DictReader(handle))
    table = {}
    for entry in rows:
        status = entry["status"].strip()
        if status not in DISTRICT_STATUSES:
            raise UnknownDistrict(f"{entry['district']}: bad status {status!r}")
        table[entry["district"].strip()] = status
    return table


_BUNDLED_TABLE = None


def _district_table(table=None):
    global _BUNDLED_TABLE
    if table is not None:
        return table
    if _BUNDLED_TABLE is None:
        _BUNDLED_TABLE = load_district_table()
    return _BUNDLED_TABLE


def score_economic(food_sufficiency, percap_income):
    """(original s2, reconstructed r2); most favorable qualifying row wins."""
    if food_sufficiency in ("lt3_months", "no_land"):
        return 20, 4
    if food_sufficiency == "lt6_months" or percap_income < 3000:
        return 15, 3
    return 0, 0


def score_social(gender, caste, special_group, is_poor):
    """(original s3, reconstructed r3); rows evaluated top-down."""
    special = bool(special_group)
    if gender == "female":
        if caste == "dalit" or special:
            return 25, 5
        if is_poor:
            return 20, 4
        return 0, 0
    if caste in ("dalit", "janjati", "madhesi") or special:
        return 15, 3
    if is_poor:
        return 10, 2
    return 0, 0


def score_district(district, table=None):
    """(original s4, reconstructed r4) from the development-status table."""
    status = _district_table(table).get(district)
    if status is None:
        raise UnknownDistrict(district)
    points = {"least_developed": (10, 2), "moderately_developed": (5, 1), "developed": (0, 0)}
    return points[status]


def _round_to_multiple_of_five(x):
    # ties (multiples of 2.5) round away from zero
    return np.sign(x) * np.floor(np.abs(x) / 5.0 + 0.5) * 5.0


def _s1_design(records):
    edu = np.array([float(EDUCATION_CODE[r.education_level]) for r in records])
    trade_edu = np.array([float(r.trade_specific_education) for r in records])
    return np.column_stack([np.ones(len(records)), edu, trade_edu])


def _has_education(record):
    return (
        record.education_level is not None
        and record.trade_specific_education is not None
    )


def reconstruct_s1(panels, donut=DONUT_HALF_WIDTH) -> dict:
    """applicant_id -> r1 in {0,1,2,3}.

    Fits the original first sub-score on general and course-specific
    education attainment, separately per course (the course-interacted
    design factors into independent per-course regressions).  Records
    within ``donut`` of the original cutoff are excluded from fitting;
    predictions cover everyone.  Courses whose records all fall inside the
    donut use a pooled all-course model instead.
    """
    course_fits = {}
    pooled_rows = []
    fallback_courses = []
    for panel in panels:
        usable = [
            r
            for r in panel.records
            if _has_education(r)
            and abs(r.orig_total - panel.orig_threshold) >= donut
        ]
        pooled_rows.extend(usable)
        if not usable:
            fallback_courses.append(panel.course_id)
            continue
        if len(usable) < 2:
            raise InsufficientDonutSample(
                f"course {panel.course_id} has a single record outside the "
                f"|relative| >= {donut} donut"
            )
        X = _s1_design(usable)
        y = np.array([float(r.subscores[0]) for r in usable])
        course_fits[panel.course_id] = ols(
            X, y, names=["const", "education", "trade_edu"]
        )

    pooled_fit = None
    if fallback_courses:
        if len(pooled_rows) < 2:
            raise InsufficientDonutSample(
                "pooled fallback needs at least 2 records outside the donut"
            )
        X = _s1_design(pooled_rows)
        y = np.array([float(r.subscores[0]) for r in pooled_rows])
        pooled_fit = ols(X, y, names=["const", "education", "trade_edu"])

    out = {}
    for panel in panels:
        fit = course_fits.get(panel.course_id, pooled_fit)
        targets = [r for r in panel.records if _has_education(r)]
        if not targets:
            continue
        X = _s1_design(targets)
        retained = [["const", "education", "trade_edu"].index(c) for c in fit.column_names]
        pred = X[:, retained] @ fit.coefficients
        pred = np.clip(_round_to_multiple_of_five(pred), 0.0, 15.0)
        for record, value in zip(targets, pred):
            out[record.applicant_id] = int(round(value / 5.0))
    return out


S5_TERM_NAMES = [
    "s1", "s2", "s3", "s4",
    "s1s2", "s1s3", "s1s4", "s2s3", "s2s4", "s3s4",
    "s1s2s3", "s1s2s4", "s1s3s4", "s2s3s4",
    "s1s2s3s4",
]


def _s5_terms(subscores):
    s1, s2, s3, s4 = (float(v) for v in subscores[:4])
    return [
        s1, s2, s3, s4,
        s1 * s2, s1 * s3, s1 * s4, s2 * s3, s2 * s4, s3 * s4,
        s1 * s2 * s3, s1 * s2 * s4, s1 * s3 * s4, s2 * s3 * s4,
        s1 * s2 * s3 * s4,
    ]


def reconstruct_s5(panels) -> dict:
    """applicant_id -> r5 (residual of the interview-score model, / 5).

    Course dummies are absorbed by within-course demeaning, which leaves
    residuals identical to the full dummy design and orthogonal to both
    the interaction terms and the dummies.
    """
    records = [r for p in panels for r in p.records]
    X = np.array([_s5_terms(r.subscores) for r in records])
    y = np.array([float(r.subscores[4]) for r in records])
    course = np.array([r.course_id for r in records])

    _, codes = np.unique(course, return_inverse=True)
    n_courses = codes.max() + 1
    counts = np.bincount(codes).astype(float)

    def demean(M):
        sums = np.zeros((n_courses, M.shape[1]))
        np.add.at(sums, codes, M)
        return M - (sums / counts[:, None])[codes]

    Xd = demean(X)
    yd = y - (np.bincount(codes, weights=y) / counts)[codes]
    scale = np.abs(Xd).max()
    if scale <= 0:
        residual = yd
    else:
        fit = ols(Xd, yd, names=S5_TERM_NAMES)
        residual = fit.residuals
    return {r.applicant_id: float(e) / 5.0 for r, e in zip(records, residual)}


def assemble_reconstructed(r1, r2, r3, r4, r5) -> float:
    return float(r1 + r2 + r3 + r4 + r5)


def score_record(record, table=None):
    """(r2, r3, r4) for one record, or None where form fields are missing.

    The poverty input to the social score is the rubric-derived economic
    status (r2 > 0), not the recorded sub-score, so tampered originals
    cannot leak into the reconstruction.
    """
    r2 = r3 = r4 = None
    if record.food_sufficiency is not None and record.percap_income is not None:
        _, r2 = score_economic(record.food_sufficiency, record.percap_income)
        if record.caste is not None:
            _, r3 = score_social(
                record.gender, record.caste, record.special_group, is_poor=r2 > 0
            )
    if record.district is not None:
        _, r4 = score_district(record.district, table)
    return r2, r3, r4


def score_panels(panels, district_table=None, donut=DONUT_HALF_WIDTH) -> dict:
    """Reconstruct all five components for every record.

    Attaches a ScoreComponents to each record (``record.recon``) and
    returns applicant_id -> ScoreComponents.  Records with missing form
    fields get recon=None and are left out of the returned map.
    """
    table = _district_table(district_table)
    r1_map = reconstruct_s1(panels, donut=donut)
    r5_map = reconstruct_s5(panels)
    out = {}
    for panel in panels:
        for record in panel.records:
            r2, r3, r4 = score_record(record, table)
            r1 = r1_map.get(record.applicant_id)
            r5 = r5_map.get(record.applicant_id)
            if None in (r1, r2, r3, r4, r5):
                record.recon = None
                continue
            components = ScoreComponents(
                orig=tuple(record.subscores),
                recon=(r1, r2, r3, r4, r5),
                recon_total=assemble_reconstructed(r1, r2, r3, r4, r5),
            )
            record.recon = components
            out[record.applicant_id] = components
    return out
