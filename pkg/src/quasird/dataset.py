"""Applicant panel: loading, validation, serialization, and outcome
resolution.

The on-disk format is a single UTF-8 CSV with one row per applicant.  Fixed
columns come first, then one ``<name>_base`` / ``<name>_fu1`` pair per
outcome (``<name>_fu2`` optional).  Empty cell = missing.  Panels group the
rows by course (the training event, which is also the cluster unit for all
inference) and are treated as immutable once estimation starts.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .errors import (
    DuplicateApplicantId,
    MalformedCsv,
    UnknownEnumValue,
    UnknownOutcome,
)

GENDERS = ("female", "male")
CASTES = ("dalit", "janjati", "madhesi", "muslim", "other")
SPECIAL_FLAGS = ("widow", "displaced", "ex_combatant", "disabled", "hiv", "bonded")
EDUCATION_LEVELS = (
    "illiterate",
    "below_class5",
    "class5_8",
    "class9_10",
    "slc_pass",
    "plus2",
    "bachelor_plus",
)
FOOD_SUFFICIENCY = ("lt3_months", "lt6_months", "ge6_months", "no_land")
TRADES = (
    "farming",
    "poultry",
    "food_hospitality",
    "electrical_electronics_computer",
    "handicraft_incense",
    "construction_mechanical_automobile",
    "beautician_barber",
    "tailoring_garment_textile",
    "security_guard",
)

# Loader supports: any multiple of five inside the sub-score range.  The
# rubric emits a narrower set for s2 ({0,15,20}) but observed ranking forms
# contain off-rubric values, so validation accepts the wider support.
SUBSCORE_CAPS = (15, 20, 25, 10, 30)

FIXED_COLUMNS = [
    "applicant_id",
    "course_id",
    "cohort",
    "seats",
    "trade",
    "gender",
    "age",
    "caste",
    "special_group",
    "education_level",
    "trade_specific_education",
    "food_sufficiency",
    "percap_income",
    "district",
    "s1",
    "s2",
    "s3",
    "s4",
    "s5",
    "treated",
    "attrited_w1",
    "attrited_w2",
]

# demographic fields that may be missing (explicit None + per-field flag)
OPTIONAL_FIELDS = (
    "age",
    "caste",
    "education_level",
    "trade_specific_education",
    "food_sufficiency",
    "percap_income",
    "district",
)


@dataclass
class OutcomeCell:
    baseline: float
    followup: float | None = None
    followup2: float | None = None


@dataclass
class ApplicantRecord:
    applicant_id: int
    course_id: int
    cohort: int
    gender: str
    age: float | None
    caste: str | None
    special_group: frozenset
    education_level: str | None
    trade_specific_education: int | None
    food_sufficiency: str | None
    percap_income: float | None
    district: str | None
    subscores: tuple  # (s1, s2, s3, s4, s5)
    treated: int
    outcomes: dict
    attrited_w1: int
    attrited_w2: int
    recon: "object | None" = None  # ScoreComponents, filled by scoring

    @property
    def orig_total(self) -> float:
        return float(sum(self.subscores))

    @property
    def recon_total(self) -> float | None:
        return None if self.recon is None else self.recon.recon_total


@dataclass
class CoursePanel:
    course_id: int
    records: list
    seats: int
    trade: str
    orig_threshold: float
    sim_threshold: float | None = None

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class OutcomeSpec:
    """How to turn one named outcome (or baseline covariate) into a vector.

    ``wave`` picks the measurement wave: "fu1", "fu2", or "base".
    ``differenced`` subtracts the baseline from the chosen follow-up wave.
    ``conditional_filter`` names another outcome that must be positive at
    the measured wave for the record to enter the sample.
    """

    name: str
    differenced: bool = True
    conditional_filter: str | None = None
    wave: str = "fu1"

    def label(self) -> str:
        parts = [self.name, "diff" if self.differenced else "level"]
        if self.wave != "fu1":
            parts.append(self.wave)
        if self.conditional_filter:
            parts.append(f"if_{self.conditional_filter}")
        return ":".join(parts)


# ------------------------------------------------------------------ parsing


def _parse_int(text, line, column, issues):
    try:
        return int(text)
    except ValueError:
        issues.append(f"line {line}, column {column}: not an integer: {text!r}")
        return None


def _parse_float(text, line, column, issues):
    try:
        return float(text)
    except ValueError:
        issues.append(f"line {line}, column {column}: not a number: {text!r}")
        return None


def _parse_enum(text, allowed, line, column, enum_issues):
    if text in allowed:
        return text
    enum_issues.append(
        f"line {line}, column {column}: {text!r} not in {{{', '.join(allowed)}}}"
    )
    return None


def _open_text(source):
    if isinstance(source, (str, bytes)) and not isinstance(source, bytes):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, io.TextIOBase):
        return source
    # binary stream
    return io.TextIOWrapper(source, encoding="utf-8")


def _raise_collected(issues, enum_issues, duplicate):
    if duplicate is not None:
        raise DuplicateApplicantId(duplicate[0], f"line {duplicate[1]}")
    if issues:
        head = "; ".join(issues[:8])
        more = f" (+{len(issues) - 8} more)" if len(issues) > 8 else ""
        raise MalformedCsv(head + more)
    if enum_issues:
        head = "; ".join(enum_issues[:8])
        more = f" (+{len(enum_issues) - 8} more)" if len(enum_issues) > 8 else ""
        raise UnknownEnumValue(head + more)


def load_panel(csv_source) -> list:
    """Parse and validate the panel CSV, grouped by course.

    Returns CoursePanel objects sorted by course_id, records sorted by
    applicant_id, with the per-course original threshold derived as the
    seats-th highest original total score.
    """
    handle = _open_text(csv_source)
    reader = csv.reader(handle)
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedCsv("empty input") from None

    missing = [c for c in FIXED_COLUMNS if c not in header]
    if missing:
        raise MalformedCsv(f"missing required columns: {', '.join(missing)}")
    outcome_names = []
    for col in header:
        if col in FIXED_COLUMNS:
            continue
        if col.endswith("_base"):
            outcome_names.append(col[:-5])
        elif col.endswith("_fu1") or col.endswith("_fu2"):
            continue
        else:
            raise MalformedCsv(f"unexpected column: {col!r}")
    for name in outcome_names:
        if f"{name}_fu1" not in header:
            raise MalformedCsv(f"outcome {name!r} has {name}_base but no {name}_fu1")
    for col in header:
        if col.endswith("_fu1") and col[:-4] not in outcome_names:
            raise MalformedCsv(f"column {col!r} has no matching {col[:-4]}_base")
        if col.endswith("_fu2") and col[:-4] not in outcome_names:
            raise MalformedCsv(f"column {col!r} has no matching {col[:-4]}_base")
    has_fu2 = {name: f"{name}_fu2" in header for name in outcome_names}
    col_index = {c: i for i, c in enumerate(header)}

    issues: list = []
    enum_issues: list = []
    duplicate = None
    seen_ids: dict = {}
    records: list = []
    course_meta: dict = {}

    for line_no, row in enumerate(reader, start=2):
        if len(row) != len(header):
            issues.append(
                f"line {line_no}: expected {len(header)} fields, found {len(row)}"
            )
            continue

        def cell(col):
            return row[col_index[col]].strip()

        aid = _parse_int(cell("applicant_id"), line_no, "applicant_id", issues)
        course = _parse_int(cell("course_id"), line_no, "course_id", issues)
        cohort = _parse_int(cell("cohort"), line_no, "cohort", issues)
        seats = _parse_int(cell("seats"), line_no, "seats", issues)
        trade = _parse_enum(cell("trade"), TRADES, line_no, "trade", enum_issues)
        gender = _parse_enum(cell("gender"), GENDERS, line_no, "gender", enum_issues)

        age = None
        if cell("age"):
            age = _parse_float(cell("age"), line_no, "age", issues)
        caste = None
        if cell("caste"):
            caste = _parse_enum(cell("caste"), CASTES, line_no, "caste", enum_issues)
        flags = set()
        if cell("special_group"):
            for flag in cell("special_group").split(";"):
                flag = flag.strip()
                parsed = _parse_enum(flag, SPECIAL_FLAGS, line_no, "special_group", enum_issues)
                if parsed:
                    flags.add(parsed)
        education = None
        if cell("education_level"):
            education = _parse_enum(
                cell("education_level"), EDUCATION_LEVELS, line_no,
                "education_level", enum_issues,
            )
        trade_edu = None
        if cell("trade_specific_education"):
            trade_edu = _parse_int(
                cell("trade_specific_education"), line_no,
                "trade_specific_education", issues,
            )
            if trade_edu is not None and trade_edu < 0:
                issues.append(
                    f"line {line_no}, column trade_specific_education: negative"
                )
        food = None
        if cell("food_sufficiency"):
            food = _parse_enum(
                cell("food_sufficiency"), FOOD_SUFFICIENCY, line_no,
                "food_sufficiency", enum_issues,
            )
        income = None
        if cell("percap_income"):
            income = _parse_float(cell("percap_income"), line_no, "percap_income", issues)
            if income is not None and income < 0:
                issues.append(f"line {line_no}, column percap_income: negative")
        district = cell("district") or None

        subs = []
        for i, col in enumerate(["s1", "s2", "s3", "s4", "s5"]):
            v = _parse_float(cell(col), line_no, col, issues)
            if v is None:
                continue
            cap = SUBSCORE_CAPS[i]
            if col == "s5":
                ok = 0 <= v <= cap
            else:
                ok = 0 <= v <= cap and v == 5 * round(v / 5)
            if not ok:
                issues.append(f"line {line_no}, column {col}: {v} outside support")
            subs.append(v)
        if len(subs) == 5 and not 0 <= sum(subs) <= 100:
            issues.append(f"line {line_no}: sub-scores sum to {sum(subs)}, outside [0, 100]")

        def binary(col):
            v = _parse_int(cell(col), line_no, col, issues)
            if v is not None and v not in (0, 1):
                issues.append(f"line {line_no}, column {col}: {v} not 0/1")
                return None
            return v

        treated = binary("treated")
        att1 = binary("attrited_w1")
        att2 = binary("attrited_w2")

        outcomes = {}
        for name in outcome_names:
            base_text = cell(f"{name}_base")
            if not base_text:
                issues.append(
                    f"line {line_no}, column {name}_base: baseline outcome missing"
                )
                continue
            base_v = _parse_float(base_text, line_no, f"{name}_base", issues)
            fu1_text = cell(f"{name}_fu1")
            fu1_v = (
                _parse_float(fu1_text, line_no, f"{name}_fu1", issues)
                if fu1_text
                else None
            )
            fu2_v = None
            if has_fu2[name]:
                fu2_text = cell(f"{name}_fu2")
                fu2_v = (
                    _parse_float(fu2_text, line_no, f"{name}_fu2", issues)
                    if fu2_text
                    else None
                )
            if base_v is None:
                continue
            outcomes[name] = OutcomeCell(base_v, fu1_v, fu2_v)
            if att1 is not None and (fu1_v is None) != (att1 == 1):
                issues.append(
                    f"line {line_no}, outcome {name}: follow-up missing does not "
                    f"match attrited_w1={att1}"
                )
            if has_fu2[name] and att2 is not None and (fu2_v is None) != (att2 == 1):
                issues.append(
                    f"line {line_no}, outcome {name}: second follow-up missing "
                    f"does not match attrited_w2={att2}"
                )

        if aid is not None:
            if aid in seen_ids and duplicate is None:
                duplicate = (aid, line_no)
            seen_ids[aid] = line_no

        if None in (aid, course, cohort, seats, trade, gender, treated, att1, att2):
            continue
        if len(subs) != 5 or len(outcomes) != len(outcome_names):
            continue
        if seats < 1:
            issues.append(f"line {line_no}, column seats: must be >= 1")
            continue

        meta = course_meta.setdefault(course, (seats, trade, line_no))
        if meta[0] != seats:
            issues.append(
                f"line {line_no}, column seats: {seats} conflicts with "
                f"{meta[0]} for course {course} (line {meta[2]})"
            )
        if meta[1] != trade:
            issues.append(
                f"line {line_no}, column trade: {trade!r} conflicts with "
                f"{meta[1]!r} for course {course} (line {meta[2]})"
            )

        records.append(
            ApplicantRecord(
                applicant_id=aid,
                course_id=course,
                cohort=cohort,
                gender=gender,
                age=age,
                caste=caste,
                special_group=frozenset(flags),
                education_level=education,
                trade_specific_education=trade_edu,
                food_sufficiency=food,
                percap_income=income,
                district=district,
                subscores=tuple(subs),
                treated=treated,
                outcomes=outcomes,
                attrited_w1=att1,
                attrited_w2=att2,
            )
        )

    _raise_collected(issues, enum_issues, duplicate)

    by_course: dict = {}
    for rec in records:
        by_course.setdefault(rec.course_id, []).append(rec)
    panels = []
    for course_id in sorted(by_course):
        recs = sorted(by_course[course_id], key=lambda r: r.applicant_id)
        if len(recs) < 2:
            raise MalformedCsv(f"course {course_id} has fewer than 2 records")
        seats, trade, _ = course_meta[course_id]
        panels.append(
            CoursePanel(
                course_id=course_id,
                records=recs,
                seats=seats,
                trade=trade,
                orig_threshold=derive_threshold([r.orig_total for r in recs], seats),
            )
        )
    return panels


def derive_threshold(scores, seats) -> float:
    """Seats-th highest score; with seats beyond the roster, the lowest."""
    ordered = sorted(scores, reverse=True)
    return float(ordered[min(seats, len(ordered)) - 1])


def _format_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        if v == int(v) and abs(v) < 1e15:
            return str(int(v))
        return repr(v)
    return str(v)


def serialize(panels, stream) -> None:
    """Inverse of load_panel on valid panels (round-trip identity)."""
    outcome_names = sorted(
        {name for p in panels for r in p.records for name in r.outcomes}
    )
    any_fu2 = {
        name: any(
            r.outcomes[name].followup2 is not None
            for p in panels
            for r in p.records
            if name in r.outcomes
        )
        for name in outcome_names
    }
    header = list(FIXED_COLUMNS)
    for name in outcome_names:
        header += [f"{name}_base", f"{name}_fu1"]
        if any_fu2[name]:
            header.append(f"{name}_fu2")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    for panel in sorted(panels, key=lambda p: p.course_id):
        for r in sorted(panel.records, key=lambda x: x.applicant_id):
            row = [
                r.applicant_id,
                r.course_id,
                r.cohort,
                panel.seats,
                panel.trade,
                r.gender,
                _format_value(r.age),
                r.caste or "",
                ";".join(sorted(r.special_group)),
                r.education_level or "",
                _format_value(r.trade_specific_education),
                r.food_sufficiency or "",
                _format_value(r.percap_income),
                r.district or "",
            ]
            row += [_format_value(float(s)) for s in r.subscores]
            row += [r.treated, r.attrited_w1, r.attrited_w2]
            for name in outcome_names:
                cell = r.outcomes[name]
                row += [_format_value(cell.baseline), _format_value(cell.followup)]
                if any_fu2[name]:
                    row.append(_format_value(cell.followup2))
            writer.writerow(row)


# --------------------------------------------------------------- covariates

EDUCATION_CODE = {level: i for i, level in enumerate(EDUCATION_LEVELS)}


def _caste_flag(which):
    def getter(record):
        if record.caste is None:
            return None
        return 1.0 if record.caste == which else 0.0

    return getter


COVARIATES = {
    "age": lambda r: r.age,
    "female": lambda r: 1.0 if r.gender == "female" else 0.0,
    "male": lambda r: 1.0 if r.gender == "male" else 0.0,
    "dalit": _caste_flag("dalit"),
    "janjati": _caste_flag("janjati"),
    "madhesi": _caste_flag("madhesi"),
    "muslim": _caste_flag("muslim"),
    "education": lambda r: (
        None if r.education_level is None else float(EDUCATION_CODE[r.education_level])
    ),
    "primary_or_less": lambda r: (
        None
        if r.education_level is None
        else float(r.education_level in ("illiterate", "below_class5"))
    ),
    "trade_specific_education": lambda r: (
        None
        if r.trade_specific_education is None
        else float(r.trade_specific_education)
    ),
    "percap_income": lambda r: r.percap_income,
    "any_special_group": lambda r: float(bool(r.special_group)),
}


def covariate_value(record, name):
    if name in COVARIATES:
        return COVARIATES[name](record)
    raise UnknownOutcome(name)


def resolve_value(record, spec: OutcomeSpec):
    """Value of an OutcomeSpec for one record, or None if excluded.

    Resolution order: named panel outcome first, then the covariate
    registry (level only).  Attrition excludes follow-up waves; the
    conditional filter requires the named outcome to be positive at the
    measured wave.
    """
    if spec.name in record.outcomes:
        cell = record.outcomes[spec.name]
        if spec.wave == "base":
            value = cell.baseline
        elif spec.wave == "fu1":
            if record.attrited_w1:
                return None
            value = cell.followup
            if value is None:
                return None
            if spec.differenced:
                value -= cell.baseline
        elif spec.wave == "fu2":
            if record.attrited_w2:
                return None
            value = cell.followup2
            if value is None:
                return None
            if spec.differenced:
                value -= cell.baseline
        else:
            raise ValueError(f"unknown wave {spec.wave!r}")
        if spec.conditional_filter is not None:
            gate = record.outcomes.get(spec.conditional_filter)
            if gate is None:
                raise UnknownOutcome(spec.conditional_filter)
            gate_value = {
                "base": gate.baseline,
                "fu1": gate.followup,
                "fu2": gate.followup2,
            }[spec.wave]
            if gate_value is None or gate_value <= 0:
                return None
        return value
    if spec.name in COVARIATES:
        if spec.differenced:
            raise UnknownOutcome(
                f"{spec.name} (covariates cannot be differenced)"
            )
        return COVARIATES[spec.name](record)
    raise UnknownOutcome(spec.name)


def validate_outcome_spec(panels, spec: OutcomeSpec) -> None:
    names = {
        name for p in panels for r in p.records for name in r.outcomes
    }
    if spec.name not in names and spec.name not in COVARIATES:
        raise UnknownOutcome(spec.name)
    if spec.conditional_filter is not None and spec.conditional_filter not in names:
        raise UnknownOutcome(spec.conditional_filter)


def difference_outcome(panel: CoursePanel, spec: OutcomeSpec) -> list:
    """(applicant_id, value) pairs for the panel under the spec.

    Attrited records and records failing the conditional filter are
    excluded; output order follows applicant_id order within the course.
    """
    validate_outcome_spec([panel], spec)
    out = []
    for record in panel.records:
        value = resolve_value(record, spec)
        if value is not None:
            out.append((record.applicant_id, value))
    return out


def baseline_value(record, spec: OutcomeSpec):
    """Baseline-wave value for reporting sample means."""
    if spec.name in record.outcomes:
        return record.outcomes[spec.name].baseline
    return resolve_value(record, OutcomeSpec(spec.name, differenced=False, wave="base"))


def missing_flag(record, name) -> float:
    try:
        return 1.0 if covariate_value(record, name) is None else 0.0
    except UnknownOutcome:
        return 0.0


def all_records(panels):
    for panel in panels:
        yield from panel.records
