"""Shared builders for hand-made records and panels."""

import itertools

import pytest

from quasird.dataset import ApplicantRecord, CoursePanel, OutcomeCell, derive_threshold

_ids = itertools.count(1)


def make_record(
    applicant_id=None,
    course_id=1,
    cohort=2011,
    gender="female",
    age=24.0,
    caste="other",
    special_group=(),
    education_level="class5_8",
    trade_specific_education=3,
    food_sufficiency="lt3_months",
    percap_income=2000.0,
    district="Jumla",
    subscores=(15, 20, 20, 10, 20),
    treated=1,
    outcomes=None,
    attrited_w1=0,
    attrited_w2=1,
):
    if applicant_id is None:
        applicant_id = next(_ids)
    if outcomes is None:
        outcomes = {"earnings": OutcomeCell(10.0, 12.0, None)}
    return ApplicantRecord(
        applicant_id=applicant_id,
        course_id=course_id,
        cohort=cohort,
        gender=gender,
        age=age,
        caste=caste,
        special_group=frozenset(special_group),
        education_level=education_level,
        trade_specific_education=trade_specific_education,
        food_sufficiency=food_sufficiency,
        percap_income=percap_income,
        district=district,
        subscores=tuple(subscores),
        treated=treated,
        outcomes=outcomes,
        attrited_w1=attrited_w1,
        attrited_w2=attrited_w2,
    )


def make_panel(records, course_id=None, seats=None, trade="tailoring_garment_textile"):
    if course_id is None:
        course_id = records[0].course_id
    if seats is None:
        seats = max(1, (2 * len(records)) // 3)
    records = sorted(records, key=lambda r: r.applicant_id)
    return CoursePanel(
        course_id=course_id,
        records=records,
        seats=seats,
        trade=trade,
        orig_threshold=derive_threshold([r.orig_total for r in records], seats),
    )


@pytest.fixture
def record_factory():
    return make_record


@pytest.fixture
def panel_factory():
    return make_panel
