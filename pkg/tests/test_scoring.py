import numpy as np
import pytest

from quasird.errors import InsufficientDonutSample, UnknownDistrict
from quasird.scoring import (
    S5_TERM_NAMES,
    _s5_terms,
    assemble_reconstructed,
    load_district_table,
    reconstruct_s1,
    reconstruct_s5,
    score_district,
    score_economic,
    score_panels,
    score_social,
)
from conftest import make_panel, make_record


# ------------------------------------------------------------- pure rubric


def test_score_economic_rows():
    assert score_economic("lt3_months", 5000) == (20, 4)
    assert score_economic("no_land", 5000) == (20, 4)
    assert score_economic("ge6_months", 3000) == (0, 0)
    assert score_economic("ge6_months", 2999) == (15, 3)
    assert score_economic("lt6_months", 9000) == (15, 3)


def test_score_social_rows():
    assert score_social("female", "other", {"widow"}, is_poor=False) == (25, 5)
    assert score_social("female", "dalit", set(), is_poor=False) == (25, 5)
    assert score_social("female", "other", set(), is_poor=True) == (20, 4)
    assert score_social("male", "janjati", set(), is_poor=False) == (15, 3)
    assert score_social("male", "other", {"displaced"}, is_poor=False) == (15, 3)
    assert score_social("male", "other", set(), is_poor=True) == (10, 2)
    assert score_social("female", "other", set(), is_poor=False) == (0, 0)
    assert score_social("male", "other", set(), is_poor=False) == (0, 0)


def test_score_district_statuses():
    assert score_district("Jumla") == (10, 2)
    assert score_district("Kathmandu") == (0, 0)
    assert score_district("Gorkha") == (5, 1)


def test_district_table_has_75_districts():
    table = load_district_table()
    assert len(table) == 75
    counts = {}
    for status in table.values():
        counts[status] = counts.get(status, 0) + 1
    assert counts == {
        "developed": 25,
        "moderately_developed": 25,
        "least_developed": 25,
    }


def test_unknown_district_raises():
    with pytest.raises(UnknownDistrict):
        score_district("Atlantis")


def test_rubric_determinism():
    for _ in range(3):
        assert score_economic("lt6_months", 100) == (15, 3)
        assert score_social("male", "dalit", set(), is_poor=True) == (15, 3)
        assert score_district("Mugu") == (10, 2)


# ----------------------------------------------------------- reconstruct s1


def _course(course_id, rows, seats=2):
    records = [
        make_record(
            course_id=course_id,
            education_level=edu,
            trade_specific_education=tse,
            subscores=subs,
        )
        for edu, tse, subs in rows
    ]
    return make_panel(records, course_id=course_id, seats=seats)


def test_reconstruct_s1_constant_course():
    rows = [("class5_8", 3, (15, 20, 20, 10, 5 + 5 * i)) for i in range(6)]
    panel = _course(1, rows, seats=4)
    r1 = reconstruct_s1([panel], donut=0.0)
    assert all(v == 3 for v in r1.values())


def test_reconstruct_s1_two_cell_hand_ols():
    # two education cells, cleanly separated; OLS on {1, edu, trade_edu}
    # reproduces the cell means 15 and 10 exactly
    rows = []
    for i in range(4):
        rows.append(("class9_10", 3, (15, 20, 20, 10, 2 * i)))
        rows.append(("below_class5", 3, (10, 20, 20, 10, 25 + i)))
    panel = _course(1, rows, seats=5)
    r1 = reconstruct_s1([panel], donut=0.0)
    for record in panel.records:
        expected = 3 if record.education_level == "class9_10" else 2
        assert r1[record.applicant_id] == expected


def test_reconstruct_s1_rounding_rule():
    # force predictions of 12.4 (rounds to 10) and 12.5 (ties round up to 15)
    # via a pooled constant model: all usable records share one s1 value
    for target, expected in [(12.4, 2), (12.5, 3)]:
        rows = [("class5_8", 3, (15, 20, 20, 10, 5)) for _ in range(5)]
        panel = _course(1, rows, seats=3)
        fit_records = [r for r in panel.records]
        y_mean = target
        # constant regression reproduces the mean; emulate by setting s1
        # values whose mean is the target (s1 multiples of 5 can't average
        # to 12.4, so check the rounding helper directly instead)
        from quasird.scoring import _round_to_multiple_of_five

        assert _round_to_multiple_of_five(target) == expected * 5.0
        del fit_records, y_mean


def test_reconstruct_s1_donut_exclusion_invariance():
    rng = np.random.default_rng(0)
    panels = []
    for course_id in range(1, 4):
        rows = []
        for i in range(10):
            edu = "class9_10" if i % 2 else "below_class5"
            s1 = 15 if i % 2 else 10
            s5 = int(rng.integers(0, 31))
            rows.append((edu, 3, (s1, 20, 20, 10, s5)))
        panels.append(_course(course_id, rows, seats=6))
    base = reconstruct_s1(panels, donut=5.0)

    # tamper with a record strictly inside the donut: r1 map must not move
    inside = None
    for panel in panels:
        for record in panel.records:
            if abs(record.orig_total - panel.orig_threshold) < 5.0:
                inside = record
                break
        if inside:
            break
    assert inside is not None
    subs = list(inside.subscores)
    subs[0] = 0  # wild change to the fitted variable
    inside.subscores = tuple(subs)
    after = reconstruct_s1(panels, donut=5.0)
    assert base == after


def test_reconstruct_s1_single_usable_record_raises():
    rows = [("class5_8", 3, (15, 20, 20, 10, 10 * i)) for i in range(3)]
    panel = _course(1, rows, seats=2)
    # donut that leaves exactly one record outside
    rels = sorted(abs(r.orig_total - panel.orig_threshold) for r in panel.records)
    donut = rels[-1]  # only the most extreme record survives
    with pytest.raises(InsufficientDonutSample):
        reconstruct_s1([panel], donut=donut)


def test_reconstruct_s1_all_inside_donut_falls_back_to_pooled():
    tight = _course(1, [("class5_8", 3, (15, 20, 20, 10, 20)) for _ in range(4)], seats=2)
    wide_rows = [("class5_8", 3, (15, 20, 20, 10, 5 * i)) for i in range(6)]
    wide = _course(2, wide_rows, seats=3)
    r1 = reconstruct_s1([tight, wide], donut=1.0)
    for record in tight.records:
        assert r1[record.applicant_id] == 3  # pooled model predicts 15 -> 3


# ----------------------------------------------------------- reconstruct s5


def test_reconstruct_s5_perfect_fit_by_course_dummies():
    panels = []
    for course_id, s5 in [(1, 12), (2, 25)]:
        rows = [("class5_8", 3, (15, 20, 20, 10, s5)) for _ in range(4)]
        panels.append(_course(course_id, rows, seats=2))
    r5 = reconstruct_s5(panels)
    assert all(abs(v) < 1e-12 for v in r5.values())


def test_reconstruct_s5_matches_normal_equation_oracle():
    # independent oracle: full design with explicit course dummies solved
    # by lstsq; least-squares residuals are unique even when coefficients
    # are not, so the comparison is well-posed
    spec_rows = [
        (1, (15, 20, 20, 10, 25)),
        (1, (15, 15, 20, 10, 20)),
        (1, (15, 20, 20, 10, 27)),
        (1, (15, 15, 10, 10, 14)),
        (2, (10, 15, 10, 5, 18)),
        (2, (10, 15, 10, 5, 15)),
        (2, (15, 15, 10, 5, 12)),
        (2, (10, 15, 20, 5, 21)),
    ]
    panels = {}
    for course_id, subs in spec_rows:
        panels.setdefault(course_id, []).append(
            make_record(course_id=course_id, subscores=subs)
        )
    panel_list = [make_panel(v, course_id=k, seats=2) for k, v in panels.items()]

    records = [r for p in panel_list for r in p.records]
    X_terms = np.array([_s5_terms(r.subscores) for r in records])
    dummies = np.column_stack(
        [
            np.array([1.0 if r.course_id == c else 0.0 for r in records])
            for c in sorted(panels)
        ]
    )
    X_full = np.hstack([X_terms, dummies])
    y = np.array([float(r.subscores[4]) for r in records])
    beta = np.linalg.lstsq(X_full, y, rcond=None)[0]
    oracle_resid = y - X_full @ beta

    r5 = reconstruct_s5(panel_list)
    got = np.array([r5[r.applicant_id] for r in records])
    assert np.allclose(got, oracle_resid / 5.0, atol=1e-8)


def test_reconstruct_s5_zero_mean_within_course():
    rng = np.random.default_rng(1)
    panels = []
    for course_id in range(1, 5):
        rows = []
        for _ in range(8):
            subs = (
                int(rng.choice([0, 5, 10, 15])),
                int(rng.choice([0, 15, 20])),
                int(rng.choice([0, 10, 15, 20, 25])),
                int(rng.choice([0, 5, 10])),
                int(rng.integers(0, 31)),
            )
            rows.append(("class5_8", 3, subs))
        panels.append(_course(course_id, rows, seats=5))
    r5 = reconstruct_s5(panels)
    for panel in panels:
        values = [r5[r.applicant_id] for r in panel.records]
        assert abs(np.mean(values)) < 1e-10


def test_reconstruct_s5_residual_orthogonality():
    rng = np.random.default_rng(2)
    panels = []
    for course_id in range(1, 6):
        rows = []
        for _ in range(10):
            subs = (
                int(rng.choice([0, 5, 10, 15])),
                int(rng.choice([0, 15, 20])),
                int(rng.choice([0, 10, 15, 20, 25])),
                int(rng.choice([0, 5, 10])),
                int(rng.integers(0, 31)),
            )
            rows.append(("class5_8", 3, subs))
        panels.append(_course(course_id, rows, seats=6))
    r5 = reconstruct_s5(panels)
    records = [r for p in panels for r in p.records]
    e = 5.0 * np.array([r5[r.applicant_id] for r in records])
    X = np.array([_s5_terms(r.subscores) for r in records])
    scale = np.abs(X).max() * max(np.abs(e).max(), 1e-30) * len(records)
    assert np.max(np.abs(X.T @ e)) < 1e-8 * scale
    for panel in panels:
        dummy = np.array([1.0 if r.course_id == panel.course_id else 0.0 for r in records])
        assert abs(dummy @ e) < 1e-8 * max(np.abs(e).max(), 1e-30) * len(records)


# -------------------------------------------------------------- assembly


def test_assemble_reconstructed():
    assert assemble_reconstructed(3, 4, 5, 2, 1.2) == pytest.approx(15.2)
    assert assemble_reconstructed(0, 0, 0, 0, 0.0) == 0.0


def test_score_panels_end_to_end_and_mean_identity():
    rng = np.random.default_rng(3)
    panels = []
    for course_id in range(1, 5):
        records = []
        for i in range(8):
            tse = 3 if rng.uniform() < 0.9 else int(rng.integers(0, 3))
            food = rng.choice(["lt3_months", "lt6_months", "ge6_months", "no_land"])
            income = float(rng.integers(500, 6000))
            gender = "female" if rng.uniform() < 0.6 else "male"
            caste = rng.choice(["dalit", "janjati", "madhesi", "muslim", "other"])
            district = rng.choice(["Jumla", "Kathmandu", "Gorkha", "Doti", "Kaski"])
            s2, _ = __import__("quasird.scoring", fromlist=["score_economic"]).score_economic(food, income)
            from quasird.scoring import score_district as sd, score_social as ss

            s3, _ = ss(gender, caste, set(), is_poor=s2 > 0)
            s4, _ = sd(district)
            subs = (5 * tse, s2, s3, s4, int(rng.integers(0, 31)))
            records.append(
                make_record(
                    course_id=course_id,
                    gender=gender,
                    caste=caste,
                    education_level="class5_8",
                    trade_specific_education=tse,
                    food_sufficiency=food,
                    percap_income=income,
                    district=district,
                    subscores=subs,
                )
            )
        panels.append(make_panel(records, course_id=course_id, seats=5))
    components = score_panels(panels, donut=0.0)
    assert len(components) == sum(len(p.records) for p in panels)
    # rubric-consistent originals: (s2, s3, s4) = 5 * (r2, r3, r4)
    for panel in panels:
        for record in panel.records:
            c = record.recon
            assert record.subscores[1] == 5 * c.recon[1]
            assert record.subscores[2] == 5 * c.recon[2]
            assert record.subscores[3] == 5 * c.recon[3]
    # r5 has zero within-course mean, so panel-wide mean(recon_total)
    # equals mean(r1+r2+r3+r4) course by course
    for panel in panels:
        totals = [r.recon.recon_total for r in panel.records]
        deterministic = [sum(r.recon.recon[:4]) for r in panel.records]
        assert np.mean(totals) == pytest.approx(np.mean(deterministic), abs=1e-10)
