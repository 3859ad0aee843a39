"""Exception taxonomy.

Two families matter operationally: DataError (bad input, CLI exit code 2)
and EstimationError (a model could not be estimated, CLI exit code 3).
Every exception carries a stable kebab-case ``code`` used in structured
stderr lines.
"""


class ToolkitError(Exception):
    code = "error"
    exit_code = 1


class DataError(ToolkitError):
    code = "data-error"
    exit_code = 2


class EstimationError(ToolkitError):
    code = "estimation-error"
    exit_code = 3


class MalformedCsv(DataError):
    code = "malformed-csv"


class DuplicateApplicantId(DataError):
    code = "duplicate-applicant-id"

    def __init__(self, applicant_id, detail=""):
        self.applicant_id = applicant_id
        msg = f"duplicate applicant_id {applicant_id}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class UnknownEnumValue(DataError):
    code = "unknown-enum-value"


class UnknownOutcome(DataError):
    code = "unknown-outcome"

    def __init__(self, name):
        super().__init__(f"unknown outcome or covariate: {name!r}")


class UnknownDistrict(DataError):
    code = "unknown-district"

    def __init__(self, district):
        super().__init__(f"district not in development-status table: {district!r}")


class ConfigInvalid(DataError):
    code = "config-invalid"


class DimensionMismatch(EstimationError):
    code = "dimension-mismatch"


class SingularAfterDrop(EstimationError):
    code = "singular-after-drop"


class WeakOrRankDeficientFirstStage(EstimationError):
    code = "weak-or-rank-deficient-first-stage"


class Separation(EstimationError):
    code = "separation"


class NoConvergence(EstimationError):
    code = "no-convergence"


class DegenerateCourse(EstimationError):
    code = "degenerate-course"

    def __init__(self, course_id, detail=""):
        self.course_id = course_id
        msg = f"course {course_id} has no treatment variation"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class InsufficientDonutSample(EstimationError):
    code = "insufficient-donut-sample"


class EmptyBandwidthSample(EstimationError):
    code = "empty-bandwidth-sample"


class SubgroupDegenerate(EstimationError):
    code = "subgroup-degenerate"


class NoUsablePoints(EstimationError):
    code = "no-usable-points"


class TooFewBins(EstimationError):
    code = "too-few-bins"


class EmptySupport(EstimationError):
    code = "empty-support"


class InsufficientControls(EstimationError):
    code = "insufficient-controls"
