"""Error taxonomy shared by all modules.

Each error maps to one CLI exit code: data problems exit 2, solver limits and
infeasibility exit 3.
"""


class AdaptestError(Exception):
    exit_code = 2

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


class IngestError(AdaptestError):
    pass


class MissingColumn(IngestError):
    def __init__(self, name):
        super().__init__(f"missing required column {name!r}")
        self.name = name


class UnparsableOutcome(IngestError):
    def __init__(self, row, value):
        super().__init__(f"row {row}: cannot parse outcome {value!r}")
        self.row = row
        self.value = value


class ConflictingOutcome(IngestError):
    def __init__(self, unit, step):
        super().__init__(f"unit {unit!r} has both PASS and FAIL for step {step!r}")
        self.unit = unit
        self.step = step


class DuplicateRecord(IngestError):
    def __init__(self, unit, step):
        super().__init__(f"unit {unit!r} has more than one record for step {step!r}")
        self.unit = unit
        self.step = step


class CoverError(AdaptestError):
    exit_code = 3


class Infeasible(CoverError):
    pass


class TooLarge(CoverError):
    def __init__(self, diagnostic_count, limit):
        super().__init__(
            f"{diagnostic_count} diagnostic steps exceed the exhaustive limit of {limit}"
        )
        self.diagnostic_count = diagnostic_count
        self.limit = limit


class InsufficientPoints(AdaptestError):
    pass


class PolicyError(AdaptestError):
    pass


class InvalidStatus(PolicyError):
    pass


class UnknownReward(PolicyError):
    pass


class EmptyTrace(AdaptestError):
    pass


class DimensionMismatch(AdaptestError):
    pass


class LeakageError(AdaptestError):
    pass


class InvalidScenario(AdaptestError):
    pass


class ParseError(AdaptestError):
    pass
