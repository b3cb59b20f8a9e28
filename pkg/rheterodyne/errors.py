"""Exception hierarchy. Library code raises these; only the CLI maps them to exit codes."""
from typing import Optional


class RheterodyneError(Exception):
    exit_code = 1


# Configuration (exit 2)

class ConfigError(RheterodyneError):
    exit_code = 2

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ParseError(ConfigError):
    pass


class UnknownKey(ConfigError):
    pass


class UnitSuffixMissing(ConfigError):
    pass


class InvalidValue(ConfigError):
    pass


# Numerical failures (exit 3)

class NumericalError(RheterodyneError):
    exit_code = 3


class UnstableSystem(NumericalError):
    def __init__(self, max_real: float):
        self.max_real = max_real
        super().__init__(f"Drift matrix has an eigenvalue with real part {max_real:.6g} >= 0")


class StepTooLarge(NumericalError):
    pass


class AliasedLO(NumericalError):
    pass


class ComplexResidual(NumericalError):
    pass


class RealizationFailed(NumericalError):
    def __init__(self, seed: int, index: int, cause: BaseException):
        self.seed = seed
        self.index = index
        super().__init__(f"Realization {index} (seed={seed}) failed: {cause}")


# Estimator preconditions (exit 3)

class EstimatorError(NumericalError):
    pass


class TooFewSamples(EstimatorError):
    pass


class LagTooShort(EstimatorError):
    pass


class LagTooLong(EstimatorError):
    pass


class NonPeriodicFilter(EstimatorError):
    pass


class FlatScore(EstimatorError):
    pass


class HeterogeneousTraces(EstimatorError):
    pass


class AsymmetricGrid(EstimatorError):
    pass


class GridTooNarrow(EstimatorError):
    pass


class WindowOutsideGrid(EstimatorError):
    pass


class MissingInputs(EstimatorError):
    pass


# Acceptance gate (exit 4)

class GateFailure(RheterodyneError):
    exit_code = 4


# Warning categories

class ResolutionWarning(UserWarning):
    pass


class FlatScoreWarning(UserWarning):
    pass


class ShortRecordWarning(UserWarning):
    pass
