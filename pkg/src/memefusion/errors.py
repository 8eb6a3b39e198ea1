"""Exception hierarchy; exit codes are what the CLI reports per error category."""


class MemeFusionError(Exception):
    exit_code = 1


class ConfigError(MemeFusionError):
    exit_code = 2


class DataError(MemeFusionError):
    exit_code = 3


class ModelBuildError(MemeFusionError):
    exit_code = 4


class TrainingError(MemeFusionError):
    exit_code = 5


class EvaluationError(MemeFusionError):
    exit_code = 6
