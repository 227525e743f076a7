"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class Eeg2SpeechError(Exception):
    """Base class for all package errors."""


class ConfigError(Eeg2SpeechError):
    """Invalid configuration: bad parameters, shape mismatches, unknown keys."""


class DataError(Eeg2SpeechError):
    """Invalid or corrupt input data, bad splits, missing files."""


class NumericalError(Eeg2SpeechError):
    """Non-finite values encountered during training or evaluation."""
