"""
Error hierarchy for condor-ordinal.

Every error raised on purpose by the library derives from OrdinalError, so the
CLI can tell configuration/data problems apart from programming errors.
"""

from pathlib import Path
from typing import Optional, Union


class OrdinalError(Exception):
    """Base class for all library errors"""


class DomainError(OrdinalError, ValueError):
    """Argument outside the operation's domain (rank range, lengths, fractions)"""


class ConsistencyError(OrdinalError, ValueError):
    """Rank-inconsistent input: a non-monotone encoding or marginal vector"""


class NumericError(OrdinalError, ArithmeticError):
    """Non-finite value where a finite one is required"""

    def __init__(self, message: str, layer_index: Optional[int] = None):
        if layer_index is not None:
            message = f"{message} (layer {layer_index})"
        super().__init__(message)
        self.layer_index = layer_index


class ConfigError(OrdinalError, ValueError):
    """Invalid experiment, training or architecture configuration"""


class DataFormatError(OrdinalError, ValueError):
    """Malformed input file"""

    def __init__(self, message: str, path: Union[str, Path, None] = None, offset: Optional[int] = None):
        details = []
        if path is not None:
            details.append(f"path={path}")
        if offset is not None:
            details.append(f"offset={offset}")
        if details:
            message = f"{message} [{' '.join(details)}]"
        super().__init__(message)
        self.path = path
        self.offset = offset


class ChecksumError(DataFormatError):
    """Downloaded file does not match its published digest"""
