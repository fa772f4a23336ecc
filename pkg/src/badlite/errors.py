"""Engine error taxonomy shared by every module."""

from __future__ import annotations

from enum import Enum
from typing import Optional, Tuple


class ErrorKind(str, Enum):
    PARSE = "ParseError"
    COMPILE = "CompileError"
    DATASET_NOT_FOUND = "DatasetNotFound"
    DUPLICATE_NAME = "DuplicateName"
    PRIMARY_KEY_VIOLATION = "PrimaryKeyViolation"
    ACTIVE_FUNCTION_ON_PLAIN_DATASET = "ActiveFunctionOnPlainDataset"
    CHANNEL_OVERRUN = "ChannelOverrun"
    BROKER_UNREACHABLE = "BrokerUnreachable"
    MALFORMED_RECORD = "MalformedRecord"


class EngineError(Exception):
    """Typed engine error with an optional (line, column) source location."""

    def __init__(self, kind: ErrorKind, message: str,
                 location: Optional[Tuple[int, int]] = None) -> None:
        self.kind = kind
        self.message = message
        self.location = location
        loc = f" at line {location[0]}, column {location[1]}" if location else ""
        super().__init__(f"{kind.value}: {message}{loc}")

    @classmethod
    def parse(cls, message: str, line: int, column: int) -> "EngineError":
        return cls(ErrorKind.PARSE, message, (line, column))

    @classmethod
    def compile(cls, message: str,
                location: Optional[Tuple[int, int]] = None) -> "EngineError":
        return cls(ErrorKind.COMPILE, message, location)

    @classmethod
    def dataset_not_found(cls, name: str) -> "EngineError":
        return cls(ErrorKind.DATASET_NOT_FOUND, f"dataset {name!r} does not exist")

    @classmethod
    def duplicate_name(cls, what: str, name: str) -> "EngineError":
        return cls(ErrorKind.DUPLICATE_NAME, f"{what} {name!r} already exists")

    @classmethod
    def primary_key_violation(cls, dataset: str, pk: object) -> "EngineError":
        return cls(ErrorKind.PRIMARY_KEY_VIOLATION,
                   f"duplicate primary key {pk!r} in dataset {dataset!r}")

    @classmethod
    def active_function_on_plain(cls, func: str, dataset: str) -> "EngineError":
        return cls(ErrorKind.ACTIVE_FUNCTION_ON_PLAIN_DATASET,
                   f"{func} applied to plain dataset {dataset!r}")

    @classmethod
    def channel_overrun(cls, channel: str) -> "EngineError":
        return cls(ErrorKind.CHANNEL_OVERRUN,
                   f"channel {channel!r} execution overran its period")

    @classmethod
    def broker_unreachable(cls, endpoint: str, detail: str = "") -> "EngineError":
        extra = f": {detail}" if detail else ""
        return cls(ErrorKind.BROKER_UNREACHABLE,
                   f"broker endpoint {endpoint!r} unreachable{extra}")

    @classmethod
    def malformed_record(cls, detail: str) -> "EngineError":
        return cls(ErrorKind.MALFORMED_RECORD, detail)
