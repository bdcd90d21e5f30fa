"""Exception hierarchy shared by every module.

Each error carries an ``exit_code`` so the CLI can map failures to the
documented process exit status without a lookup table.
"""

from __future__ import annotations


class CalibrationError(Exception):
    """Base class. ``exit_code`` 2 means bad input or usage."""

    exit_code = 2

    def details(self) -> dict:
        return {}


class InputError(CalibrationError):
    pass


class ParseError(InputError):
    def __init__(self, path, line: int, offset: int, message: str):
        super().__init__(f"{path}:{line} (byte {offset}): {message}")
        self.path = str(path)
        self.line = line
        self.offset = offset

    def details(self) -> dict:
        return {"path": self.path, "line": self.line, "offset": self.offset}


class DuplicateId(InputError):
    def __init__(self, id_: str):
        super().__init__(f"duplicate id {id_!r}")
        self.id = id_

    def details(self) -> dict:
        return {"id": self.id}


class EmptyInput(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class NonFiniteInput(InputError):
    pass


class NonPositiveTemperature(InputError):
    def __init__(self, t):
        super().__init__(f"temperature must be > 0, got {t!r}")
        self.t = t


class ZeroTotalConfidence(InputError):
    pass


class ShapeMismatch(InputError):
    def __init__(self, name: str, a, b):
        super().__init__(f"tensor {name!r}: shape {list(a)} != {list(b)}")
        self.name = name

    def details(self) -> dict:
        return {"name": self.name}


class MissingTensor(InputError):
    def __init__(self, name: str):
        super().__init__(f"tensor {name!r} missing from one input")
        self.name = name

    def details(self) -> dict:
        return {"name": self.name}


class MalformedTensorFile(InputError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path} (byte {offset}): {message}")
        self.path = str(path)
        self.offset = offset

    def details(self) -> dict:
        return {"path": self.path, "offset": self.offset}


class MissingBaseline(InputError):
    pass


class InvariantViolation(CalibrationError):
    exit_code = 4


class StepAfterFinish(CalibrationError):
    exit_code = 4


class StreamExhausted(CalibrationError):
    """The proposal stream ended before the sequence finished."""

    exit_code = 4

    def __init__(self, tokens):
        super().__init__(f"stream exhausted after {len(tokens)} emitted tokens")
        self.tokens = list(tokens)


class BackendError(CalibrationError):
    exit_code = 3

    def __init__(self, message: str, problem_id: str | None = None, sample_index: int | None = None):
        if problem_id is not None:
            message = f"{message} (problem {problem_id!r}, sample {sample_index})"
        super().__init__(message)
        self.problem_id = problem_id
        self.sample_index = sample_index

    def details(self) -> dict:
        return {"problem_id": self.problem_id, "sample_index": self.sample_index}


class HttpError(BackendError):
    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body[:200]

    def details(self) -> dict:
        return {**super().details(), "status": self.status}


class MissingApiKey(BackendError):
    pass


class LogprobsUnavailable(BackendError):
    pass
