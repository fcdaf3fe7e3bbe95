"""Exception types shared across the pipeline.

Everything raised on bad *data* derives from ``DataError`` so the CLI can map
it to a single exit code; programming errors stay ordinary exceptions.
"""

from __future__ import annotations


class DetmaskError(Exception):
    """Base class for all detmask-specific errors."""


class DataError(DetmaskError):
    """Malformed or inconsistent input data."""


class MalformedLine(DataError):
    def __init__(self, source: str, line_no: int, reason: str):
        super().__init__(f"{source}:{line_no}: {reason}")
        self.source = source
        self.line_no = line_no
        self.reason = reason


class DanglingReference(DataError):
    def __init__(self, ref_id: str, context: str = ""):
        msg = f"id {ref_id!r} referenced but not present in alias tables"
        if context:
            msg += f" ({context})"
        super().__init__(msg)
        self.ref_id = ref_id


class EmptyDataset(DataError):
    pass


class NoMaskableContent(DataError):
    """The masking scheme's candidate set is empty for this sample."""


class NoClues(DataError):
    """Sample has no subject/predicate clue tokens."""


class InsufficientContext(DataError):
    """Fewer maskable context tokens than clue tokens; sample must be skipped."""


class SequenceTooLong(DataError):
    pass


class EmptyMaskSet(DataError):
    pass


class NonFiniteLoss(DetmaskError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


class NoMask(DataError):
    pass


class BadTemplate(DataError):
    pass


class MissingPrediction(DataError):
    def __init__(self, question_id: str):
        super().__init__(f"no prediction for question {question_id}")
        self.question_id = question_id
