"""Exception hierarchy shared across the engine.

Every error carries a stable ``code`` so the CLI can print machine-parsable
``error[CODE]: message`` lines and map classes of failure to exit codes.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine errors (CLI exit code 3 unless refined)."""

    code = "INTERNAL"


class UsageError(EngineError):
    """Bad invocation: unknown flags, invalid combinations (exit code 1)."""

    code = "USAGE"


class DataError(EngineError):
    """Invalid input data: corpora, embedding files, checkpoints (exit code 2)."""

    code = "DATA"


class MalformedRecord(DataError):
    code = "MALFORMED_RECORD"

    def __init__(self, path: str, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line
        self.reason = reason


class DuplicateId(DataError):
    code = "DUPLICATE_ID"

    def __init__(self, ident: str):
        super().__init__(f"duplicate id {ident!r}")
        self.ident = ident


class DanglingReference(DataError):
    code = "DANGLING_REF"

    def __init__(self, qid: str, did: str):
        super().__init__(f"query {qid!r} references unknown candidate {did!r}")
        self.qid = qid
        self.did = did


class ModalityMismatch(DataError):
    code = "MODALITY_MISMATCH"

    def __init__(self, ident: str, reason: str):
        super().__init__(f"{ident!r}: {reason}")
        self.ident = ident
        self.reason = reason


class DimMismatch(DataError):
    code = "DIM_MISMATCH"


class ModeMismatch(DataError):
    code = "MODE_MISMATCH"


class BadMagic(DataError):
    code = "BAD_MAGIC"


class ChecksumMismatch(DataError):
    code = "CHECKSUM_MISMATCH"


class MissingFeature(DataError):
    code = "MISSING_FEATURE"

    def __init__(self, image_ref: str):
        super().__init__(f"no raw feature stored for image ref {image_ref!r}")
        self.image_ref = image_ref


class TooFewRows(DataError):
    code = "TOO_FEW_ROWS"


class EmptyCorpus(DataError):
    code = "EMPTY_CORPUS"


class ConfigInvalid(DataError):
    code = "CONFIG_INVALID"


class EmptyHeldOut(DataError):
    code = "EMPTY_HELD_OUT"


class NothingHeldIn(DataError):
    code = "NOTHING_HELD_IN"


class NonSquare(EngineError):
    code = "NON_SQUARE"


class NonPositiveTemperature(EngineError):
    code = "NON_POSITIVE_TEMPERATURE"


class BatchTooSmall(EngineError):
    code = "BATCH_TOO_SMALL"


class UnknownFormat(UsageError):
    code = "UNKNOWN_FORMAT"


class ValidationWarning(UserWarning):
    """Lint-level issue that does not invalidate the data (e.g. instruction
    count differing from the conventional four)."""
