"""Exception hierarchy for the tablehub engine.

Every failure mode that callers are expected to distinguish gets its own
class; all of them derive from TableHubError so embedders can catch the
whole family at once. Errors carry structured attributes (column name,
row index, ...) in addition to the rendered message.
"""

from __future__ import annotations


class TableHubError(Exception):
    """Base class for all engine errors."""


# --- table construction and access ---------------------------------------

class LengthMismatchError(TableHubError):
    def __init__(self, column: str, expected: int, got: int):
        super().__init__(
            f"column {column!r} has {got} values, expected {expected}")
        self.column = column
        self.expected = expected
        self.got = got


class DuplicateColumnError(TableHubError):
    def __init__(self, column: str):
        super().__init__(f"duplicate column name {column!r}")
        self.column = column


class TypeViolationError(TableHubError):
    def __init__(self, message: str, column: str | None = None,
                 row: int | None = None):
        super().__init__(message)
        self.column = column
        self.row = row


class RowOutOfBoundsError(TableHubError):
    def __init__(self, row: int, n_rows: int):
        super().__init__(f"row {row} out of bounds for table with {n_rows} rows")
        self.row = row
        self.n_rows = n_rows


class UnknownColumnError(TableHubError):
    def __init__(self, column: str):
        super().__init__(f"unknown column {column!r}")
        self.column = column


# --- ingestion ------------------------------------------------------------

class IngestError(TableHubError):
    """Base class for delimited/structured text parsing failures."""


class EmptyInputError(IngestError):
    def __init__(self):
        super().__init__("input text is empty")


class RaggedRowError(IngestError):
    def __init__(self, line_no: int, expected: int, got: int):
        super().__init__(
            f"line {line_no}: row has {got} cells, header has {expected}")
        self.line_no = line_no
        self.expected = expected
        self.got = got


class UnterminatedQuoteError(IngestError):
    def __init__(self, line_no: int):
        super().__init__(f"line {line_no}: quoted field never closed")
        self.line_no = line_no


class SchemaMismatchError(IngestError):
    def __init__(self, message: str):
        super().__init__(message)


class MalformedDocumentError(IngestError):
    def __init__(self, reason: str):
        super().__init__(f"malformed document: {reason}")
        self.reason = reason


class UnsupportedShapeError(IngestError):
    def __init__(self, reason: str):
        super().__init__(f"unsupported document shape: {reason}")
        self.reason = reason


class NestedValueError(IngestError):
    def __init__(self, row: int, key: str):
        super().__init__(f"nested value at row {row}, key {key!r}")
        self.row = row
        self.key = key


# --- expression language ---------------------------------------------------

class ExprError(TableHubError):
    """Base class for expression parsing and typing failures."""


class ExprSyntaxError(ExprError):
    def __init__(self, position: int, expected: str):
        super().__init__(f"syntax error at position {position}: expected {expected}")
        self.position = position
        self.expected = expected


class TypeMismatchError(ExprError):
    def __init__(self, node: str, found: str, expected: str):
        super().__init__(f"type mismatch in {node}: found {found}, expected {expected}")
        self.node = node
        self.found = found
        self.expected = expected


# --- transforms -------------------------------------------------------------

class TransformError(TableHubError):
    """Base class for transform validation/application failures."""


class ValidationFailedError(TransformError):
    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class DuplicateSpreadKeyError(TransformError):
    def __init__(self, group: tuple, key):
        super().__init__(f"duplicate spread key {key!r} in group {group!r}")
        self.group = group
        self.key = key


class NameCollisionError(TransformError):
    def __init__(self, name: str):
        super().__init__(f"column name {name!r} already in use")
        self.name = name


class StepFailedError(TransformError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"step {index} failed: {cause}")
        self.index = index
        self.cause = cause


class MalformedScriptError(TransformError):
    def __init__(self, position: str, reason: str):
        super().__init__(f"malformed script at {position}: {reason}")
        self.position = position
        self.reason = reason


# --- exchange ----------------------------------------------------------------

class ExchangeError(TableHubError):
    """Base class for export/negotiation failures."""


class NoCommonFormatError(ExchangeError):
    def __init__(self, requested):
        super().__init__(f"no common data format (tool accepts {requested!r})")
        self.requested = requested


class UnknownFieldError(ExchangeError):
    def __init__(self, field: str):
        super().__init__(f"adapter rename references unknown field {field!r}")
        self.field = field


# --- bridge -------------------------------------------------------------------

class BridgeError(TableHubError):
    """Base class for protocol decode failures."""


class MalformedMessageError(BridgeError):
    def __init__(self, reason: str):
        super().__init__(f"malformed message: {reason}")
        self.reason = reason


class UnsupportedVersionError(BridgeError):
    def __init__(self, got):
        super().__init__(f"unsupported protocol version: {got!r}")
        self.got = got


class UnknownKindError(BridgeError):
    def __init__(self, kind):
        super().__init__(f"unknown message kind: {kind!r}")
        self.kind = kind


# --- session ---------------------------------------------------------------------

class SessionError(TableHubError):
    """Base class for session-level failures."""


class UnknownDatasetError(SessionError):
    def __init__(self, dataset_id: str):
        super().__init__(f"unknown dataset {dataset_id!r}")
        self.dataset_id = dataset_id


class MalformedProjectError(SessionError):
    def __init__(self, reason: str):
        super().__init__(f"malformed project: {reason}")
        self.reason = reason
