"""Exception hierarchy shared by all tripletkb modules.

Every error carries a short machine-parseable ``category`` used by the CLI
for its single-line error output.
"""


class TripletKbError(Exception):
    """Base class for all errors raised by this package."""

    category = "internal"


class ShapeError(TripletKbError):
    """Tensor dimensions do not match what an operation requires."""

    category = "shape"


class DomainError(TripletKbError):
    """An input value is outside an operation's mathematical domain."""

    category = "domain"


class FormatError(TripletKbError):
    """A file does not start with a supported magic/version line."""

    category = "format"


class IntegrityError(TripletKbError):
    """A blob is truncated, oversized, or contains non-finite values."""

    category = "integrity"


class SchemaError(TripletKbError):
    """File contents disagree with the manifest that describes them."""

    category = "schema"


class StageError(TripletKbError):
    """A stage transition would violate the append-only vocabulary rule."""

    category = "stage"


class VocabularyError(TripletKbError):
    """An answer string is missing from the vocabulary that must cover it."""

    category = "vocabulary"


class TrainingError(TripletKbError):
    """Training aborted (non-finite loss or gradient, empty train split)."""

    category = "training"

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class EvaluationError(TripletKbError):
    """A loss function produced a non-finite value during checking."""

    category = "evaluation"


class AlignmentError(TripletKbError):
    """Two prediction lists that must be aligned have different lengths."""

    category = "alignment"


class CompatibilityError(TripletKbError):
    """Artifact versions or vocabularies are incompatible."""

    category = "compatibility"


class SealError(TripletKbError):
    """A sealed knowledge base was written to, or an unsealed one exported."""

    category = "seal"


class UsageError(TripletKbError):
    """Invalid command-line arguments or flag combinations."""

    category = "usage"
