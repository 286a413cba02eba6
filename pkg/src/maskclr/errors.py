"""Exception types shared across the package.

Every failure the CLI can surface carries a short machine-parsable
``category`` used in its one-line error report.
"""


class MaskclrError(Exception):
    category = "internal"


class DimensionError(MaskclrError):
    """Operand shapes do not conform."""

    category = "dimension"


class ContractError(MaskclrError):
    """An API precondition was violated by the caller."""

    category = "contract"


class NonFiniteError(MaskclrError):
    """A forward operation produced NaN or Inf."""

    category = "non-finite"


class DegenerateVectorError(MaskclrError):
    """A vector with (near-)zero norm reached a norm-sensitive operation."""

    category = "degenerate-vector"


class InsufficientBatchError(MaskclrError):
    """Too few usable pairs remain in a batch."""

    category = "insufficient-batch"


class ConfigurationError(MaskclrError):
    category = "configuration"


class IngestionError(MaskclrError):
    category = "ingestion"


class SingularComponentError(MaskclrError):
    """A mixture component collapsed and could not be re-seeded."""

    category = "singular-component"


class TrainingAborted(MaskclrError):
    """The training loop stopped itself (mask collapse, non-finite loss)."""

    category = "training-aborted"
