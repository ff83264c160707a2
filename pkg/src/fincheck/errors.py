"""Exception and warning types shared across the package."""


class FincheckError(Exception):
    pass


# domain model
class NotNumeric(FincheckError, ValueError):
    pass


class UnitMismatch(FincheckError, ValueError):
    pass


# corpus
class SchemaError(FincheckError, ValueError):
    pass


class TableShapeError(FincheckError, ValueError):
    pass


class DanglingCitation(FincheckError, LookupError):
    pass


class LabelMismatch(FincheckError, LookupError):
    pass


class StaleIndex(FincheckError):
    pass


# retrieval
class EmptyCorpus(FincheckError, ValueError):
    pass


class DimensionMismatch(FincheckError, ValueError):
    pass


class RetrievalUnavailable(FincheckError):
    pass


# backends
class BackendUnavailable(FincheckError):
    pass


class EmbeddingUnavailable(BackendUnavailable):
    pass


class MalformedBackendOutput(FincheckError):
    pass


# verification
class AmbiguousFormula(FincheckError):
    def __init__(self, names):
        super().__init__(f"ambiguous formula match: {', '.join(names)}")
        self.names = list(names)


class MissingOperands(FincheckError):
    def __init__(self, slots):
        self.slots = frozenset(slots)
        super().__init__(f"missing operands: {', '.join(sorted(self.slots))}")


class DivisionByZero(FincheckError, ArithmeticError):
    pass


class TemplateError(FincheckError, ValueError):
    pass


# regeneration
class SpanNotFound(FincheckError):
    pass


class NoEvidenceAvailable(FincheckError):
    pass


class PreconditionViolation(FincheckError, ValueError):
    pass


# metrics
class EmptyInput(FincheckError, ValueError):
    pass


class TargetBelowAnchor(FincheckError, ValueError):
    pass


class FingerprintMismatch(FincheckError):
    pass


# service
class UnknownClaim(FincheckError, KeyError):
    pass


# warnings
class ExtractionIncomplete(UserWarning):
    pass


class ZeroVectorWarning(RuntimeWarning):
    pass
