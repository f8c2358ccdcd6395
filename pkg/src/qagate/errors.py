"""Exception types shared across the gateway."""

from __future__ import annotations


class QagateError(Exception):
    """Base class for all gateway errors."""

    error_code = "internal"


class PolicySyntaxError(QagateError):
    """Policy document is not well-formed (bad JSON, wrong shape)."""

    error_code = "policy-syntax"

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class PolicySemanticError(QagateError):
    """Policy document violates a model invariant (unknown action, bad operand)."""

    error_code = "policy-semantic"

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class EmptyDocumentError(QagateError):
    error_code = "empty-document"


class AssetPolicyMismatchError(QagateError):
    error_code = "asset-policy-mismatch"


class AssetNotIndexedError(QagateError):
    error_code = "asset-not-indexed"


class CorruptIndexError(QagateError):
    error_code = "corrupt-index"


class UnknownPolicyError(QagateError):
    error_code = "unknown-policy"


class UnknownAssetError(QagateError):
    error_code = "unknown-asset"


class UnknownPurposeError(QagateError):
    error_code = "unknown-purpose"


class AgreementExpiredError(QagateError):
    error_code = "agreement-expired"


class UnknownAgreementError(QagateError):
    error_code = "unknown-agreement"


class UnknownTokenError(QagateError):
    error_code = "unknown-token"


class ExpiredSessionError(QagateError):
    error_code = "expired-session"


class GenerationUnavailableError(QagateError):
    """The generator backend could not produce a draft (transport failure)."""

    error_code = "generation-unavailable"


class UnlocalizedViolationError(QagateError):
    """A violation carries no span, so redaction cannot be applied."""

    error_code = "cannot-redact"


class DutyUndischargeableError(QagateError):
    """A logging duty could not be discharged (audit append failed)."""

    error_code = "duty-undischargeable"
