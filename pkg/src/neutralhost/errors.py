"""Exception hierarchy shared by the ledger, contracts and simulator."""


class NeutralHostError(Exception):
    """Base class for every error raised by this package."""


class LedgerError(NeutralHostError):
    pass


class MalformedTransaction(LedgerError, ValueError):
    """Raised by ``submit_transaction`` before a transaction is queued."""


class UnknownAccount(LedgerError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ExecutionError(LedgerError):
    """Failure of a transaction during block execution.

    ``code`` is the stable, machine-readable name recorded in receipts and
    ``TxFailed`` events.
    """

    code = "ExecutionError"

    def __init__(self, message=""):
        super().__init__(message or self.code)


class BadNonce(ExecutionError):
    code = "BadNonce"


class FeeUnpaid(ExecutionError):
    code = "FeeUnpaid"


class InsufficientFunds(ExecutionError):
    code = "InsufficientFunds"


class UnknownMethod(ExecutionError):
    code = "UnknownMethod"


class BadArguments(ExecutionError):
    code = "BadArguments"


# contract-level failures

class ContractError(ExecutionError):
    code = "ContractError"


class AccessDenied(ContractError):
    code = "AccessDenied"


class AlreadyRegistered(ContractError):
    code = "AlreadyRegistered"


class ContractTerminated(ContractError):
    code = "ContractTerminated"


class EcgiMismatch(ContractError):
    code = "EcgiMismatch"


class ZeroCredit(ContractError):
    code = "ZeroCredit"


class NotTerminated(ContractError):
    code = "NotTerminated"


class WrongBillingMode(ContractError):
    code = "WrongBillingMode"


# simulator / IO

class ScenarioError(NeutralHostError, ValueError):
    """Invalid scenario; ``problems`` lists every diagnostic found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class SessionError(NeutralHostError):
    """Attach/detach called in the wrong UE state."""


class GeometryMismatch(NeutralHostError, ValueError):
    pass


class SiteFileError(NeutralHostError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
