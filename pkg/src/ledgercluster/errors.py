"""Exception types shared across the package."""


class LedgerClusterError(Exception):
    """Base class for all errors raised by this package."""


# --- data ingestion ---------------------------------------------------------

class MalformedRow(LedgerClusterError):
    def __init__(self, line_number: int, detail: str):
        super().__init__(f"line {line_number}: {detail}")
        self.line_number = line_number
        self.detail = detail


class EmptyFile(LedgerClusterError):
    pass


class NoQualifyingAccounts(LedgerClusterError):
    pass


# --- networks ---------------------------------------------------------------

class IncompatibleLength(LedgerClusterError):
    pass


class ShapeMismatch(LedgerClusterError):
    pass


class UnsupportedArchitecture(LedgerClusterError):
    pass


class NonFiniteGradient(LedgerClusterError):
    pass


class NonFiniteLoss(LedgerClusterError):
    pass


# --- losses / clustering ----------------------------------------------------

class NonFiniteAssignment(LedgerClusterError):
    pass


class DegenerateColumn(LedgerClusterError):
    pass


class TooFewPoints(LedgerClusterError):
    pass


class SingleCluster(LedgerClusterError):
    pass


class CoincidentCentroids(LedgerClusterError):
    pass


# --- harness ----------------------------------------------------------------

class NoValidRows(LedgerClusterError):
    pass


class IncompatibleCombination(LedgerClusterError):
    def __init__(self, spec: str, reason: str):
        super().__init__(f"{spec}: {reason}")
        self.spec = spec
        self.reason = reason
