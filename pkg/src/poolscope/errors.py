"""Exception hierarchy.

Every error raised on bad input data derives from ``PoolscopeError`` so the
CLI can map it to the data-error exit code and print the class name verbatim.
"""


class PoolscopeError(Exception):
    pass


# chain ingestion

class ChainDataError(PoolscopeError):
    line_no: int | None = None


class MalformedRecord(ChainDataError):
    def __init__(self, line_no, reason):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class NonContiguousHeights(ChainDataError):
    def __init__(self, expected, found):
        super().__init__(f"expected height {expected}, found {found}")
        self.expected = expected
        self.found = found


class DuplicateTxid(ChainDataError):
    def __init__(self, txid):
        super().__init__(txid)
        self.txid = txid


class NegativeValue(ChainDataError):
    pass


class NegativeFee(ChainDataError):
    pass


class MissingCoinbase(ChainDataError):
    pass


class BadCoinbaseInput(ChainDataError):
    pass


# attribution

class UnknownSchema(PoolscopeError):
    pass


class AliasCycle(PoolscopeError):
    pass


class MismatchedRanges(PoolscopeError):
    pass


# clustering

class UnknownAddress(PoolscopeError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


# payouts

class CollectorNotFound(PoolscopeError):
    pass


class ChainBroken(PoolscopeError):
    def __init__(self, txid):
        super().__init__(txid)
        self.txid = txid


class WindowMismatch(PoolscopeError):
    pass


class InvalidParams(PoolscopeError):
    pass


# analytics

class EmptyInput(PoolscopeError, ValueError):
    pass


class AllZero(PoolscopeError, ValueError):
    pass


class WindowTooSmall(PoolscopeError):
    pass


# synthetic generator

class InvalidConfig(PoolscopeError):
    pass
