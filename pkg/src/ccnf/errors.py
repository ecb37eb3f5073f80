"""Exception types raised across the package."""


class CcnfError(Exception):
    """Base class for all package errors."""


class GraphError(CcnfError, ValueError):
    pass


class CycleDetected(GraphError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__(f"graph contains a cycle: {' -> '.join(map(str, self.cycle))}")


class DuplicateName(GraphError):
    pass


class DanglingParentLabel(GraphError):
    pass


class BlockEdgeViolation(GraphError):
    pass


class OutOfSupport(CcnfError, ValueError):
    """An observation lies outside the domain of a structural inverse."""

    def __init__(self, node, message=None):
        self.node = node
        super().__init__(message or f"observation outside abduction support at node {node}")


class InvalidConfig(CcnfError, ValueError):
    pass


class NonFiniteValue(CcnfError, ArithmeticError):
    pass


class NonFiniteLoss(CcnfError, ArithmeticError):
    def __init__(self, row, message=None):
        self.row = row
        super().__init__(message or f"non-finite loss (first offending row: {row})")


class NonFiniteJacobian(NonFiniteValue):
    pass


class SizeMismatch(CcnfError, ValueError):
    pass


class EmptySplit(CcnfError, ValueError):
    pass


class DegenerateVariance(CcnfError, ValueError):
    pass


class EmptySample(CcnfError, ValueError):
    pass


class NonBinaryOutput(CcnfError, ValueError):
    pass


class UnknownDataset(CcnfError, KeyError):
    pass


class UnknownNode(CcnfError, KeyError):
    pass


class VersionMismatch(CcnfError, ValueError):
    pass


class IoFailure(CcnfError, OSError):
    pass


class EmptyRunDir(IoFailure):
    pass
