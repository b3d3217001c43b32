"""Exception types shared across the package.

Every error raised to CLI level is printed as ``ERROR <kind>: <message>``
where <kind> is the class name.
"""


class TailGNNError(Exception):
    """Base class for all package errors."""


# --- ontology ---

class CycleDetected(TailGNNError):
    pass


class DuplicateEdge(TailGNNError):
    pass


class MalformedLine(TailGNNError):
    pass


class IndexOutOfRange(TailGNNError):
    pass


class LengthMismatch(TailGNNError):
    pass


class EmptyResult(TailGNNError):
    pass


class ConvergenceFailure(TailGNNError):
    pass


# --- autodiff ---

class ShapeMismatch(TailGNNError):
    pass


class EvenKernel(TailGNNError):
    pass


class AxisOutOfRange(TailGNNError):
    pass


class NotScalar(TailGNNError):
    pass


class DetachedTensor(TailGNNError):
    pass


# --- dataio ---

class EmptyFile(TailGNNError):
    pass


class SequenceBeforeHeader(TailGNNError):
    pass


class UnknownTerm(TailGNNError):
    pass


class InvalidResidue(TailGNNError):
    pass


class TooFewRecords(TailGNNError):
    pass


class MotifSpaceExhausted(TailGNNError):
    pass


# --- model ---

class IsolatedNode(TailGNNError):
    pass


# --- train ---

class NonFiniteGradient(TailGNNError):
    pass


class EmptySplit(TailGNNError):
    pass


class BadMagic(TailGNNError):
    pass


class VersionMismatch(TailGNNError):
    pass


class TruncatedFile(TailGNNError):
    pass


# --- eval ---

class TooFewRuns(TailGNNError):
    pass


# --- cli ---

class DigestMismatch(TailGNNError):
    pass
