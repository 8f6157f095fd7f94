"""Exception hierarchy shared by all ppgauth modules."""


class PPGAuthError(Exception):
    """Base class for every error raised by ppgauth."""


# signal I/O
class MissingColumn(PPGAuthError):
    pass


class NonMonotonicTimestamp(PPGAuthError):
    pass


class ChannelCountMismatch(PPGAuthError):
    pass


class NumericParse(PPGAuthError):
    def __init__(self, row, message=""):
        self.row = row
        super().__init__(f"row {row}: {message}" if message else f"row {row}")


class InvalidProfile(PPGAuthError):
    pass


class UpsampleUnsupported(PPGAuthError):
    pass


class RateTooLowForBand(PPGAuthError):
    pass


# dataset
class DegenerateChannel(PPGAuthError):
    pass


class ClassTooSmall(PPGAuthError):
    def __init__(self, label, count):
        self.label = label
        self.count = count
        super().__init__(f"class {label} has only {count} windows (need >= 3)")


class EmptyClass(PPGAuthError):
    def __init__(self, label):
        self.label = label
        super().__init__(f"class {label} has no training windows")


class EmptyResult(PPGAuthError):
    pass


# nn / training
class ShapeMismatch(PPGAuthError):
    pass


class NonFiniteGradient(PPGAuthError):
    pass


class EmptyDataset(PPGAuthError):
    pass


class CorruptCheckpoint(PPGAuthError):
    pass


class VersionMismatch(PPGAuthError):
    pass


# metrics
class LabelOutOfRange(PPGAuthError):
    pass


class EmptyScores(PPGAuthError):
    pass


# streaming
class BadMagic(PPGAuthError):
    pass


class BadVersion(PPGAuthError):
    pass


class LengthMismatch(PPGAuthError):
    pass


class Truncated(PPGAuthError):
    pass


class SequenceRegression(PPGAuthError):
    pass


class BindFailure(PPGAuthError):
    pass


class ConnectFailure(PPGAuthError):
    pass


# study / cli
class OutOfMeasuredRange(PPGAuthError):
    pass


class UsageError(PPGAuthError):
    pass
