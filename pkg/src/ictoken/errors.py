"""Exception hierarchy.

Tracker services abort with a subclass of :class:`Rejected`; the class name
is what the CLI and scenario reports print.
"""


class ICTokenError(Exception):
    """Base class for every error raised by this package."""


# crypto / token model

class EmptyLeafSet(ICTokenError, ValueError):
    pass


class PlaintextTooLong(ICTokenError, ValueError):
    pass


class DecryptionFailure(ICTokenError):
    pass


class MalformedToken(ICTokenError, ValueError):
    pass


class MalformedKey(ICTokenError, ValueError):
    pass


class EmptyIdentifier(ICTokenError, ValueError):
    pass


# wallet

class NotHeld(ICTokenError):
    pass


class MixedStages(ICTokenError):
    pass


class EmptyList(ICTokenError, ValueError):
    pass


class TrackerUnavailable(ICTokenError):
    pass


# tracker rejections

class Rejected(ICTokenError):
    """A transaction failed one of the tracker's service checks."""


class AlreadyEnrolled(Rejected):
    pass


class ProfileMismatch(Rejected):
    pass


class OwnerNotEnrolled(Rejected):
    pass


class DuplicateICID(Rejected):
    pass


class BadSignature(Rejected):
    pass


class WrongStage(Rejected):
    pass


class WrongStatus(Rejected):
    pass


class NonEmptyComposition(Rejected):
    pass


class BadVersion(Rejected):
    pass


class UnknownICID(Rejected):
    pass


class NotCurrentOwner(Rejected):
    pass


class DefectiveToken(Rejected):
    pass


class IllegalFieldChange(Rejected):
    pass


class StageRollback(Rejected):
    pass


class StatusRollback(Rejected):
    pass


class MixedOwners(Rejected):
    pass


class BatchInvalid(Rejected):
    pass


class MerkleMismatch(Rejected):
    pass


class CompositionAlreadySet(Rejected):
    pass


class NewOwnerNotEnrolled(Rejected):
    pass


class InProgress(Rejected):
    pass


class KeyTrailBroken(Rejected):
    pass


class SafetyViolation(ICTokenError):
    """Two different blocks gathered a quorum in the same round."""


class ReplayMismatch(Rejected):
    """A committed transaction does not reproduce under replay from genesis."""
