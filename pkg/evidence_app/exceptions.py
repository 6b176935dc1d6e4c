class SvpError(Exception):
    """Base class for every error raised by the evidence, ledger and proof apps."""


class ParameterError(SvpError, ValueError):
    """Group parameters are invalid or do not match the ones a record was made with."""


class EntropyError(SvpError, RuntimeError):
    """The randomness source failed to produce a value."""


class SaltError(SvpError, ValueError):
    """The salt is too short to protect low-entropy contracts."""


class ContentError(SvpError, ValueError):
    """Contract content is empty, has duplicate labels or is not a valid container."""


class LabelError(SvpError, KeyError):
    """A term label is not part of the evidence record."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown label"


class DuplicateContractError(SvpError, ValueError):
    """The contract id is already registered on the ledger."""


class EvidenceNotFound(SvpError, LookupError):
    """No evidence record is stored under the contract id."""


class IntegrityError(SvpError):
    """
    The ledger file or chain does not verify.

    Attributes:
        block_index: Index of the first block that failed, or None if the
            failure is not tied to a block.
    """

    def __init__(self, message, block_index=None):
        super().__init__(message)
        self.block_index = block_index


class ProtocolOrderError(SvpError):
    """A session received a message that is not legal in its current phase."""


class MalformedMessageError(SvpError, ValueError):
    """A protocol value is outside its group or range."""


class FrameError(SvpError):
    """A wire frame is empty or larger than the allowed maximum."""


class DecodeError(SvpError, ValueError):
    """A wire message or transcript body does not match its schema."""


class TransportError(SvpError, ConnectionError):
    """The connection to the peer failed or timed out."""


class SessionError(SvpError):
    """The peer aborted the session; ``reason`` carries its explanation."""

    def __init__(self, reason):
        super().__init__(f"Session aborted by peer: {reason}")
        self.reason = reason


class SessionAbortError(SvpError):
    """The protocol stopped part-way; ``transcript`` holds the rounds completed so far."""

    def __init__(self, message, transcript=None):
        super().__init__(message)
        self.transcript = transcript
