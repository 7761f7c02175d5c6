"""Exception hierarchy shared by every layer of the stack."""


class SanetError(Exception):
    """Base class for all errors raised by this package."""


# frame transport
class TransportError(SanetError):
    pass


class DuplicateAddress(TransportError):
    pass


class InvalidAddress(TransportError):
    pass


class OversizePayload(TransportError):
    pass


class SourceMismatch(TransportError):
    pass


class Detached(TransportError):
    pass


class MalformedFrame(TransportError):
    pass


# reliable ethernet
class ReliabilityError(SanetError):
    pass


class MessageTooLarge(ReliabilityError):
    pass


class MalformedSegment(ReliabilityError):
    pass


class CrcMismatch(MalformedSegment):
    pass


class InconsistentFragCount(ReliabilityError):
    pass


# crypto
class CryptoError(SanetError):
    pass


class DecryptFailure(CryptoError):
    pass


class MalformedKey(CryptoError):
    pass


class UnknownLabel(CryptoError):
    pass


class EncodingError(SanetError):
    """Canonical length-prefixed data could not be decoded."""


# handshake
class HandshakeError(SanetError):
    pass


class MissingCredentials(HandshakeError):
    pass


class BadCertificate(HandshakeError):
    pass


class UnsupportedMode(HandshakeError):
    pass


class Malformed(HandshakeError):
    pass


class SignatureInvalid(HandshakeError):
    pass


class StaleNonce(HandshakeError):
    pass


class HandshakeTimeout(HandshakeError):
    pass


class InvalidPhase(HandshakeError):
    """A message arrived for a session in the wrong phase (including Failed)."""


# secure channel
class ChannelError(SanetError):
    pass


class ChannelClosed(ChannelError):
    pass


class IntegrityFailure(ChannelError):
    """Tag, framing or padding check failed. Padding errors surface as this class too."""


class ReplayDetected(ChannelError):
    pass


# connection manager
class ConnectionError_(SanetError):
    pass


class UnknownDevice(ConnectionError_):
    pass


class NotEstablished(ConnectionError_):
    pass


class HandshakeFailed(ConnectionError_):
    def __init__(self, cause):
        super().__init__(f"handshake failed: {cause}")
        self.cause = cause


class ConnectTimeout(ConnectionError_):
    pass


# simulator
class ScenarioInvalid(SanetError):
    pass


class ParseAmbiguity(SanetError):
    pass


class ConfigInvalid(SanetError):
    """Node configuration or credential files are missing or inconsistent."""
