"""Exception types raised across the package."""


class OpenSyncError(Exception):
    """Base class for every error this package raises on purpose."""


# --- wire protocol ---------------------------------------------------------

class MalformedInfo(OpenSyncError, ValueError):
    """Stream-info XML is missing fields or carries unparseable values."""


class MalformedMessage(OpenSyncError, ValueError):
    """A discovery / time-sync / handshake message does not parse."""


class DecodeTruncated(OpenSyncError, ValueError):
    """Byte stream ended in the middle of a sample frame."""


class DecodeBadFlag(OpenSyncError, ValueError):
    """Sample frame starts with an invalid timestamp flag or length prefix."""


class InvalidQuery(OpenSyncError, ValueError):
    """Resolve query uses a key outside name/type/source_id."""


class FormatMismatch(OpenSyncError, ValueError):
    """Sample values do not match the declared channel format or count."""


# --- clock synchronization -------------------------------------------------

class InvalidExchange(OpenSyncError, ValueError):
    """Four-timestamp exchange yields a negative round-trip time."""


class NoMeasurements(OpenSyncError):
    """No clock measurements available inside the requested window."""


# --- streaming -------------------------------------------------------------

class PortUnavailable(OpenSyncError, OSError):
    """Could not bind the TCP listener or the discovery socket."""


class InvalidCapacity(OpenSyncError, ValueError):
    """Outlet buffer capacity must be a positive sample count."""


class ConnectionLost(OpenSyncError):
    """The peer went away; the inlet is terminal after this is raised."""


class HandshakeRejected(OpenSyncError):
    """The outlet refused the pull handshake (unknown uid)."""


class OutletClosed(OpenSyncError):
    """Operation on an outlet that has already been closed."""


# --- XDF files -------------------------------------------------------------

class BadMagic(OpenSyncError, ValueError):
    """File does not start with the XDF magic bytes."""


class TruncatedChunk(OpenSyncError, ValueError):
    """Chunk framing ran past the end of the file."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at byte {position})")
        self.position = position


class UnknownStreamId(OpenSyncError, ValueError):
    """Chunk references a stream id with no prior stream header."""


class IoFailure(OpenSyncError, OSError):
    """Underlying file I/O failed."""


# --- simulators ------------------------------------------------------------

class InvalidPreset(OpenSyncError, ValueError):
    """Device preset rejects the requested rate/channel combination."""


class InvalidConfig(OpenSyncError, ValueError):
    """Simulator configuration violates its kind's constraints."""


class StillRunning(OpenSyncError):
    """Emission report requested while the simulator is still emitting."""


class SimulatorFailure(OpenSyncError):
    """A benchmark case could not spawn or run its simulators."""


# --- statistics ------------------------------------------------------------

class InvalidInput(OpenSyncError, ValueError):
    """Argument outside the documented domain."""


class EmptyInput(OpenSyncError, ValueError):
    """Statistics over an empty collection."""


class DegenerateInput(OpenSyncError, ValueError):
    """Test statistic undefined (for example zero within-group variance)."""
