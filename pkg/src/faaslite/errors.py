"""Shared exception taxonomy.

Exceptions that cross module boundaries live here so that callers can
catch by category without import cycles.  Engine-internal traps are not
errors in this sense; they are modelled by ``faaslite.wasm.interp.Trap``
and surfaced to embedders as ``TrapInfo`` values.
"""


class FaasliteError(Exception):
    """Base class for all runtime errors raised by this package."""


# --- module loading / sandbox ---------------------------------------------

class ValidationError(FaasliteError):
    """Module bytes are malformed or fail bytecode validation."""


class LinkError(FaasliteError):
    """Module imports a symbol the host interface does not provide."""


class LimitError(FaasliteError):
    """A configured resource limit makes the request unsatisfiable."""


class BusyError(FaasliteError):
    """The target is mid-operation (sandbox running a call, lock held)."""


class InstantiationError(FaasliteError):
    """Instantiation failed (bad data segment, entry missing, etc.)."""


# --- snapshots --------------------------------------------------------------

class SnapshotFormatError(FaasliteError):
    """Serialized snapshot bytes are corrupt or have a bad version."""


class SnapshotMismatchError(FaasliteError):
    """Snapshot does not belong to the function definition supplied."""


# --- state ------------------------------------------------------------------

class StateError(FaasliteError):
    """Base class for state-tier failures."""


class NotFoundError(StateError):
    """Key absent from the tier consulted."""


class RangeError(StateError):
    """Offset/length outside the value bounds."""


class ModeError(StateError):
    """Operation conflicts with the value's mode (append vs. linear)."""


class LeaseExpiredError(StateError):
    """A held global lock lease lapsed before the unlock arrived."""


class TransportError(StateError):
    """The global tier could not be reached or the connection broke."""


# --- node -------------------------------------------------------------------

class UnknownFunctionError(FaasliteError):
    """No deployed function matches the (user, name) pair."""


class UnknownCallError(FaasliteError):
    """No call record matches the id given."""
