"""Exception hierarchy shared across the package.

The CLI maps each family to its own exit code, so new errors should
subclass the closest family rather than ``FogIDSError`` directly.
"""


class FogIDSError(Exception):
    pass


class ParseError(FogIDSError):
    """One or more input lines could not be parsed.

    ``errors`` holds ``(line_number, message)`` pairs, 1-based.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        shown = "; ".join(f"line {n}: {msg}" for n, msg in self.errors[:5])
        more = len(self.errors) - 5
        if more > 0:
            shown += f"; ... {more} more"
        super().__init__(shown)

    @property
    def line(self):
        return self.errors[0][0] if self.errors else None


class SchemaError(FogIDSError):
    """Shapes, widths, feature names or schema hashes do not line up."""


class UnmappedLabelError(SchemaError):
    def __init__(self, names):
        self.names = sorted(set(names))
        super().__init__(f"attack names without a category: {', '.join(self.names)}")


class TrainingError(FogIDSError):
    pass


class DivergenceError(TrainingError):
    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")


class ProtocolError(FogIDSError):
    """Wire-level failure. ``code`` is one of the ``E_*`` constants in netsvc.protocol."""

    def __init__(self, code, message):
        self.code = code
        super().__init__(f"{code}: {message}")
