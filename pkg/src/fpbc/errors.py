"""Exception hierarchy. Every failure mode the toolchain can report has a name here."""


class FpbcError(Exception):
    """Base class for all toolchain errors."""


# --- spec documents -------------------------------------------------------

class SpecParseError(FpbcError):
    """Malformed design document text."""


class MissingField(SpecParseError):
    def __init__(self, name):
        super().__init__(f"missing field: {name}")
        self.name = name


class DuplicateField(SpecParseError):
    def __init__(self, name, line=None):
        super().__init__(f"duplicate field: {name}" + (f" (line {line})" if line else ""))
        self.name = name
        self.line = line


class UnknownCarrier(SpecParseError):
    def __init__(self, value):
        super().__init__(f"unknown carrier: {value!r}")
        self.value = value


class ChainParseError(SpecParseError):
    def __init__(self, position, reason=""):
        super().__init__(f"chain parse error at position {position}: {reason}")
        self.position = position
        self.reason = reason


class FieldSyntaxError(SpecParseError):
    """A field value that does not follow its sub-grammar."""

    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


# --- registry -------------------------------------------------------------

class RegistryError(FpbcError):
    pass


class FileUnreadable(RegistryError):
    pass


class MalformedEntry(RegistryError):
    def __init__(self, index, reason):
        super().__init__(f"registry entry {index}: {reason}")
        self.index = index
        self.reason = reason


class UnknownModality(RegistryError):
    def __init__(self, name, suggestion=None):
        msg = f"unknown modality: {name!r}"
        if suggestion:
            msg += f" (did you mean {suggestion!r}?)"
        super().__init__(msg)
        self.name = name
        self.suggestion = suggestion


# --- primitives -----------------------------------------------------------

class PrimitiveError(FpbcError):
    pass


class MissingParam(PrimitiveError):
    pass


class UnknownFamily(PrimitiveError):
    pass


class TierUnsupported(PrimitiveError):
    pass


class ShapeMismatch(PrimitiveError):
    pass


class DomainError(PrimitiveError):
    pass


class NotLinearizable(PrimitiveError):
    pass


class NegativeIntensity(PrimitiveError):
    pass


class BadEncoderParam(PrimitiveError):
    pass


# --- graph ----------------------------------------------------------------

class GraphError(FpbcError):
    pass


class ShapePropagationError(GraphError):
    def __init__(self, node_id, reason=""):
        super().__init__(f"shape propagation failed at node {node_id}: {reason}")
        self.node_id = node_id


class BoundsExceeded(GraphError):
    pass


class CycleDetected(GraphError):
    pass


class NotAChain(GraphError):
    pass


class TooLargeForDense(GraphError):
    pass


# --- triad / recon / protocol ---------------------------------------------

class MissingDetectorField(FpbcError):
    pass


class MissingSensitivity(FpbcError):
    pass


class AlgorithmIncompatible(FpbcError):
    pass


class Diverged(FpbcError):
    pass


class MissingScenarioData(FpbcError):
    pass


class NonNumericParam(FpbcError):
    pass
