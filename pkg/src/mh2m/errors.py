"""Exception hierarchy; each class carries the CLI exit code of its stage."""


class MH2MError(Exception):
    exit_code = 1


class ConfigError(MH2MError, ValueError):
    exit_code = 2


class MeshError(MH2MError, ValueError):
    """Invalid geometric input (degenerate domain, bad mesh file)."""

    exit_code = 3


class HierarchyError(MH2MError):
    """Mesh hierarchy violates conformity, nesting or (M1)."""

    exit_code = 3


class CompatibilityError(MH2MError):
    """Local multiplier Gram matrix is singular: T_h is not injective on the
    zero-mean multiplier space of an element."""

    exit_code = 4

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class ThresholdError(MH2MError):
    exit_code = 5
