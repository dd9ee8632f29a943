"""Exception types shared across the package."""


class DegenerateInputError(ValueError):
    """Input has no usable variation or support (constant image, empty mask...)."""


class GateCollapseError(RuntimeError):
    """Gated view fusion denominator fell to or below its floor."""
