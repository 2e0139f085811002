"""Exception taxonomy shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(RuntimeError):
    """A caller violated an API precondition (bad state, bad call order)."""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class GenerationError(RuntimeError):
    """Procedural floor plan generation could not satisfy its constraints."""


class TaskError(ValueError):
    """An episode was requested that the floor plan cannot support."""
