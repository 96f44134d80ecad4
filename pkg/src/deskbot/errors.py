"""Shared exception types."""


class DeskbotError(Exception):
    """Base class for all package errors."""


class DimensionError(DeskbotError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigurationError(DeskbotError):
    """A configuration value violates a documented constraint."""


class ContractError(DeskbotError):
    """A caller broke a documented precondition."""


class NumericDivergenceError(DeskbotError):
    """A numeric computation produced NaN/Inf."""


class IntegrityError(DeskbotError):
    """A stored artifact is truncated, corrupted, or version-incompatible."""


class PlanningError(DeskbotError):
    """The task planner produced no usable plan."""


class UnknownTaskError(PlanningError):
    """No planning pattern matches the instruction."""


class MatchError(DeskbotError):
    """A plan step has no matching skill in the registry."""


class ScriptedFailure(DeskbotError):
    """A scripted controller could not complete the episode."""
