"""Subcommand registry and the metadata decorators that describe each entry.

Supported decorator order keeps ``@subcommand(...)`` directly above the
handler so it runs first and the metadata decorators receive a
``Subcommand``::

    @help_metadata(...)
    @cost("desk")
    @subcommand("b3")
    def b3_cmd(cfg, ctx):
        ...
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, TypeVar

VALID_SECTIONS = frozenset({"simulate", "verify", "inspect"})
VALID_COSTS = frozenset({"instant", "desk", "long"})
VALID_OUTPUTS = frozenset({"results.csv", "verdicts.json", "provenance.json"})


@dataclass(slots=True)
class Subcommand:
    name: str
    handler: Callable[..., Any]
    brief: str
    extras: Dict[str, Any] = field(default_factory=dict)

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.handler(*args, **kwargs)


T = TypeVar("T", bound=Subcommand)

REGISTRY: Dict[str, Subcommand] = {}


def _require_subcommand(obj: Any, decorator_name: str) -> Subcommand:
    if not isinstance(obj, Subcommand):
        raise TypeError(
            f"@{decorator_name} must be applied above @subcommand "
            "so it receives a registered Subcommand."
        )
    return obj


def _validate(value: str, valid: frozenset[str], label: str) -> str:
    if value not in valid:
        allowed = ", ".join(sorted(valid))
        raise ValueError(f"Invalid {label} {value!r}; expected one of: {allowed}")
    return value


def _normalize_flags(flags: Iterable[str] | None) -> tuple[str, ...]:
    if flags is None:
        return ()
    normalized = tuple(str(flag) for flag in flags)
    if any(not flag for flag in normalized):
        raise ValueError("help metadata flags must be non-empty strings")
    return normalized


def subcommand(name: str, *, registry: Dict[str, Subcommand] | None = None):
    """Register a handler under ``name``; the docstring's first line is the brief."""
    target = REGISTRY if registry is None else registry

    def decorator(handler: Callable[..., Any]) -> Subcommand:
        if name in target:
            raise ValueError(f"subcommand {name!r} is already registered")
        doc = (handler.__doc__ or "").strip()
        entry = Subcommand(name=name, handler=handler, brief=doc.splitlines()[0] if doc else "")
        target[name] = entry
        return entry

    return decorator


def cost(value: str):
    """Mark a subcommand with its expected runtime class."""
    checked = _validate(value, VALID_COSTS, "cost")

    def decorator(command: T) -> T:
        checked_command = _require_subcommand(command, "cost")
        checked_command.extras["cost"] = checked
        return command

    return decorator


def help_metadata(
    *,
    section: str,
    usage: str | None = None,
    outputs: Iterable[str] = ("results.csv", "verdicts.json", "provenance.json"),
    flags: Iterable[str] | None = None,
):
    """Attach help metadata to a registered subcommand."""
    checked_section = _validate(section, VALID_SECTIONS, "section")
    checked_outputs = tuple(_validate(str(o), VALID_OUTPUTS, "output") for o in outputs)
    normalized_flags = _normalize_flags(flags)

    def decorator(command: T) -> T:
        checked_command = _require_subcommand(command, "help_metadata")
        checked_command.extras["help_section"] = checked_section
        checked_command.extras["help_usage"] = usage
        checked_command.extras["outputs"] = checked_outputs
        checked_command.extras["help_flags"] = normalized_flags
        return command

    return decorator


def get_help_metadata(command: Subcommand) -> dict[str, Any]:
    """Return only the helper-owned metadata fields."""
    checked_command = _require_subcommand(command, "get_help_metadata")
    extras = checked_command.extras
    return {key: extras.get(key) for key in ("help_section", "help_usage", "outputs", "help_flags", "cost")}
