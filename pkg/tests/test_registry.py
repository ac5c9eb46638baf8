"""tests for name registries and error types."""

import pytest

from dpcfl.errors import DpcflError, ParameterError
from dpcfl.registry import Registry, registers


def test_register_and_get() -> None:
    """registered entries are returned by name."""
    registry: Registry[int] = Registry("number")
    registry.register("one", 1)

    assert registry.get("one") == 1
    assert "one" in registry
    assert "two" not in registry


def test_get_unknown_name_lists_known_names() -> None:
    """unknown names raise ParameterError naming the known entries."""
    registry: Registry[int] = Registry("number")
    registry.register("b", 2)
    registry.register("a", 1)

    with pytest.raises(ParameterError, match="unknown number 'c' \\(known: a, b\\)"):
        registry.get("c")


def test_names_are_sorted() -> None:
    """names() is sorted regardless of registration order."""
    registry: Registry[int] = Registry("number")
    for name in ("zeta", "alpha", "mu"):
        registry.register(name, 0)

    assert registry.names() == ["alpha", "mu", "zeta"]


def test_registers_decorator_returns_object_unchanged() -> None:
    """registers() registers the decorated function and returns it."""
    registry: Registry[object] = Registry("hook")

    @registers(registry, "hook")
    def hook() -> str:
        return "called"

    assert registry.get("hook") is hook
    assert hook() == "called"


def test_parameter_error_is_value_error() -> None:
    """ParameterError is both a simulator error and a ValueError."""
    error = ParameterError("bad")

    assert isinstance(error, DpcflError)
    assert isinstance(error, ValueError)
