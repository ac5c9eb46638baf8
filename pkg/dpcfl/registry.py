"""name-keyed registries populated by class and function decorators."""

from typing import Callable, Generic, TypeVar

from dpcfl.errors import ParameterError

T = TypeVar("T")


class Registry(Generic[T]):
    """maps names to registered implementations."""

    def __init__(self, kind: str) -> None:
        self.kind = kind
        self._entries: dict[str, T] = {}

    def register(self, name: str, entry: T) -> None:
        """registers an entry under name, replacing any previous one."""
        self._entries[name] = entry

    def get(self, name: str) -> T:
        """
        looks up a registered entry.

        Args:
            name: registered name

        Returns:
            the registered entry

        Raises:
            ParameterError: if nothing is registered under name
        """
        entry = self._entries.get(name)
        if entry is None:
            known = ", ".join(sorted(self._entries))
            raise ParameterError(f"unknown {self.kind} '{name}' (known: {known})")
        return entry

    def names(self) -> list[str]:
        """returns registered names in sorted order."""
        return sorted(self._entries)

    def __contains__(self, name: object) -> bool:
        return name in self._entries


def registers(target_registry: Registry[T], name: str) -> Callable[[T], T]:
    """
    decorator registering the decorated object under name.

    Args:
        target_registry: registry to register with
        name: lookup name

    Returns:
        decorator returning the object unchanged
    """

    def decorator(obj: T) -> T:
        target_registry.register(name, obj)
        return obj

    return decorator
