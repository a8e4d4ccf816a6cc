"""The action registry: request actions, their callbacks and protocol phases."""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterator, Mapping

from opennet.errors import ActionCollision, AlreadyACallback, UnknownAction

PHASES = ("discovery", "negotiation", "order", "fulfillment", "post-fulfillment")
CALLBACK_PREFIX = "on_"


@dataclass(frozen=True)
class ActionSpec:
    callback: str
    phase: str
    core: bool


class ActionRegistry:
    """Immutable map of request action -> :class:`ActionSpec`.

    Extensions are added with :meth:`with_extension`, which returns a new
    registry and refuses names that shadow an existing action or callback.
    """

    def __init__(self, entries: Mapping[str, ActionSpec]) -> None:
        self._entries = MappingProxyType(dict(entries))
        self._by_callback = {spec.callback: name for name, spec in entries.items()}
        if len(self._by_callback) != len(self._entries):
            raise ActionCollision("two actions share one callback")
        overlap = set(self._entries) & set(self._by_callback)
        if overlap:
            raise ActionCollision(f"names used both as action and callback: {sorted(overlap)}")

    @property
    def entries(self) -> Mapping[str, ActionSpec]:
        return self._entries

    def __contains__(self, name: object) -> bool:
        return name in self._entries or name in self._by_callback

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def core_actions(self) -> tuple[str, ...]:
        return tuple(a for a, s in self._entries.items() if s.core)

    @property
    def extension_actions(self) -> tuple[str, ...]:
        return tuple(a for a, s in self._entries.items() if not s.core)

    def events(self) -> tuple[str, ...]:
        """All requests followed by all callbacks."""
        return tuple(self._entries) + tuple(self._by_callback)

    def is_request(self, name: str) -> bool:
        return name in self._entries

    def is_callback(self, name: str) -> bool:
        return name in self._by_callback

    def pair_callback(self, action: str) -> str:
        if action in self._by_callback:
            raise AlreadyACallback(f"{action!r} is a callback and has no callback of its own")
        try:
            return self._entries[action].callback
        except KeyError:
            raise UnknownAction(action) from None

    def request_of(self, callback: str) -> str:
        try:
            return self._by_callback[callback]
        except KeyError:
            raise UnknownAction(callback) from None

    def request_name(self, event: str) -> str:
        """The request action an event belongs to (itself, or its request)."""
        if event in self._entries:
            return event
        return self.request_of(event)

    def phase(self, event: str) -> str:
        return self._entries[self.request_name(event)].phase

    def is_core(self, event: str) -> bool:
        return self._entries[self.request_name(event)].core

    def with_extension(self, action: str, phase: str = "post-fulfillment") -> "ActionRegistry":
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        callback = CALLBACK_PREFIX + action
        if action.startswith(CALLBACK_PREFIX):
            raise ActionCollision(f"extension action {action!r} uses the callback prefix")
        if action in self or callback in self:
            raise ActionCollision(f"extension {action!r} collides with a registered name")
        entries = dict(self._entries)
        entries[action] = ActionSpec(callback=callback, phase=phase, core=False)
        return ActionRegistry(entries)


def _core_entries() -> dict[str, ActionSpec]:
    # One request per fundamental interaction, in protocol order.
    table = [
        ("search", "discovery"),  # intent and catalog discovery
        ("select", "negotiation"),  # price
        ("init", "negotiation"),  # terms
        ("confirm", "order"),
        ("update", "order"),  # modification of an active order
        ("cancel", "order"),
        ("status", "fulfillment"),
        ("track", "fulfillment"),
        ("rating", "post-fulfillment"),
        ("support", "post-fulfillment"),
    ]
    return {a: ActionSpec(CALLBACK_PREFIX + a, phase, True) for a, phase in table}


CORE_ACTIONS = ActionRegistry(_core_entries())


def pair_callback(action: str, registry: ActionRegistry = CORE_ACTIONS) -> str:
    return registry.pair_callback(action)
