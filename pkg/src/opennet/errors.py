"""Exception hierarchy shared by every opennet module."""

from __future__ import annotations


class ProtocolError(Exception):
    """Base class for all opennet errors."""


# core model
class UnknownAction(ProtocolError, KeyError):
    def __init__(self, action: str) -> None:
        super().__init__(action)
        self.action = action

    def __str__(self) -> str:
        return f"unknown action {self.action!r}"


class AlreadyACallback(ProtocolError, ValueError):
    pass


class ActionCollision(ProtocolError, ValueError):
    pass


class NonPositiveTtl(ProtocolError, ValueError):
    pass


class MalformedDocument(ProtocolError, ValueError):
    pass


class MissingContextField(MalformedDocument):
    pass


class IllegalTransition(ProtocolError):
    def __init__(self, state: str, event: str) -> None:
        super().__init__(f"{event!r} not allowed in state {state}")
        self.state = state
        self.event = event


class NonMonotonicHistory(ProtocolError, ValueError):
    pass


# signing
class UnsupportedAlgorithm(ProtocolError, ValueError):
    pass


class ExpiredKey(ProtocolError):
    pass


# registry
class DuplicateSubscriber(ProtocolError):
    pass


class InvalidRecord(ProtocolError, ValueError):
    pass


class UnknownSubscriber(ProtocolError, KeyError):
    pass


class RootUnreachable(ProtocolError):
    pass


# gateway
class MalformedPolicy(ProtocolError, ValueError):
    pass


class NotASearch(ProtocolError):
    pass


class SenderUnverified(ProtocolError):
    pass


class EmptyInput(ProtocolError, ValueError):
    pass


# node engine
class TransportFailure(ProtocolError):
    """Every attempt failed.

    ``in_doubt`` is set when at least one attempt timed out rather than
    being refused, so the receiver may hold the message after all.
    """

    def __init__(self, endpoint: str, attempts: int, *, in_doubt: bool = False) -> None:
        super().__init__(f"{endpoint} unreachable after {attempts} attempts")
        self.endpoint = endpoint
        self.attempts = attempts
        self.in_doubt = in_doubt


class Undeliverable(ProtocolError):
    """A single delivery attempt was lost (dropped, partitioned or refused)."""

    def __init__(self, endpoint: str, *, in_doubt: bool = False) -> None:
        super().__init__(endpoint)
        self.in_doubt = in_doubt


# adaptation
class MalformedConfig(ProtocolError, ValueError):
    pass


class UnknownFieldPath(MalformedConfig):
    pass


class DomainMismatch(ProtocolError, ValueError):
    pass


# conformance / harness
class TargetUnreachable(ProtocolError):
    pass


class ScenarioConfigError(ProtocolError, ValueError):
    pass
