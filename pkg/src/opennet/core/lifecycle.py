"""Per-transaction order lifecycle state machine."""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from typing import Optional

from opennet.core.actions import CORE_ACTIONS, ActionRegistry
from opennet.errors import IllegalTransition, NonMonotonicHistory, UnknownAction

FULFILLMENT_COMPLETE = "complete"


class State(str, Enum):
    START = "START"
    DISCOVERING = "DISCOVERING"
    OFFERS_RECEIVED = "OFFERS_RECEIVED"
    SELECTING = "SELECTING"
    QUOTED = "QUOTED"
    INITIALIZING = "INITIALIZING"
    TERMS_OFFERED = "TERMS_OFFERED"
    CONFIRMING = "CONFIRMING"
    ACTIVE = "ACTIVE"
    CANCELLING = "CANCELLING"
    CANCELLED = "CANCELLED"
    COMPLETED = "COMPLETED"

    def __str__(self) -> str:
        return self.value


TERMINAL = frozenset({State.CANCELLED, State.COMPLETED})

S = State
_LOOP_ACTIVE = ("update", "on_update", "status", "on_status", "track", "on_track")
_LOOP_COMPLETED = ("status", "on_status", "track", "on_track", "rating", "on_rating", "support", "on_support")

TRANSITIONS: dict[tuple[State, str], State] = {
    (S.START, "search"): S.DISCOVERING,
    (S.DISCOVERING, "on_search"): S.OFFERS_RECEIVED,
    # further providers replying to the same search
    (S.OFFERS_RECEIVED, "on_search"): S.OFFERS_RECEIVED,
    (S.OFFERS_RECEIVED, "select"): S.SELECTING,
    (S.SELECTING, "on_select"): S.QUOTED,
    (S.QUOTED, "init"): S.INITIALIZING,
    (S.INITIALIZING, "on_init"): S.TERMS_OFFERED,
    (S.TERMS_OFFERED, "confirm"): S.CONFIRMING,
    (S.CONFIRMING, "on_confirm"): S.ACTIVE,
    **{(S.ACTIVE, e): S.ACTIVE for e in _LOOP_ACTIVE},
    (S.QUOTED, "cancel"): S.CANCELLING,
    (S.TERMS_OFFERED, "cancel"): S.CANCELLING,
    (S.ACTIVE, "cancel"): S.CANCELLING,
    (S.CANCELLING, "on_cancel"): S.CANCELLED,
    **{(S.COMPLETED, e): S.COMPLETED for e in _LOOP_COMPLETED},
}

# extension actions (e.g. grievance handling) loop in these states
EXTENSION_STATES = frozenset({S.ACTIVE, S.COMPLETED, S.CANCELLED})


@dataclass(frozen=True)
class OrderLifecycle:
    transaction_id: str
    state: State = State.START
    history: tuple[tuple[str, datetime], ...] = ()
    form_link: Optional[str] = None

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL

    def events(self) -> list[str]:
        return [event for event, _ in self.history]


def next_state(
    state: State,
    event: str,
    *,
    fulfillment_state: str | None = None,
    actions: ActionRegistry = CORE_ACTIONS,
) -> State:
    if event not in actions:
        raise UnknownAction(event)
    if not actions.is_core(event):
        if state in EXTENSION_STATES:
            return state
        raise IllegalTransition(state.value, event)
    try:
        target = TRANSITIONS[(state, event)]
    except KeyError:
        raise IllegalTransition(state.value, event) from None
    if event == "on_status" and fulfillment_state == FULFILLMENT_COMPLETE:
        return State.COMPLETED
    return target


def order_transition(
    lc: OrderLifecycle,
    event: str,
    at: datetime,
    *,
    fulfillment_state: str | None = None,
    form_link: str | None = None,
    actions: ActionRegistry = CORE_ACTIONS,
) -> OrderLifecycle:
    """Apply one event; the input lifecycle is never modified."""
    state = next_state(lc.state, event, fulfillment_state=fulfillment_state, actions=actions)
    if lc.history and at <= lc.history[-1][1]:
        raise NonMonotonicHistory(f"{event} at {at} is not after {lc.history[-1][1]}")
    link = lc.form_link
    if event == "on_init" and form_link:
        link = form_link
    return replace(lc, state=state, history=lc.history + ((event, at),), form_link=link)


def allowed_events(state: State, actions: ActionRegistry = CORE_ACTIONS) -> list[str]:
    out = [e for (s, e) in TRANSITIONS if s is state]
    if state in EXTENSION_STATES:
        for a in actions.extension_actions:
            out += [a, actions.pair_callback(a)]
    return out


CANONICAL_PATH = (
    "search",
    "on_search",
    "select",
    "on_select",
    "init",
    "on_init",
    "confirm",
    "on_confirm",
    "status",
    "on_status",
)
