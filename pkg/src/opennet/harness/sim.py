"""Discrete-event simulator over virtual time.

Every actor (node or gateway) owns an :class:`ActorClock`. Events are
ordered by ``(time, seq)`` so equal seeds replay identically. Inside an
event the actor's clock follows its own sends, so waiting for an ack or
backing off before a retry moves later timestamps forward. That waiting
does not occupy the actor: once the event returns, the actor is busy only
for the clock readings it took, as a node with concurrent outbound
connections would be.
"""

from __future__ import annotations

import heapq
from datetime import datetime, timedelta
from typing import Any, Callable, Optional

from opennet.errors import Undeliverable
from opennet.harness.transport import SimulatedNetwork, US
from opennet.node import Ack


class ActorClock:
    def __init__(self, start: datetime) -> None:
        self.start = start
        self.cursor = 0  # microseconds since start
        self.readings = 0

    def now(self) -> datetime:
        self.cursor += 1
        self.readings += 1
        return self.start + timedelta(microseconds=self.cursor)

    def sleep(self, seconds: float) -> None:
        self.cursor += int(round(seconds * 1_000_000))

    def at_least(self, t_us: int) -> None:
        if t_us > self.cursor:
            self.cursor = t_us


class Simulator:
    def __init__(self, network: SimulatedNetwork, start: datetime) -> None:
        self.network = network
        self.start = start
        self.now_us = 0
        self._queue: list[tuple[int, int, Optional[str], Callable, tuple]] = []
        self._seq = 0
        self.actors: dict[str, Any] = {}
        self.by_endpoint: dict[str, Any] = {}
        self.clocks: dict[str, ActorClock] = {}
        self.transport = SimTransport(self)
        self.processed = 0

    def add(self, actor: Any) -> ActorClock:
        clock = ActorClock(self.start)
        actor.clock = clock
        self.actors[actor.subscriber_id] = actor
        self.by_endpoint[actor.endpoint] = actor
        self.clocks[actor.subscriber_id] = clock
        return clock

    def remove(self, subscriber_id: str) -> None:
        actor = self.actors.pop(subscriber_id)
        self.by_endpoint.pop(actor.endpoint, None)

    def to_time(self, t_us: int) -> datetime:
        return self.start + timedelta(microseconds=t_us)

    def schedule(self, at_us: int, actor_id: Optional[str], fn: Callable, *args: Any) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (int(at_us), self._seq, actor_id, fn, args))

    def run(self, until_us: Optional[int] = None) -> None:
        while self._queue:
            at, _, actor_id, fn, args = self._queue[0]
            if until_us is not None and at > until_us:
                break
            heapq.heappop(self._queue)
            self.now_us = max(self.now_us, at)
            clock = None
            if actor_id is not None:
                clock = self.clocks.get(actor_id)
                if clock is None:
                    continue  # actor left the simulation
                clock.at_least(at)
                begin, readings = clock.cursor, clock.readings
            fn(*args)
            if clock is not None:
                clock.cursor = begin + (clock.readings - readings)
            self.processed += 1

    def busy_until(self, actor_id: str) -> int:
        return self.clocks[actor_id].cursor


class SimTransport:
    """Request/ack legs over the simulated network.

    The receipt verdict is taken when the request arrives and the stateful
    processing is queued on the receiver at that moment. A lost request
    leg or a lost ack leg both look like a timeout to the sender, which is
    then kept busy for ``ack_timeout_ms``; a lost ack therefore leads to a
    retry of a message the receiver already has. Only an unknown endpoint
    is a definite refusal.
    """

    def __init__(self, sim: Simulator) -> None:
        self.sim = sim
        self.attempts = 0

    def request(self, sender: str, endpoint: str, data: bytes) -> Ack:
        sim = self.sim
        self.attempts += 1
        clock = sim.clocks[sender]
        t0 = clock.cursor
        timeout = int(sim.network.config.ack_timeout_ms * US)
        receiver = sim.by_endpoint.get(endpoint)
        if receiver is None:
            clock.at_least(t0 + timeout)
            raise Undeliverable(endpoint)
        leg = sim.network.deliver(sender, receiver.subscriber_id, data, t0)
        if not leg.delivered:
            clock.at_least(t0 + timeout)
            raise Undeliverable(endpoint, in_doubt=True)
        at = leg.at
        ack, env = receiver.accept(data, now=sim.to_time(at))
        receiver.log("in", env.context if env else None, str(ack), at=sim.to_time(at), peer=sender)
        if ack.ok and env is not None:
            sim.schedule(at, receiver.subscriber_id, receiver.process, env)
        back = sim.network.deliver(receiver.subscriber_id, sender, ack.encode(), at)
        if not back.delivered:
            clock.at_least(t0 + timeout)
            raise Undeliverable(endpoint, in_doubt=True)
        clock.at_least(back.at)
        return ack
