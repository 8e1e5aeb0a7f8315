"""Deterministic discrete-event engine.

Time is an integer count of microseconds since the start of the run. Events fire in
``(fire_time, seq)`` order, where ``seq`` is a monotone insertion counter, so ties are
broken by scheduling order and two runs with the same inputs fire identical sequences.
"""

from __future__ import annotations

import heapq
import logging
import zlib
from collections.abc import Callable
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)

SimTime = int
EventId = int

MS = 1_000
SECOND = 1_000_000


def ms(value: float) -> SimTime:
    """Milliseconds to integer microseconds."""
    return int(round(value * MS))


class EventKind(str, Enum):
    TIMER = "timer"
    MESSAGE = "message"
    SCAN = "scan"
    TRAFFIC = "traffic"
    MOBILITY = "mobility"


class SimulationFault(RuntimeError):
    """An event handler raised; the run is aborted. The message names the event."""


@dataclass(order=True, slots=True)
class SimEvent:
    fire_time: SimTime
    seq: int
    kind: EventKind = field(compare=False)
    target: str = field(compare=False)
    callback: Callable[..., Any] = field(compare=False, repr=False)
    args: tuple[Any, ...] = field(compare=False, default=(), repr=False)
    cancelled: bool = field(compare=False, default=False)

    def describe(self) -> str:
        return f"{self.kind.value} event for '{self.target}' at t={self.fire_time}us (seq {self.seq})"


class Engine:
    """Single-threaded event loop. One instance per simulation run; nothing is shared."""

    def __init__(self, *, record_trace: bool = False) -> None:
        self._now: SimTime = 0
        self._seq = 0
        self._queue: list[SimEvent] = []
        self._live: dict[EventId, SimEvent] = {}
        self.events_fired = 0
        self.trace: list[tuple[SimTime, int, str, str]] | None = [] if record_trace else None

    def now(self) -> SimTime:
        return self._now

    def pending(self) -> int:
        return len(self._live)

    def schedule(
        self,
        kind: EventKind,
        target: str,
        delay: SimTime,
        callback: Callable[..., Any],
        *args: Any,
    ) -> EventId:
        """Enqueue ``callback(*args)`` at ``now() + delay``. Returns a cancellable id."""
        if delay < 0:
            raise ValueError(f"negative delay {delay}us for {kind.value} event on '{target}'")
        event = SimEvent(self._now + int(delay), self._seq, kind, target, callback, args)
        self._seq += 1
        heapq.heappush(self._queue, event)
        self._live[event.seq] = event
        return event.seq

    def cancel(self, event_id: EventId | None) -> bool:
        """Cancel a pending event. False if it already fired, was cancelled, or is unknown."""
        if event_id is None:
            return False
        event = self._live.pop(event_id, None)
        if event is None:
            return False
        event.cancelled = True
        return True

    def run_until(self, t_end: SimTime) -> int:
        """Fire every event with ``fire_time <= t_end``; leaves the clock at ``t_end``.

        Events scheduled by handlers inside the window fire in the same call.
        """
        if t_end < self._now:
            raise ValueError(f"run_until({t_end}) is before now ({self._now})")
        fired = 0
        queue = self._queue
        while queue and queue[0].fire_time <= t_end:
            event = heapq.heappop(queue)
            if event.cancelled:
                continue
            del self._live[event.seq]
            self._now = event.fire_time
            if self.trace is not None:
                self.trace.append((event.fire_time, event.seq, event.kind.value, event.target))
            try:
                event.callback(*event.args)
            except SimulationFault:
                raise
            except Exception as e:
                raise SimulationFault(
                    f"handler failed on {event.describe()}: {type(e).__name__}: {e}"
                ) from e
            fired += 1
        self._now = t_end
        self.events_fired += fired
        return fired


def _stable_id(name: str) -> int:
    # hash() is salted per process; crc32 keeps sub-stream keys stable across runs.
    return zlib.crc32(name.encode("utf-8"))


class RandomStreams:
    """Named, independent random sub-streams derived from one 64-bit seed.

    Each ``(name, key)`` pair gets its own generator, so the number of draws taken from
    one process (say control-message loss) never shifts the values seen by another.
    """

    CONTROL_LOSS = "control-loss"
    DATA_LOSS = "data-loss"
    SHADOWING = "shadowing"

    def __init__(self, seed: int) -> None:
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = seed
        self._streams: dict[tuple[str, str | None], np.random.Generator] = {}

    def stream(self, name: str, key: str | None = None) -> np.random.Generator:
        ident = (name, key)
        gen = self._streams.get(ident)
        if gen is None:
            spawn_key = (_stable_id(name),) if key is None else (_stable_id(name), _stable_id(key))
            gen = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=spawn_key))
            self._streams[ident] = gen
        return gen
