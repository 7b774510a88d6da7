"""Deterministic discrete-event engine.

A single simulated clock in integer microseconds drives every node, channel
and timer.  Events are totally ordered by (time, insertion sequence), so two
runs with the same configuration and seed replay the exact same trace.
Externally injected commands cross into the simulation through an ordered
mailbox that is drained between events.
"""
from __future__ import annotations

import heapq
import queue
import zlib
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

# Simulated time is an integer count of microseconds since simulation start.
SimTime = int

US_PER_S = 1_000_000


def us(seconds: float) -> SimTime:
    """Convert seconds to integer microseconds (round to nearest)."""
    return int(round(seconds * US_PER_S))


def seconds(t: SimTime) -> float:
    return t / US_PER_S


class PastEventError(ValueError):
    """Raised when a handler schedules an event before the current clock."""


@dataclass(frozen=True)
class Event:
    at: SimTime
    seq: int
    target: str
    kind: str
    payload: Any = None

    def trace_line(self) -> str:
        return f"{self.at} {self.seq} {self.target} {self.kind}"


class RngStream:
    """Named random stream derived from (seed, stream_id).

    The same (seed, stream_id, draw index) always yields the same value; the
    label keeps subsystems (channel links, signal generator, trainer)
    statistically independent and insulated from each other's draw counts.
    """

    def __init__(self, seed: int, stream_id: str):
        self.seed = int(seed)
        self.stream_id = stream_id
        key = zlib.crc32(stream_id.encode("utf-8"))
        self.generator = np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(key,))
        )

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id!r})"


class Simulator:
    """Single-threaded event loop with a thread-safe command mailbox.

    Handlers run strictly in (at, seq) order and may only schedule at times
    >= the current clock.  The mailbox is drained at event boundaries; each
    drained item is handed to `mailbox_handler` stamped with the clock.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.now: SimTime = 0
        self._heap: list[tuple[SimTime, int, Event]] = []
        self._seq = 0
        self._handlers: dict[str, Callable[["Simulator", Event], None]] = {}
        self._streams: dict[str, RngStream] = {}
        self.trace: list[Event] = []
        self.mailbox: "queue.Queue[Any]" = queue.Queue()
        self.mailbox_handler: Optional[Callable[["Simulator", Any], None]] = None

    # -- randomness ---------------------------------------------------------

    def stream(self, stream_id: str) -> RngStream:
        st = self._streams.get(stream_id)
        if st is None:
            st = RngStream(self.seed, stream_id)
            self._streams[stream_id] = st
        return st

    def rng(self, stream_id: str) -> np.random.Generator:
        return self.stream(stream_id).generator

    # -- scheduling ---------------------------------------------------------

    def on(self, kind: str, handler: Callable[["Simulator", Event], None]) -> None:
        self._handlers[kind] = handler

    def schedule(self, at: SimTime, target: str, kind: str, payload: Any = None) -> Event:
        if at < self.now:
            raise PastEventError(f"past event: t={at} < now={self.now}")
        ev = Event(at=int(at), seq=self._seq, target=target, kind=kind, payload=payload)
        self._seq += 1
        heapq.heappush(self._heap, (ev.at, ev.seq, ev))
        return ev

    def schedule_in(self, delay: SimTime, target: str, kind: str, payload: Any = None) -> Event:
        return self.schedule(self.now + delay, target, kind, payload)

    # -- execution ----------------------------------------------------------

    def peek_next_time(self) -> Optional[SimTime]:
        return self._heap[0][0] if self._heap else None

    def _drain_mailbox(self) -> None:
        if self.mailbox_handler is None:
            return
        while True:
            try:
                item = self.mailbox.get_nowait()
            except queue.Empty:
                return
            self.mailbox_handler(self, item)

    def run_until(self, t_end: SimTime) -> list[Event]:
        """Process every event with at <= t_end in (at, seq) order.

        Returns the events processed by this call; the clock lands on t_end
        even when the queue empties early.
        """
        processed: list[Event] = []
        self._drain_mailbox()
        while self._heap and self._heap[0][0] <= t_end:
            _, _, ev = heapq.heappop(self._heap)
            self.now = ev.at
            handler = self._handlers.get(ev.kind)
            if handler is not None:
                handler(self, ev)
            self.trace.append(ev)
            processed.append(ev)
            self._drain_mailbox()
        self.now = max(self.now, t_end)
        return processed

    # -- trace export -------------------------------------------------------

    def export_trace(self) -> str:
        """Line-oriented log (time, seq, target, kind), one event per line."""
        return "".join(ev.trace_line() + "\n" for ev in self.trace)


def write_trace(path: str, sim: Simulator) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(sim.export_trace())
