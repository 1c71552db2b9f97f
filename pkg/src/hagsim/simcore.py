"""Deterministic event engine: microsecond clock, FIFO tie-break, named RNG streams."""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable

US_PER_MS = 1_000
US_PER_S = 1_000_000

# payload tags
DEPARTURE = "packet-departure"
ARRIVAL = "packet-arrival"
TIMER = "timer"
LINK_STATE = "link-state-change"
POLICY = "policy-delivery"
APP_STEP = "app-step"

EVENT_KINDS = frozenset({DEPARTURE, ARRIVAL, TIMER, LINK_STATE, POLICY, APP_STEP})


def ms(value: float) -> int:
    return int(round(value * US_PER_MS))


def seconds(value: float) -> int:
    return int(round(value * US_PER_S))


@dataclass(order=True)
class SimEvent:
    """Queue entry. Ordering is (fire_at, seq); the rest never participates."""

    fire_at: int
    seq: int
    id: int = field(compare=False)
    kind: str = field(compare=False, default=TIMER)
    action: Callable[[Any], Any] | None = field(compare=False, default=None)
    arg: Any = field(compare=False, default=None)


class SchedulingError(RuntimeError):
    pass


def rng_stream(seed: int, label: str) -> random.Random:
    """Independent generator per (seed, label); adding a label never shifts another stream."""
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class Simulator:
    """Single-threaded run loop.

    Heap entries are plain lists ``[fire_at, seq, action, arg, kind]`` for speed;
    cancellation blanks the action in place and the entry is skipped on pop.
    Event ids are the insertion counter, which is unique per run.
    """

    def __init__(self, seed: int = 0):
        self.now = 0
        self.seed = seed
        self._heap: list[list] = []
        self._seq = 0
        self._pending: dict[int, list] = {}
        self._stopped = False
        self.processed = 0

    def rng(self, label: str) -> random.Random:
        return rng_stream(self.seed, label)

    def schedule(self, at: int, action: Callable[[Any], Any], arg: Any = None, kind: str = TIMER) -> int:
        if at < self.now:
            raise SchedulingError(f"cannot schedule at {at} us, clock is already {self.now} us")
        seq = self._seq
        self._seq = seq + 1
        entry = [at, seq, action, arg, kind]
        heapq.heappush(self._heap, entry)
        self._pending[seq] = entry
        return seq

    def schedule_in(self, delay: int, action: Callable[[Any], Any], arg: Any = None, kind: str = TIMER) -> int:
        return self.schedule(self.now + delay, action, arg, kind)

    def cancel(self, event_id: int) -> bool:
        entry = self._pending.pop(event_id, None)
        if entry is None:
            return False
        entry[2] = None
        return True

    def pending(self, event_id: int) -> bool:
        return event_id in self._pending

    def peek(self) -> SimEvent | None:
        """Next live event, without firing it."""
        heap = self._heap
        while heap and heap[0][2] is None:
            heapq.heappop(heap)
        if not heap:
            return None
        at, seq, action, arg, kind = heap[0]
        return SimEvent(at, seq, seq, kind, action, arg)

    def stop(self) -> None:
        """Ask the loop to return after the current handler."""
        self._stopped = True

    def run_until(self, t_end: int) -> int:
        if t_end < self.now:
            raise SchedulingError(f"t_end {t_end} us is before the clock ({self.now} us)")
        heap = self._heap
        pending = self._pending
        pop = heapq.heappop
        count = 0
        self._stopped = False
        while heap:
            entry = heap[0]
            if entry[0] > t_end:
                break
            pop(heap)
            action = entry[2]
            if action is None:
                continue
            del pending[entry[1]]
            self.now = entry[0]
            action(entry[3])
            count += 1
            if self._stopped:
                break
        if not self._stopped:
            self.now = t_end
        self.processed += count
        return count

    def run(self) -> int:
        """Drain the queue (or until stop())."""
        heap = self._heap
        pending = self._pending
        pop = heapq.heappop
        count = 0
        self._stopped = False
        while heap:
            entry = pop(heap)
            action = entry[2]
            if action is None:
                continue
            del pending[entry[1]]
            self.now = entry[0]
            action(entry[3])
            count += 1
            if self._stopped:
                break
        self.processed += count
        return count
