"""Bounded FIFO channel with push/pop accounting.

Overflow is a hard error: in the synthesized design a full window buffer
means the design deadlocks, so the simulator treats it as a bug signal
rather than applying backpressure. Inter-layer channels use can_push /
can_pop so the scheduler can block instead.
"""

from __future__ import annotations

from collections import deque


class FifoOverflow(RuntimeError):
    pass


class FifoUnderflow(RuntimeError):
    pass


class FifoChannel:
    def __init__(self, name: str, capacity: int):
        self.name = name
        self.capacity = capacity
        self._q: deque = deque()
        self.push_count = 0
        self.pop_count = 0
        self.peak = 0

    def __len__(self) -> int:
        return len(self._q)

    def can_push(self) -> bool:
        return len(self._q) < self.capacity

    def can_pop(self) -> bool:
        return bool(self._q)

    def push(self, item) -> None:
        if len(self._q) >= self.capacity:
            raise FifoOverflow(
                f"FIFO {self.name!r} overflow at capacity {self.capacity}; "
                "the design would deadlock"
            )
        self._q.append(item)
        self.push_count += 1
        self.peak = max(self.peak, len(self._q))

    def pop(self):
        if not self._q:
            raise FifoUnderflow(f"FIFO {self.name!r} popped while empty")
        self.pop_count += 1
        return self._q.popleft()
