"""Per-memory residency bookkeeping and occupancy traces.

Every resident tensor is either *needed* (some future op still reads it) or
*obsolete*. Space is reclaimed by evicting obsolete entries first, in LRU
order; only when none are left are needed entries written back to the
parent memory, and those write-backs are what the sizing loop drives to zero.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator

from sramgate.errors import CapacityError, SramgateError, ValidationError

TRACE_COLUMNS = ("t_start_ns", "duration_ns", "needed_bytes", "obsolete_bytes", "capacity_bytes")


class Status(str, Enum):
    NEEDED = "needed"
    OBSOLETE = "obsolete"


@dataclass
class Entry:
    size: int
    status: Status
    last_use: int


@dataclass
class AccessStats:
    reads: int = 0
    writes: int = 0
    read_bytes: int = 0
    write_bytes: int = 0

    def to_dict(self) -> dict[str, int]:
        return {
            "reads": self.reads,
            "writes": self.writes,
            "read_bytes": self.read_bytes,
            "write_bytes": self.write_bytes,
        }


@dataclass(frozen=True)
class Segment:
    t_start: int
    duration: int
    needed: int
    obsolete: int

    @property
    def t_end(self) -> int:
        return self.t_start + self.duration


@dataclass
class OccupancyTrace:
    capacity: int
    segments: list[Segment] = field(default_factory=list)

    @property
    def duration(self) -> int:
        return self.segments[-1].t_end - self.segments[0].t_start if self.segments else 0

    def validate(self) -> None:
        for prev, seg in zip(self.segments, self.segments[1:]):
            if seg.t_start != prev.t_end:
                raise ValidationError(f"trace segments not contiguous at t={seg.t_start}")
        for seg in self.segments:
            if seg.duration <= 0:
                raise ValidationError(f"trace segment at t={seg.t_start} has non-positive duration")
            if seg.needed < 0 or seg.obsolete < 0:
                raise ValidationError(f"trace segment at t={seg.t_start} has negative occupancy")
            if seg.needed + seg.obsolete > self.capacity:
                raise ValidationError(f"trace segment at t={seg.t_start} exceeds capacity")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for s in self.segments:
            w.writerow((s.t_start, s.duration, s.needed, s.obsolete, self.capacity))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> OccupancyTrace:
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != TRACE_COLUMNS:
            raise ValidationError(f"trace header must be {','.join(TRACE_COLUMNS)}")
        segments = []
        capacity = None
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            try:
                t, dur, need, obs, cap = (int(x) for x in row)
            except ValueError:
                raise ValidationError(f"trace line {lineno}: expected 5 integers, got {row!r}") from None
            if capacity is None:
                capacity = cap
            elif cap != capacity:
                raise ValidationError(f"trace line {lineno}: capacity changes mid-trace")
            segments.append(Segment(t, dur, need, obs))
        if capacity is None:
            raise ValidationError("trace has no segments")
        trace = cls(capacity, segments)
        trace.validate()
        return trace


class ResidencyState:
    """Residency of one memory: entries, byte tallies, pins, stats and trace."""

    def __init__(self, mem_id: str, capacity: int) -> None:
        self.mem_id = mem_id
        self.capacity = capacity
        self.entries: dict[int, Entry] = {}
        self.needed_bytes = 0
        self.obsolete_bytes = 0
        self.stats = AccessStats()
        self.capacity_writebacks = 0
        self.peak_needed = 0
        self.peak_total = 0
        self._pins: dict[int, int] = {}
        self._segments: list[Segment] = []
        self._open_start: int | None = None
        self._open_value: tuple[int, int] = (0, 0)

    # -- queries -----------------------------------------------------------

    @property
    def used(self) -> int:
        return self.needed_bytes + self.obsolete_bytes

    @property
    def free(self) -> int:
        return self.capacity - self.used

    def resident(self, tensor_id: int) -> bool:
        return tensor_id in self.entries

    def is_pinned(self, tensor_id: int) -> bool:
        return self._pins.get(tensor_id, 0) > 0

    def reclaimable(self) -> int:
        """Bytes that could be freed right now without touching pinned entries."""
        return self.free + sum(
            e.size for tid, e in self.entries.items() if not self.is_pinned(tid)
        )

    # -- pins --------------------------------------------------------------

    def pin(self, tensor_id: int) -> None:
        self._pins[tensor_id] = self._pins.get(tensor_id, 0) + 1

    def unpin(self, tensor_id: int) -> None:
        n = self._pins.get(tensor_id, 0) - 1
        if n <= 0:
            self._pins.pop(tensor_id, None)
        else:
            self._pins[tensor_id] = n

    # -- mutations ---------------------------------------------------------

    def victim_order(self) -> Iterator[int]:
        """Eviction candidates: obsolete before needed, then LRU, then tensor id."""
        cands = [
            (e.status is Status.NEEDED, e.last_use, tid)
            for tid, e in self.entries.items()
            if not self.is_pinned(tid)
        ]
        for _, _, tid in sorted(cands):
            yield tid

    def allocate(self, tensor_id: int, size: int, now: int) -> AllocationResult:
        """Make ``tensor_id`` resident as needed, evicting as required.

        Raises :class:`CapacityError` if the tensor cannot fit even in an
        empty memory, and :class:`InsufficientSpace` if pinned entries block it.
        """
        if size > self.capacity:
            raise CapacityError(
                f"tensor exceeds memory capacity: {size} B tensor {tensor_id} vs "
                f"{self.capacity} B memory {self.mem_id}"
            )
        if tensor_id in self.entries:
            self.touch(tensor_id, now, is_write=False, accesses=0)
            return AllocationResult()
        result = AllocationResult()
        if size > self.free:
            if size > self.reclaimable():
                raise InsufficientSpace(f"memory {self.mem_id}: {size} B requested, pinned data blocks it")
            for victim in list(self.victim_order()):
                if size <= self.free:
                    break
                entry = self.entries[victim]
                if entry.status is Status.OBSOLETE:
                    result.evicted.append(victim)
                else:
                    result.written_back.append((victim, entry.size))
                    self.capacity_writebacks += 1
                self._remove(victim)
        self.entries[tensor_id] = Entry(size, Status.NEEDED, now)
        self.needed_bytes += size
        self._update_peaks()
        return result

    def insert(self, tensor_id: int, size: int, status: Status, now: int) -> None:
        """Place an entry directly (preloading); the caller guarantees space."""
        if size > self.free:
            raise CapacityError(f"cannot preload {size} B into memory {self.mem_id}")
        self.entries[tensor_id] = Entry(size, status, now)
        if status is Status.NEEDED:
            self.needed_bytes += size
        else:
            self.obsolete_bytes += size
        self._update_peaks()

    def mark_obsolete(self, tensor_id: int, now: int) -> None:
        entry = self.entries.get(tensor_id)
        if entry is None or entry.status is Status.OBSOLETE:
            return
        entry.status = Status.OBSOLETE
        self.needed_bytes -= entry.size
        self.obsolete_bytes += entry.size

    def touch(self, tensor_id: int, now: int, is_write: bool, accesses: int = 1, nbytes: int = 0) -> None:
        entry = self.entries.get(tensor_id)
        if entry is None:
            raise SramgateError(f"tensor {tensor_id} is not resident in {self.mem_id}")
        entry.last_use = now
        if is_write:
            self.stats.writes += accesses
            self.stats.write_bytes += nbytes
        else:
            self.stats.reads += accesses
            self.stats.read_bytes += nbytes

    def rename(self, old_ids: Iterable[int], new_id: int, now: int) -> None:
        """Hand the storage of ``old_ids`` over to ``new_id`` (in-place ops)."""
        size = 0
        for tid in old_ids:
            size += self.entries[tid].size
            self._remove(tid)
        self.entries[new_id] = Entry(size, Status.NEEDED, now)
        self.needed_bytes += size
        self._update_peaks()

    def drop(self, tensor_id: int) -> None:
        if tensor_id in self.entries:
            self._remove(tensor_id)

    def _remove(self, tensor_id: int) -> None:
        entry = self.entries.pop(tensor_id)
        if entry.status is Status.NEEDED:
            self.needed_bytes -= entry.size
        else:
            self.obsolete_bytes -= entry.size
        self._pins.pop(tensor_id, None)

    def _update_peaks(self) -> None:
        self.peak_needed = max(self.peak_needed, self.needed_bytes)
        self.peak_total = max(self.peak_total, self.used)

    # -- trace -------------------------------------------------------------

    def record(self, now: int) -> None:
        """Close the open segment at ``now`` and open one with the current tallies."""
        value = (self.needed_bytes, self.obsolete_bytes)
        if self._open_start is None:
            self._open_start, self._open_value = now, value
            return
        if now < self._open_start:
            raise SramgateError(f"trace time regression in {self.mem_id}: {now} < {self._open_start}")
        if value == self._open_value:
            return
        if now > self._open_start:
            self._segments.append(Segment(self._open_start, now - self._open_start, *self._open_value))
            self._open_start = now
        self._open_value = value
        # a same-instant change may land back on the previous segment's value
        if self._segments and now == self._open_start and self._segments[-1].t_end == now:
            last = self._segments[-1]
            if (last.needed, last.obsolete) == value:
                self._segments.pop()
                self._open_start = last.t_start

    def trace(self, end: int | None = None) -> OccupancyTrace:
        """Trace up to ``end`` (defaults to the open segment start, i.e. closed segments only)."""
        segments = list(self._segments)
        if self._open_start is not None and end is not None and end > self._open_start:
            segments.append(Segment(self._open_start, end - self._open_start, *self._open_value))
        return OccupancyTrace(self.capacity, segments)


@dataclass
class AllocationResult:
    evicted: list[int] = field(default_factory=list)
    written_back: list[tuple[int, int]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.evicted and not self.written_back


class InsufficientSpace(SramgateError):
    """Allocation is blocked by pinned entries; the caller should retry later."""
