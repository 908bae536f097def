"""From occupancy traces to bank activity.

A memory of capacity C split into B equal banks, each usable up to a
headroom fraction alpha, needs ``ceil(o / (alpha * C / B))`` banks powered to
hold ``o`` needed bytes. Occupied data is assumed packed from bank 0 upward,
so the highest-indexed banks are the ones that go idle first.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from math import ceil

from sramgate.errors import ValidationError
from sramgate.memory import OccupancyTrace

TIMELINE_COLUMNS = ("t_start_ns", "duration_ns", "active_banks")


@dataclass(frozen=True)
class BankingParams:
    capacity: int
    banks: int
    alpha: float = 0.9

    def __post_init__(self) -> None:
        if self.capacity <= 0:
            raise ValidationError(f"capacity must be positive, got {self.capacity}")
        if self.banks <= 0:
            raise ValidationError(f"bank count must be positive, got {self.banks}")
        if self.capacity % self.banks:
            raise ValidationError(
                f"capacity {self.capacity} B is not divisible into {self.banks} equal banks"
            )
        if not 0 < self.alpha <= 1:
            raise ValidationError(f"headroom alpha must be in (0, 1], got {self.alpha}")

    @property
    def bank_bytes(self) -> int:
        return self.capacity // self.banks

    @property
    def usable_per_bank(self) -> Fraction:
        # alpha is read as the decimal it was written as (0.6 is 3/5), and the
        # product is exact so the ceiling never flips on float rounding
        return Fraction(repr(self.alpha)) * self.bank_bytes

    def active_banks(self, occupancy: int) -> int:
        if occupancy <= 0:
            return 0
        return min(self.banks, ceil(Fraction(occupancy) / self.usable_per_bank))


@dataclass(frozen=True)
class TimelineSegment:
    t_start: int
    duration: int
    active: int

    @property
    def t_end(self) -> int:
        return self.t_start + self.duration


@dataclass
class BankActivityTimeline:
    """Piecewise-constant count of banks that must stay on.

    Also used for the post-gating on-count, which is never below the
    required count.
    """

    params: BankingParams
    segments: list[TimelineSegment] = field(default_factory=list)

    @property
    def t_start(self) -> int:
        return self.segments[0].t_start if self.segments else 0

    @property
    def t_end(self) -> int:
        return self.segments[-1].t_end if self.segments else 0

    @property
    def duration(self) -> int:
        return self.t_end - self.t_start

    def validate(self) -> None:
        for prev, seg in zip(self.segments, self.segments[1:]):
            if seg.t_start != prev.t_end:
                raise ValidationError(f"timeline segments not contiguous at t={seg.t_start}")
        for seg in self.segments:
            if seg.duration <= 0:
                raise ValidationError(f"timeline segment at t={seg.t_start} has non-positive duration")
            if not 0 <= seg.active <= self.params.banks:
                raise ValidationError(
                    f"timeline segment at t={seg.t_start} has {seg.active} active of {self.params.banks} banks"
                )

    def at(self, t: int) -> int:
        for seg in self.segments:
            if seg.t_start <= t < seg.t_end:
                return seg.active
        raise ValidationError(f"time {t} outside timeline")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TIMELINE_COLUMNS)
        for s in self.segments:
            w.writerow((s.t_start, s.duration, s.active))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, params: BankingParams) -> BankActivityTimeline:
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != TIMELINE_COLUMNS:
            raise ValidationError(f"timeline header must be {','.join(TIMELINE_COLUMNS)}")
        segments = []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            try:
                t, dur, act = (int(x) for x in row)
            except ValueError:
                raise ValidationError(f"timeline line {lineno}: expected 3 integers, got {row!r}") from None
            segments.append(TimelineSegment(t, dur, act))
        timeline = cls(params, segments)
        timeline.validate()
        return timeline


@dataclass(frozen=True)
class IdleInterval:
    bank: int
    t_start: int
    duration: int

    @property
    def t_end(self) -> int:
        return self.t_start + self.duration


def merge_segments(segments: list[TimelineSegment]) -> list[TimelineSegment]:
    out: list[TimelineSegment] = []
    for seg in segments:
        if out and out[-1].active == seg.active and out[-1].t_end == seg.t_start:
            last = out.pop()
            seg = TimelineSegment(last.t_start, last.duration + seg.duration, seg.active)
        out.append(seg)
    return out


def bank_activity(trace: OccupancyTrace, params: BankingParams) -> BankActivityTimeline:
    """Banks required over time for the needed bytes of ``trace``."""
    segments = [
        TimelineSegment(s.t_start, s.duration, params.active_banks(s.needed)) for s in trace.segments
    ]
    return BankActivityTimeline(params, merge_segments(segments))


def idle_intervals(timeline: BankActivityTimeline) -> list[IdleInterval]:
    """Maximal idle stretches per bank; bank j is idle wherever at most j banks are needed.

    Sorted by (bank, start).
    """
    out: list[IdleInterval] = []
    for bank in range(timeline.params.banks):
        start: int | None = None
        end = 0
        for seg in timeline.segments:
            if seg.active <= bank:
                if start is None or seg.t_start != end:
                    if start is not None:
                        out.append(IdleInterval(bank, start, end - start))
                    start = seg.t_start
                end = seg.t_end
            elif start is not None:
                out.append(IdleInterval(bank, start, end - start))
                start = None
        if start is not None:
            out.append(IdleInterval(bank, start, end - start))
    return out


def peak(trace: OccupancyTrace) -> int:
    """Largest needed-byte occupancy over the trace."""
    if not trace.segments:
        raise ValidationError("cannot take the peak of an empty trace")
    return max(s.needed for s in trace.segments)


def peak_total(trace: OccupancyTrace) -> int:
    """Largest resident occupancy, needed plus obsolete."""
    if not trace.segments:
        raise ValidationError("cannot take the peak of an empty trace")
    return max(s.needed + s.obsolete for s in trace.segments)
