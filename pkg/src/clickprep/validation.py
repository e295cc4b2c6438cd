"""A/A split assignment and segment comparison.

Both segments receive the same recommendation model; if the per-day rates
of the two halves differ or decorrelate, the measured CTR/BTR reflects
random clicking rather than the model's influence.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .events import EventLog, Segment, replace


class SeriesTooShort(ValueError):
    pass


class AAOutcome(str, Enum):
    CONSISTENT = "CONSISTENT"
    INCONSISTENT = "INCONSISTENT"


@dataclass(frozen=True)
class SegmentMap:
    assignments: dict[str, Segment]
    seed: int

    def segment_of(self, cust_id: str) -> Segment:
        return self.assignments[cust_id]

    def counts(self) -> dict[str, int]:
        out = {Segment.A1.value: 0, Segment.A2.value: 0}
        for seg in self.assignments.values():
            out[seg.value] += 1
        return out


def _hash64(seed: int, cust_id: str) -> int:
    digest = hashlib.blake2b(
        f"{seed}:{cust_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


def assign_segments(cust_ids, seed: int) -> SegmentMap:
    """Deterministic 50/50 split: hash-rank customers, alternate segments.

    Alternating along the hash order keeps the two halves equal in size
    (within one customer) while the membership of each half stays pseudo-
    random and independent of enumeration order.
    """
    ids = set(cust_ids)
    if not ids:
        raise ValueError("customer set is empty")
    ranked = sorted(ids, key=lambda cid: (_hash64(seed, cid), cid))
    assignments = {
        cid: (Segment.A1 if rank % 2 == 0 else Segment.A2)
        for rank, cid in enumerate(ranked)
    }
    return SegmentMap(assignments=assignments, seed=seed)


def stamp_segments(log: EventLog, segmap: SegmentMap) -> EventLog:
    """Write each customer's segment flag onto their events."""
    stamped = []
    for ev in log:
        key = ev.customer_key()
        seg = segmap.assignments.get(key) if key else None
        stamped.append(replace(ev, segment_flag=seg) if seg else ev)
    return log.with_events(stamped)


@dataclass(frozen=True)
class AAVerdict:
    daily_rates: tuple[tuple[float, float], ...]
    mean_relative_difference: float
    correlation: float | None
    verdict: AAOutcome
    diff_max: float
    corr_min: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "mean_relative_difference": self.mean_relative_difference,
            "correlation": self.correlation,
            "degenerate": self.degenerate,
            "days": len(self.daily_rates),
            "daily_rates": [{"a1": a, "a2": b} for a, b in self.daily_rates],
            "thresholds": {"diff_max": self.diff_max, "corr_min": self.corr_min},
        }


def compare_aa(
    daily_a1,
    daily_a2,
    diff_max: float = 0.10,
    corr_min: float = 0.8,
    min_days: int = 5,
) -> AAVerdict:
    """Compare the two segments' daily rate series.

    CONSISTENT requires a small mean relative difference AND a high
    day-over-day correlation over at least ``min_days`` days. When both
    series are flat the correlation is undefined and the verdict falls
    back to the difference test alone.
    """
    a1 = np.asarray(list(daily_a1), dtype=np.float64)
    a2 = np.asarray(list(daily_a2), dtype=np.float64)
    if a1.size != a2.size:
        raise SeriesTooShort(f"series lengths differ: {a1.size} vs {a2.size}")
    if a1.size < min_days:
        raise SeriesTooShort(f"need at least {min_days} days, got {a1.size}")
    if np.isnan(a1).any() or np.isnan(a2).any():
        raise SeriesTooShort("series contain absent cells")

    means = (a1 + a2) / 2.0
    diffs = np.abs(a1 - a2)
    rel = np.where(means > 0, diffs / np.where(means > 0, means, 1.0), 0.0)
    mean_rel_diff = float(rel.mean())

    degenerate = bool(np.all(a1 == a1[0]) or np.all(a2 == a2[0]))
    if degenerate:
        correlation = None
        ok = mean_rel_diff <= diff_max
    else:
        correlation = float(np.corrcoef(a1, a2)[0, 1])
        ok = mean_rel_diff <= diff_max and correlation >= corr_min

    return AAVerdict(
        daily_rates=tuple(zip(a1.tolist(), a2.tolist())),
        mean_relative_difference=mean_rel_diff,
        correlation=correlation,
        verdict=AAOutcome.CONSISTENT if ok else AAOutcome.INCONSISTENT,
        diff_max=diff_max,
        corr_min=corr_min,
        degenerate=degenerate,
    )


def daily_ctr_by_segment(report_cells) -> tuple[list[float], list[float]]:
    """Collapse metric cells into two day-ordered CTR series (A1, A2).

    Days where either segment saw no hits are dropped from both series so
    the comparison never contains absent cells.
    """
    per_day: dict[str, dict[str, list[int]]] = {}
    for (day, _page, _widget, segment), cell in report_cells.items():
        if segment not in ("A1", "A2"):
            continue
        slot = per_day.setdefault(day, {"A1": [0, 0], "A2": [0, 0]})
        slot[segment][0] += cell.hits
        slot[segment][1] += cell.clicks
    a1, a2 = [], []
    for day in sorted(per_day):
        slot = per_day[day]
        if slot["A1"][0] == 0 or slot["A2"][0] == 0:
            continue
        a1.append(slot["A1"][1] / slot["A1"][0])
        a2.append(slot["A2"][1] / slot["A2"][0])
    return a1, a2


__all__ = [
    "SegmentMap",
    "AAVerdict",
    "AAOutcome",
    "SeriesTooShort",
    "assign_segments",
    "stamp_segments",
    "compare_aa",
    "daily_ctr_by_segment",
]
