"""Time-window attribution of interactions to hits and rate computation.

An interaction counts toward a metric only when the product was
recommended to that customer recently enough: clicks within 5 minutes of
the showing hit, add-to-carts within 30 minutes, buys within 24 hours.
PLP hits pass through a gate (first page, top-N slots) before counting on
either side of the ratio.
"""

from __future__ import annotations

import csv
import io
from bisect import bisect_right
from dataclasses import dataclass, field
from statistics import median as stat_median

from .events import Event, EventLog, EventType, PageType

DEFAULT_CLICK_WINDOW_MS = 5 * 60 * 1000
DEFAULT_ATC_WINDOW_MS = 30 * 60 * 1000
DEFAULT_BUY_WINDOW_MS = 24 * 60 * 60 * 1000


class MissingPrice(ValueError):
    pass


class CurrencyMismatch(ValueError):
    """Attributed buys carry mixed currencies; normalize before summing."""


@dataclass(frozen=True)
class AttributionWindows:
    click_ms: int = DEFAULT_CLICK_WINDOW_MS
    atc_ms: int = DEFAULT_ATC_WINDOW_MS
    buy_ms: int = DEFAULT_BUY_WINDOW_MS

    def __post_init__(self):
        if not 0 < self.click_ms <= self.atc_ms <= self.buy_ms:
            raise ValueError("windows must satisfy 0 < click <= atc <= buy")

    def window_for(self, event_type: EventType) -> int:
        if event_type == EventType.CLICK:
            return self.click_ms
        if event_type == EventType.ATC:
            return self.atc_ms
        if event_type == EventType.BUY:
            return self.buy_ms
        raise ValueError(f"no attribution window for {event_type}")


@dataclass(frozen=True)
class PlpGate:
    top_n: int = 8
    first_page_only: bool = True

    def __post_init__(self):
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")


#: breakdown cell: (day, page_type, widget_id, segment)
CellKey = tuple[str, str, str | None, str | None]


def _cell_of(hit: Event) -> CellKey:
    return (
        hit.day(),
        hit.page_type.value,
        hit.widget_id,
        hit.segment_flag.value if hit.segment_flag else None,
    )


@dataclass(frozen=True)
class AttributedPair:
    interaction_id: str
    hit_id: str
    lag_ms: int
    interaction_type: EventType
    revenue: float | None = None  # quantity * unit price, BUY pairs only
    currency: str | None = None


@dataclass
class AttributionSet:
    pairs: list[AttributedPair]
    eligible_hit_ids: list[str]
    hit_cells: dict[str, CellKey]
    eligible_hits_by_cell: dict[CellKey, int]
    excluded: dict[str, int]
    windows: AttributionWindows
    gate: PlpGate

    def attributed_count(self, event_type: EventType) -> int:
        return sum(1 for p in self.pairs if p.interaction_type == event_type)


def _hit_passes_gate(hit: Event, gate: PlpGate) -> bool:
    if hit.page_type != PageType.PLP:
        return True
    if gate.first_page_only and hit.page_number != 1:
        return False
    return any(slot < gate.top_n for _, slot in hit.recommended_products)


def _attributable_products(hit: Event, gate: PlpGate):
    if hit.page_type == PageType.PLP:
        return [p for p, slot in hit.recommended_products if slot < gate.top_n]
    return [p for p, _ in hit.recommended_products]


def attribute(
    log: EventLog,
    windows: AttributionWindows | None = None,
    gate: PlpGate | None = None,
) -> AttributionSet:
    """Match each interaction to the most recent qualifying hit.

    Qualifying: same customer, product present in the hit (within the PLP
    gate), and interaction time inside ``[t_hit, t_hit + window]``; the
    boundary is inclusive. Ties between equal-timestamp hits break on
    event_id, so results do not depend on input order. Clicks marked as
    excluded-from-metrics are skipped and tallied instead.
    """
    windows = windows or AttributionWindows()
    gate = gate or PlpGate()

    # (customer, product) -> sorted [(t_hit, hit_event_id)] plus a parallel
    # timestamp list for bisection
    shown: dict[tuple[str, str], list[tuple[int, str]]] = {}
    shown_ts: dict[tuple[str, str], list[int]] = {}
    eligible_hit_ids: list[str] = []
    hit_cells: dict[str, CellKey] = {}
    cells: dict[CellKey, int] = {}

    for ev in log:
        if ev.event_type != EventType.HIT:
            continue
        if not _hit_passes_gate(ev, gate):
            continue
        key = ev.customer_key()
        if key is None:
            continue
        eligible_hit_ids.append(ev.event_id)
        cell = _cell_of(ev)
        hit_cells[ev.event_id] = cell
        cells[cell] = cells.get(cell, 0) + 1
        for product in _attributable_products(ev, gate):
            shown.setdefault((key, product), []).append((ev.timestamp_utc, ev.event_id))

    for key, entries in shown.items():
        entries.sort()  # (timestamp, event_id): deterministic under input permutation
        shown_ts[key] = [ts for ts, _ in entries]

    pairs: list[AttributedPair] = []
    excluded: dict[str, int] = {}

    def _count(reason: str) -> None:
        excluded[reason] = excluded.get(reason, 0) + 1

    for ev in log:
        if ev.event_type not in (EventType.CLICK, EventType.ATC, EventType.BUY):
            continue
        if ev.event_id in log.excluded_metric_clicks:
            _count("new_customer_click")
            continue
        key = ev.customer_key()
        entries = shown.get((key, ev.product_id)) if key else None
        if not entries:
            _count("never_recommended")
            continue
        # rightmost hit with t_hit <= t: smallest lag among qualifying hits,
        # ties resolved toward the largest event_id by the sort order
        pos = bisect_right(shown_ts[(key, ev.product_id)], ev.timestamp_utc) - 1
        if pos < 0:
            _count("outside_window")
            continue
        t_hit, hit_id = entries[pos]
        lag = ev.timestamp_utc - t_hit
        if lag > windows.window_for(ev.event_type):
            _count("outside_window")
            continue
        revenue = currency = None
        if ev.event_type == EventType.BUY and ev.unit_price is not None:
            revenue = ev.quantity * ev.unit_price.amount
            currency = ev.unit_price.currency
        pairs.append(
            AttributedPair(
                interaction_id=ev.event_id,
                hit_id=hit_id,
                lag_ms=lag,
                interaction_type=ev.event_type,
                revenue=revenue,
                currency=currency,
            )
        )

    return AttributionSet(
        pairs=pairs,
        eligible_hit_ids=eligible_hit_ids,
        hit_cells=hit_cells,
        eligible_hits_by_cell=cells,
        excluded=excluded,
        windows=windows,
        gate=gate,
    )


@dataclass
class MetricsCell:
    hits: int = 0
    clicks: int = 0
    atcs: int = 0
    buys: int = 0
    revenue: float = 0.0

    @property
    def ctr(self) -> float | None:
        return self.clicks / self.hits if self.hits else None

    @property
    def atc_tr(self) -> float | None:
        return self.atcs / self.hits if self.hits else None

    @property
    def btr(self) -> float | None:
        return self.buys / self.hits if self.hits else None

    def to_dict(self) -> dict:
        return {
            "hits": self.hits,
            "clicks": self.clicks,
            "atcs": self.atcs,
            "buys": self.buys,
            "ctr": self.ctr,
            "atc_tr": self.atc_tr,
            "btr": self.btr,
            "revenue": round(self.revenue, 6),
        }


@dataclass
class MetricsReport:
    cells: dict[CellKey, MetricsCell]
    totals: MetricsCell
    low_visibility: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "totals": self.totals.to_dict(),
            "cells": [
                {
                    "day": key[0],
                    "page_type": key[1],
                    "widget_id": key[2],
                    "segment": key[3],
                    **cell.to_dict(),
                }
                for key, cell in sorted(
                    self.cells.items(), key=lambda kv: tuple(str(x) for x in kv[0])
                )
            ],
            "low_visibility": self.low_visibility,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["day", "page_type", "widget_id", "segment",
             "hits", "clicks", "atcs", "buys", "ctr", "atc_tr", "btr", "revenue"]
        )
        for key, cell in sorted(self.cells.items(), key=lambda kv: tuple(str(x) for x in kv[0])):
            writer.writerow(
                [key[0], key[1], key[2] or "", key[3] or "",
                 cell.hits, cell.clicks, cell.atcs, cell.buys,
                 _fmt(cell.ctr), _fmt(cell.atc_tr), _fmt(cell.btr), f"{cell.revenue:.2f}"]
            )
        return buf.getvalue()


def _fmt(rate: float | None) -> str:
    return "" if rate is None else f"{rate:.6f}"


def rates(attr: AttributionSet) -> MetricsReport:
    """Roll the attribution up into per-cell CTR / ATC-TR / BTR / revenue.

    Interactions land in the cell of the hit they were attributed to, so
    numerator and denominator always describe the same impressions. Cells
    with zero hits report absent (None) rates, never zero.
    """
    cells: dict[CellKey, MetricsCell] = {
        key: MetricsCell(hits=count) for key, count in attr.eligible_hits_by_cell.items()
    }
    totals = MetricsCell(hits=len(attr.eligible_hit_ids))
    for pair in attr.pairs:
        cell = cells[attr.hit_cells[pair.hit_id]]
        if pair.interaction_type == EventType.CLICK:
            cell.clicks += 1
            totals.clicks += 1
        elif pair.interaction_type == EventType.ATC:
            cell.atcs += 1
            totals.atcs += 1
        else:
            cell.buys += 1
            totals.buys += 1
            if pair.revenue is not None:
                cell.revenue += pair.revenue
                totals.revenue += pair.revenue
    return MetricsReport(cells=cells, totals=totals)


def conversion_revenue(attr: AttributionSet, log: EventLog) -> float:
    """Sum quantity * unit price over attributed buys, in one currency.

    Raises :class:`MissingPrice` when an attributed buy has no price and
    :class:`CurrencyMismatch` when prices were never normalized.
    """
    total = 0.0
    currency: str | None = None
    for pair in attr.pairs:
        if pair.interaction_type != EventType.BUY:
            continue
        ev = log.get(pair.interaction_id)
        if ev is None or ev.unit_price is None:
            raise MissingPrice(f"attributed buy {pair.interaction_id} has no price")
        if currency is None:
            currency = ev.unit_price.currency
        elif ev.unit_price.currency != currency:
            raise CurrencyMismatch(
                f"attributed buys in both {currency} and {ev.unit_price.currency}"
            )
        total += ev.quantity * ev.unit_price.amount
    return total


def flag_low_visibility(
    report: MetricsReport, fraction: float = 0.25
) -> list[tuple[str, str | None, float, float]]:
    """Flag (page_type, widget) groups whose CTR sits far below the site median.

    Diagnostic only: low CTR on one widget regardless of relevance usually
    means the widget is not visible without scrolling, not that the
    recommendations are bad.
    """
    groups: dict[tuple[str, str | None], MetricsCell] = {}
    for (_, page_type, widget, _), cell in report.cells.items():
        agg = groups.setdefault((page_type, widget), MetricsCell())
        agg.hits += cell.hits
        agg.clicks += cell.clicks
    with_traffic = {k: c for k, c in groups.items() if c.hits > 0}
    if len(with_traffic) < 2:
        raise ValueError("low-visibility check needs at least 2 page/widget groups")
    site_median = stat_median(c.ctr for c in with_traffic.values())
    flagged = [
        (page, widget, cell.ctr, site_median)
        for (page, widget), cell in sorted(with_traffic.items(), key=lambda kv: (kv[0][0], str(kv[0][1])))
        if cell.ctr < fraction * site_median
    ]
    report.low_visibility = [
        {"page_type": p, "widget_id": w, "ctr": c, "site_median_ctr": m}
        for p, w, c, m in flagged
    ]
    return flagged


__all__ = [
    "AttributionWindows",
    "PlpGate",
    "AttributedPair",
    "AttributionSet",
    "MetricsCell",
    "MetricsReport",
    "CellKey",
    "MissingPrice",
    "CurrencyMismatch",
    "attribute",
    "rates",
    "conversion_revenue",
    "flag_low_visibility",
]
