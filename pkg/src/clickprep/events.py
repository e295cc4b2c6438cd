"""Canonical event record, event-log container, and raw-record validation.

Everything downstream (dedup, identity resolution, behavior filters,
attribution) operates on the immutable :class:`Event` / :class:`EventLog`
pair defined here. The on-disk format is JSON Lines with one event per
line; field names match the dataclass attributes (see
``schema/event.schema.json``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Iterable, Iterator, Mapping

SCHEMA_VERSION = "1"


class EventType(str, Enum):
    HIT = "HIT"
    CLICK = "CLICK"
    ATC = "ATC"
    BUY = "BUY"


class PageType(str, Enum):
    HOME = "HOME"
    PLP = "PLP"
    PDP = "PDP"
    CART = "CART"


class Segment(str, Enum):
    A1 = "A1"
    A2 = "A2"


#: Event types that represent a visitor acting on a product.
INTERACTION_TYPES = frozenset({EventType.CLICK, EventType.ATC, EventType.BUY})


class RejectedRecord(ValueError):
    """A raw record violated an invariant; str(exc) names which one."""


class MissingIdentity(RejectedRecord):
    """Both cookie_id and user_id are absent."""


class MalformedTimestamp(RejectedRecord):
    """Timestamp missing, unparseable, or zone-less without a default offset."""


class HitWithoutProducts(RejectedRecord):
    """HIT record with an empty recommendation list."""


class NegativePrice(RejectedRecord):
    """unit_price amount below zero."""


class BadSlotIndex(RejectedRecord):
    """Recommendation slots not distinct or not starting at 0."""


class MalformedRecord(RejectedRecord):
    """Any other per-record invariant violation."""


@dataclass(frozen=True, slots=True)
class Price:
    amount: float
    currency: str


@dataclass(frozen=True, slots=True)
class Event:
    """One timestamped visitor action (hit / click / add-to-cart / buy).

    HIT events carry ``recommended_products`` (ordered ``(product_id,
    slot_index)`` pairs) and no ``product_id``; interaction events carry a
    ``product_id`` and no recommendation list. ``cust_id`` is empty until
    identity resolution fills it.
    """

    event_id: str
    event_type: EventType
    timestamp_utc: int  # milliseconds since epoch
    page_type: PageType
    cookie_id: str | None = None
    user_id: str | None = None
    cust_id: str | None = None
    product_id: str | None = None
    recommended_products: tuple[tuple[str, int], ...] = ()
    page_number: int | None = None
    widget_id: str | None = None
    quantity: int = 1
    unit_price: Price | None = None
    user_agent: str | None = None
    ip: str | None = None
    segment_flag: Segment | None = None

    @property
    def is_hit(self) -> bool:
        return self.event_type == EventType.HIT

    @property
    def is_interaction(self) -> bool:
        return self.event_type in INTERACTION_TYPES

    def customer_key(self) -> str | None:
        """Best available customer identity: cust_id, else user, else cookie."""
        return self.cust_id or self.user_id or self.cookie_id

    def day(self) -> str:
        """UTC calendar day of the event, as YYYY-MM-DD."""
        return _day_of(self.timestamp_utc)

    def to_record(self) -> dict:
        """JSON-serializable dict in the canonical JSONL field layout."""
        rec: dict = {
            "event_id": self.event_id,
            "event_type": self.event_type.value,
            "timestamp_utc": self.timestamp_utc,
            "page_type": self.page_type.value,
        }
        if self.cookie_id is not None:
            rec["cookie_id"] = self.cookie_id
        if self.user_id is not None:
            rec["user_id"] = self.user_id
        if self.cust_id is not None:
            rec["cust_id"] = self.cust_id
        if self.product_id is not None:
            rec["product_id"] = self.product_id
        if self.recommended_products:
            rec["recommended_products"] = [list(p) for p in self.recommended_products]
        if self.page_number is not None:
            rec["page_number"] = self.page_number
        if self.widget_id is not None:
            rec["widget_id"] = self.widget_id
        if self.quantity != 1:
            rec["quantity"] = self.quantity
        if self.unit_price is not None:
            rec["unit_price"] = {
                "amount": self.unit_price.amount,
                "currency": self.unit_price.currency,
            }
        if self.user_agent is not None:
            rec["user_agent"] = self.user_agent
        if self.ip is not None:
            rec["ip"] = self.ip
        if self.segment_flag is not None:
            rec["segment_flag"] = self.segment_flag.value
        return rec


def _day_of(timestamp_ms: int) -> str:
    return datetime.fromtimestamp(timestamp_ms / 1000.0, tz=timezone.utc).strftime(
        "%Y-%m-%d"
    )


_MS_PER_DAY = 86_400_000


def day_index(timestamp_ms: int) -> int:
    """UTC day number since epoch; cheaper than formatting when grouping."""
    return timestamp_ms // _MS_PER_DAY


def _parse_timestamp(value, default_utc_offset_minutes: int | None) -> int:
    """Parse a raw timestamp into UTC milliseconds.

    Accepts integer/float epoch milliseconds or an ISO-8601 string. Naive
    (zone-less) strings are rejected unless a default offset is configured.
    """
    if isinstance(value, bool):
        raise MalformedTimestamp("timestamp_utc must be a number or ISO-8601 string")
    if isinstance(value, (int, float)):
        ts = int(value)
        if ts < 0:
            raise MalformedTimestamp(f"negative timestamp {value!r}")
        return ts
    if isinstance(value, str):
        text = value.strip()
        try:
            return _parse_timestamp(float(text) if "." in text else int(text), None)
        except ValueError:
            pass  # not epoch milliseconds; try ISO-8601
        if text.endswith(("Z", "z")):  # py3.10 fromisoformat lacks Z support
            text = text[:-1] + "+00:00"
        try:
            dt = datetime.fromisoformat(text)
        except ValueError as exc:
            raise MalformedTimestamp(f"unparseable timestamp {value!r}") from exc
        if dt.tzinfo is None:
            if default_utc_offset_minutes is None:
                raise MalformedTimestamp(
                    f"zone-less timestamp {value!r} and no default offset configured"
                )
            ts = dt.replace(tzinfo=timezone.utc).timestamp()
            return int(ts * 1000) - default_utc_offset_minutes * 60_000
        return int(dt.timestamp() * 1000)
    raise MalformedTimestamp(f"timestamp_utc has unsupported type {type(value).__name__}")


def _parse_recommendations(raw) -> tuple[tuple[str, int], ...]:
    """Normalize the recommendation list into ((product_id, slot), ...).

    Accepts plain product-id lists (slots assigned by position), pair lists,
    or {"product_id", "slot_index"} mappings. Slots must be distinct,
    non-negative, and include 0.
    """
    if not isinstance(raw, (list, tuple)):
        raise MalformedRecord("recommended_products must be a list")
    pairs: list[tuple[str, int]] = []
    for pos, item in enumerate(raw):
        if isinstance(item, str):
            pairs.append((item, pos))
        elif isinstance(item, Mapping):
            try:
                pairs.append((str(item["product_id"]), int(item["slot_index"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedRecord(f"bad recommendation entry {item!r}") from exc
        elif isinstance(item, (list, tuple)) and len(item) == 2:
            try:
                pairs.append((str(item[0]), int(item[1])))
            except (TypeError, ValueError) as exc:
                raise MalformedRecord(f"bad recommendation entry {item!r}") from exc
        else:
            raise MalformedRecord(f"bad recommendation entry {item!r}")
    slots = [s for _, s in pairs]
    if pairs:
        if len(set(slots)) != len(slots):
            raise BadSlotIndex(f"duplicate slot indices {sorted(slots)}")
        if min(slots) != 0:
            raise BadSlotIndex(f"slot indices must start at 0, got min {min(slots)}")
    return tuple(pairs)


def _opt_str(raw: Mapping, key: str) -> str | None:
    value = raw.get(key)
    if value is None:
        return None
    text = str(value).strip()
    return text or None


def validate_event(
    raw_record: Mapping,
    *,
    default_utc_offset_minutes: int | None = None,
    fallback_event_id: str | None = None,
) -> Event:
    """Validate one raw record into an :class:`Event` or raise a typed rejection.

    Total over inputs: every record either returns an Event or raises a
    :class:`RejectedRecord` subclass naming the violated invariant.
    """
    if not isinstance(raw_record, Mapping):
        raise MalformedRecord("record is not a field map")

    event_id = _opt_str(raw_record, "event_id") or fallback_event_id
    if not event_id:
        raise MalformedRecord("missing event_id")

    try:
        event_type = EventType(str(raw_record.get("event_type", "")).upper())
    except ValueError:
        raise MalformedRecord(
            f"unknown event_type {raw_record.get('event_type')!r}"
        ) from None

    if "timestamp_utc" not in raw_record or raw_record["timestamp_utc"] is None:
        raise MalformedTimestamp("missing timestamp_utc")
    timestamp = _parse_timestamp(raw_record["timestamp_utc"], default_utc_offset_minutes)

    try:
        page_type = PageType(str(raw_record.get("page_type", "")).upper())
    except ValueError:
        raise MalformedRecord(f"unknown page_type {raw_record.get('page_type')!r}") from None

    cookie_id = _opt_str(raw_record, "cookie_id")
    user_id = _opt_str(raw_record, "user_id")
    if cookie_id is None and user_id is None:
        raise MissingIdentity("both cookie_id and user_id are missing")

    product_id = _opt_str(raw_record, "product_id")
    recommended = _parse_recommendations(raw_record.get("recommended_products") or [])

    if event_type == EventType.HIT:
        if not recommended:
            raise HitWithoutProducts("HIT with empty recommended_products")
        if product_id is not None:
            raise MalformedRecord("HIT must not carry a product_id")
    else:
        if product_id is None:
            raise MalformedRecord(f"{event_type.value} without product_id")
        if recommended:
            raise MalformedRecord(f"{event_type.value} must not carry recommended_products")

    page_number = raw_record.get("page_number")
    if page_number is not None:
        try:
            page_number = int(page_number)
        except (TypeError, ValueError):
            raise MalformedRecord(f"bad page_number {page_number!r}") from None
        if page_number < 1:
            raise MalformedRecord(f"page_number must be positive, got {page_number}")
        if page_type != PageType.PLP:
            page_number = None  # page numbers only meaningful on PLPs

    quantity = raw_record.get("quantity", 1)
    try:
        quantity = int(quantity) if quantity is not None else 1
    except (TypeError, ValueError):
        raise MalformedRecord(f"bad quantity {quantity!r}") from None
    if quantity < 1:
        raise MalformedRecord(f"quantity must be positive, got {quantity}")

    unit_price = None
    raw_price = raw_record.get("unit_price")
    if raw_price is not None:
        if isinstance(raw_price, Mapping):
            amount, currency = raw_price.get("amount"), raw_price.get("currency")
        else:
            amount, currency = raw_price, raw_record.get("currency")
        try:
            amount = float(amount)
        except (TypeError, ValueError):
            raise MalformedRecord(f"bad price amount {amount!r}") from None
        if amount < 0:
            raise NegativePrice(f"negative price {amount}")
        if not currency:
            raise MalformedRecord("unit_price without currency code")
        unit_price = Price(amount=amount, currency=str(currency).upper())

    segment = raw_record.get("segment_flag")
    if segment is not None:
        try:
            segment = Segment(str(segment).upper())
        except ValueError:
            raise MalformedRecord(f"unknown segment_flag {segment!r}") from None

    return Event(
        event_id=event_id,
        event_type=event_type,
        timestamp_utc=timestamp,
        page_type=page_type,
        cookie_id=cookie_id,
        user_id=user_id,
        cust_id=_opt_str(raw_record, "cust_id"),
        product_id=product_id,
        recommended_products=recommended,
        page_number=page_number,
        widget_id=_opt_str(raw_record, "widget_id"),
        quantity=quantity,
        unit_price=unit_price,
        user_agent=_opt_str(raw_record, "user_agent"),
        ip=_opt_str(raw_record, "ip"),
        segment_flag=segment,
    )


@dataclass(frozen=True, slots=True)
class LogMetadata:
    source: str = ""
    ingested_at_utc: int = 0
    base_currency: str = "USD"


class EventLog:
    """Immutable, time-ordered collection of events.

    Events are stored sorted by ``(timestamp_utc, event_id)`` so every
    downstream computation is independent of input order. ``excluded_metric_clicks``
    carries click event-ids that stay in the log but are skipped when
    computing CTR (the new-customer rule marks rather than deletes).
    """

    __slots__ = ("_events", "_metadata", "_excluded", "_by_id")

    def __init__(
        self,
        events: Iterable[Event],
        metadata: LogMetadata | None = None,
        excluded_metric_clicks: Iterable[str] = (),
    ):
        ordered = sorted(events, key=lambda e: (e.timestamp_utc, e.event_id))
        by_id: dict[str, Event] = {}
        for ev in ordered:
            if ev.event_id in by_id:
                raise ValueError(f"duplicate event_id {ev.event_id!r} in log")
            by_id[ev.event_id] = ev
        self._events: tuple[Event, ...] = tuple(ordered)
        self._metadata = metadata or LogMetadata()
        self._excluded = frozenset(excluded_metric_clicks) & set(by_id)
        self._by_id = by_id

    @property
    def events(self) -> tuple[Event, ...]:
        return self._events

    @property
    def metadata(self) -> LogMetadata:
        return self._metadata

    @property
    def excluded_metric_clicks(self) -> frozenset[str]:
        return self._excluded

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self._events)

    def __contains__(self, event_id: str) -> bool:
        return event_id in self._by_id

    def get(self, event_id: str) -> Event | None:
        return self._by_id.get(event_id)

    def with_events(self, events: Iterable[Event]) -> "EventLog":
        """New log with the same metadata; exclusions pruned to survivors."""
        return EventLog(events, self._metadata, self._excluded)

    def with_exclusions(self, event_ids: Iterable[str]) -> "EventLog":
        return EventLog(self._events, self._metadata, self._excluded | set(event_ids))

    def filter(self, predicate) -> "EventLog":
        return self.with_events(e for e in self._events if predicate(e))

    def by_customer(self) -> dict[str, list[Event]]:
        """Events grouped by customer key, preserving time order."""
        groups: dict[str, list[Event]] = {}
        for ev in self._events:
            key = ev.customer_key()
            if key is not None:
                groups.setdefault(key, []).append(ev)
        return groups

    def customer_ids(self) -> set[str]:
        return {e.customer_key() for e in self._events if e.customer_key() is not None}

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for ev in self._events:
                fh.write(json.dumps(ev.to_record(), sort_keys=True) + "\n")

    def dumps(self) -> str:
        return "".join(json.dumps(e.to_record(), sort_keys=True) + "\n" for e in self._events)


@dataclass
class RuleEntry:
    rule: str
    count: int
    parameters: dict = field(default_factory=dict)


@dataclass
class CleaningReport:
    """Counters for one cleaning step; every removed record belongs to exactly one rule."""

    records_removed: int = 0
    customers_flagged: int = 0
    hits_removed: int = 0
    rules: list[RuleEntry] = field(default_factory=list)

    def add(
        self,
        rule: str,
        count: int,
        parameters: dict | None = None,
        *,
        customers: int = 0,
        hits: int = 0,
        removed: bool = True,
    ) -> None:
        if count < 0 or customers < 0 or hits < 0:
            raise ValueError("report counts must be non-negative")
        self.rules.append(RuleEntry(rule, count, dict(parameters or {})))
        if removed:
            self.records_removed += count
        self.customers_flagged += customers
        self.hits_removed += hits

    def merge(self, other: "CleaningReport") -> "CleaningReport":
        merged = CleaningReport(
            records_removed=self.records_removed + other.records_removed,
            customers_flagged=self.customers_flagged + other.customers_flagged,
            hits_removed=self.hits_removed + other.hits_removed,
            rules=list(self.rules) + list(other.rules),
        )
        return merged

    def to_dict(self) -> dict:
        return {
            "records_removed": self.records_removed,
            "customers_flagged": self.customers_flagged,
            "hits_removed": self.hits_removed,
            "rules": [
                {"rule": r.rule, "count": r.count, "parameters": r.parameters}
                for r in self.rules
            ],
        }


def make_event(**kwargs) -> Event:
    """Shorthand constructor used by tests and the generator.

    Fills the boilerplate (page_type, ids) so call sites stay readable;
    validation invariants still apply via validate_event on round-trips.
    """
    kwargs.setdefault("page_type", PageType.PDP)
    if isinstance(kwargs.get("event_type"), str):
        kwargs["event_type"] = EventType(kwargs["event_type"].upper())
    if isinstance(kwargs.get("page_type"), str):
        kwargs["page_type"] = PageType(kwargs["page_type"].upper())
    if isinstance(kwargs.get("segment_flag"), str):
        kwargs["segment_flag"] = Segment(kwargs["segment_flag"].upper())
    rec = kwargs.get("recommended_products")
    if rec is not None:
        kwargs["recommended_products"] = tuple(
            (p, i) if isinstance(p, str) else (p[0], p[1])
            for i, p in enumerate(rec)
        )
    price = kwargs.get("unit_price")
    if isinstance(price, (int, float)):
        kwargs["unit_price"] = Price(amount=float(price), currency="USD")
    elif isinstance(price, tuple):
        kwargs["unit_price"] = Price(amount=float(price[0]), currency=price[1])
    return Event(**kwargs)


__all__ = [
    "SCHEMA_VERSION",
    "EventType",
    "PageType",
    "Segment",
    "INTERACTION_TYPES",
    "RejectedRecord",
    "MissingIdentity",
    "MalformedTimestamp",
    "HitWithoutProducts",
    "NegativePrice",
    "BadSlotIndex",
    "MalformedRecord",
    "Price",
    "Event",
    "EventLog",
    "LogMetadata",
    "CleaningReport",
    "RuleEntry",
    "validate_event",
    "make_event",
    "day_index",
    "replace",
]
