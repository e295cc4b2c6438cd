"""Raw-log parsing, currency/time normalization, and duplicate removal."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Mapping

from .events import (
    CleaningReport,
    Event,
    EventLog,
    EventType,
    LogMetadata,
    Price,
    RejectedRecord,
    validate_event,
)

DEFAULT_SESSION_GAP_MS = 30 * 60 * 1000
DEFAULT_GLITCH_WINDOW_MS = 2_000


class UnknownFormat(ValueError):
    pass


class UnreadableStream(ValueError):
    pass


class MissingRate(KeyError):
    """A currency in the log has no conversion rate; likely a distillation error."""

    def __init__(self, currency: str):
        super().__init__(currency)
        self.currency = currency

    def __str__(self) -> str:
        return f"no conversion rate for currency {self.currency!r}"


@dataclass(frozen=True)
class RateTable:
    """Conversion rates into one base currency (rate(base) == 1)."""

    base: str
    rates: Mapping[str, float]

    def __post_init__(self):
        rates = {str(k).upper(): float(v) for k, v in self.rates.items()}
        base = self.base.upper()
        rates.setdefault(base, 1.0)
        if any(r <= 0 for r in rates.values()):
            raise ValueError("all rates must be positive")
        if rates[base] != 1.0:
            raise ValueError(f"rate for base currency {base} must be 1, got {rates[base]}")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "rates", rates)

    def to_base(self, amount: float, currency: str) -> float:
        cur = currency.upper()
        if cur not in self.rates:
            raise MissingRate(cur)
        return amount * self.rates[cur]

    @classmethod
    def from_json(cls, path, base: str | None = None) -> "RateTable":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if isinstance(data, Mapping) and "rates" in data:
            return cls(base=base or data.get("base", "USD"), rates=data["rates"])
        return cls(base=base or "USD", rates=data)


@dataclass(frozen=True)
class DedupPolicy:
    session_gap_ms: int = DEFAULT_SESSION_GAP_MS
    glitch_window_ms: int = DEFAULT_GLITCH_WINDOW_MS

    def __post_init__(self):
        if not 0 < self.glitch_window_ms < self.session_gap_ms:
            raise ValueError("glitch_window must be positive and below session_gap")


@dataclass
class RejectedLine:
    line_number: int
    reason: str
    message: str


@dataclass
class RejectReport:
    rejects: list[RejectedLine] = field(default_factory=list)

    def add(self, line_number: int, exc: Exception) -> None:
        self.rejects.append(RejectedLine(line_number, type(exc).__name__, str(exc)))

    def __len__(self) -> int:
        return len(self.rejects)

    def to_dict(self) -> dict:
        return {
            "rejected": len(self.rejects),
            "lines": [
                {"line": r.line_number, "reason": r.reason, "message": r.message}
                for r in self.rejects
            ],
        }


_CSV_LIST_SEP = "|"


def _csv_row_to_record(row: Mapping[str, str]) -> dict:
    """Map one header-keyed CSV row onto the canonical record layout.

    ``recommended_products`` is encoded ``p1:0|p2:1`` (slot optional);
    prices come from ``price_amount`` / ``price_currency`` columns.
    """
    rec: dict = {k: v for k, v in row.items() if v not in (None, "")}
    raw_rec = rec.pop("recommended_products", None)
    if raw_rec:
        items = []
        for pos, token in enumerate(raw_rec.split(_CSV_LIST_SEP)):
            if ":" in token:
                pid, slot = token.rsplit(":", 1)
                items.append([pid, int(slot)])
            else:
                items.append([token, pos])
        rec["recommended_products"] = items
    amount = rec.pop("price_amount", None)
    currency = rec.pop("price_currency", None)
    if amount is not None:
        rec["unit_price"] = {"amount": amount, "currency": currency}
    return rec


def parse_events(
    stream: IO | str | bytes,
    format: str = "jsonl",
    *,
    metadata: LogMetadata | None = None,
    default_utc_offset_minutes: int | None = None,
) -> tuple[EventLog, RejectReport]:
    """Parse a raw byte/text stream into a validated, time-sorted EventLog.

    Every row goes through :func:`validate_event`; rejected rows land in the
    side report with their line numbers instead of failing the parse.
    """
    fmt = format.lower()
    if fmt not in ("jsonl", "csv"):
        raise UnknownFormat(f"unknown ingestion format {format!r}")

    if isinstance(stream, bytes):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)

    events: list[Event] = []
    rejects = RejectReport()
    seen_ids: set[str] = set()

    def _take(line_number: int, record) -> None:
        try:
            ev = validate_event(
                record,
                default_utc_offset_minutes=default_utc_offset_minutes,
                fallback_event_id=f"row-{line_number:06d}",
            )
            if ev.event_id in seen_ids:
                raise RejectedRecord(f"duplicate event_id {ev.event_id!r}")
            seen_ids.add(ev.event_id)
            events.append(ev)
        except RejectedRecord as exc:
            rejects.add(line_number, exc)

    try:
        if fmt == "jsonl":
            for line_number, line in enumerate(stream, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    rejects.add(line_number, RejectedRecord(f"invalid JSON: {exc}"))
                    continue
                _take(line_number, record)
        else:
            reader = csv.DictReader(stream)
            if reader.fieldnames is None:
                raise UnreadableStream("CSV stream has no header row")
            for line_number, row in enumerate(reader, start=2):
                try:
                    record = _csv_row_to_record(row)
                except (ValueError, TypeError) as exc:
                    rejects.add(line_number, RejectedRecord(f"bad CSV row: {exc}"))
                    continue
                _take(line_number, record)
    except UnicodeDecodeError as exc:
        raise UnreadableStream(f"stream is not valid UTF-8: {exc}") from exc

    return EventLog(events, metadata), rejects


def parse_events_file(path, format: str = "jsonl", **kwargs) -> tuple[EventLog, RejectReport]:
    with open(path, encoding="utf-8") as fh:
        return parse_events(fh, format, **kwargs)


def normalize_currency(log: EventLog, rates: RateTable) -> EventLog:
    """Convert every unit_price into the base currency.

    Raises :class:`MissingRate` if the log carries a currency absent from
    the table. Event count and ordering are preserved.
    """
    converted = []
    for ev in log:
        if ev.unit_price is None or ev.unit_price.currency == rates.base:
            converted.append(ev)
            continue
        amount = rates.to_base(ev.unit_price.amount, ev.unit_price.currency)
        converted.append(replace(ev, unit_price=Price(amount=amount, currency=rates.base)))
    meta = replace(log.metadata, base_currency=rates.base)
    return EventLog(converted, meta, log.excluded_metric_clicks)


def assign_sessions(
    log_or_events: EventLog | Iterable[Event],
    session_gap_ms: int = DEFAULT_SESSION_GAP_MS,
) -> dict[str, tuple[str, int]]:
    """Map event_id -> (customer_key, session ordinal).

    A session is a maximal chain of one customer's events in which
    consecutive gaps stay below ``session_gap_ms``. Any event type keeps a
    session alive.
    """
    groups: dict[str, list[Event]] = {}
    for ev in log_or_events:
        key = ev.customer_key()
        if key is not None:
            groups.setdefault(key, []).append(ev)
    out: dict[str, tuple[str, int]] = {}
    for key, evs in groups.items():
        evs.sort(key=lambda e: (e.timestamp_utc, e.event_id))
        session = 0
        prev_ts = None
        for ev in evs:
            if prev_ts is not None and ev.timestamp_utc - prev_ts >= session_gap_ms:
                session += 1
            out[ev.event_id] = (key, session)
            prev_ts = ev.timestamp_utc
    return out


def _glitch_group_key(ev: Event):
    """Records that can only differ by a warehousing glitch share this key."""
    if ev.event_type == EventType.HIT:
        return (
            ev.customer_key(),
            "HIT",
            ev.page_type.value,
            ev.page_number,
            ev.widget_id,
            ev.recommended_products,
        )
    return (ev.customer_key(), ev.event_type.value, ev.product_id)


def deduplicate(log: EventLog, policy: DedupPolicy | None = None) -> tuple[EventLog, CleaningReport]:
    """Drop duplicate records: warehousing glitches and same-session re-buys.

    Two rules, in order, earliest record always retained:

    * glitch: within one duplicate group, any event inside the glitch
      window of the last retained event is dropped;
    * session: surviving BUY/ATC events of the same (customer, product)
      within a single session collapse to the earliest.
    """
    policy = policy or DedupPolicy()
    dropped_glitch: set[str] = set()
    dropped_session: set[str] = set()

    groups: dict[tuple, list[Event]] = {}
    for ev in log:
        groups.setdefault(_glitch_group_key(ev), []).append(ev)
    for evs in groups.values():
        last_kept_ts = None
        for ev in evs:  # already time-ordered from the log
            if last_kept_ts is not None and ev.timestamp_utc - last_kept_ts <= policy.glitch_window_ms:
                dropped_glitch.add(ev.event_id)
            else:
                last_kept_ts = ev.timestamp_utc

    survivors = [e for e in log if e.event_id not in dropped_glitch]
    sessions = assign_sessions(survivors, policy.session_gap_ms)
    seen: set[tuple] = set()
    for ev in survivors:
        if ev.event_type not in (EventType.BUY, EventType.ATC):
            continue
        key = ev.customer_key()
        if key is None:
            continue
        session_key = (key, sessions[ev.event_id][1], ev.event_type.value, ev.product_id)
        if session_key in seen:
            dropped_session.add(ev.event_id)
        else:
            seen.add(session_key)

    report = CleaningReport()
    report.add(
        "duplicate_glitch",
        len(dropped_glitch),
        {"glitch_window_ms": policy.glitch_window_ms},
    )
    report.add(
        "duplicate_session",
        len(dropped_session),
        {"session_gap_ms": policy.session_gap_ms},
    )
    dropped = dropped_glitch | dropped_session
    return log.filter(lambda e: e.event_id not in dropped), report


__all__ = [
    "RateTable",
    "DedupPolicy",
    "RejectReport",
    "RejectedLine",
    "MissingRate",
    "UnknownFormat",
    "UnreadableStream",
    "parse_events",
    "parse_events_file",
    "normalize_currency",
    "deduplicate",
    "assign_sessions",
    "DEFAULT_SESSION_GAP_MS",
    "DEFAULT_GLITCH_WINDOW_MS",
]
