"""Shared builders for hand-constructed event logs."""

from __future__ import annotations

import itertools

import pytest

from clickprep.events import Event, EventLog, EventType, PageType, Price, Segment

_ids = itertools.count(1)


def next_id(prefix: str = "t") -> str:
    return f"{prefix}{next(_ids):06d}"


def mk_hit(
    cust: str,
    ts: int,
    products,
    *,
    page: str = "PDP",
    widget: str = "similar",
    page_number: int | None = None,
    segment: str | None = None,
    event_id: str | None = None,
    **kwargs,
) -> Event:
    rec = tuple(
        (p, i) if isinstance(p, str) else (p[0], p[1]) for i, p in enumerate(products)
    )
    return Event(
        event_id=event_id or next_id("h"),
        event_type=EventType.HIT,
        timestamp_utc=ts,
        page_type=PageType(page),
        cust_id=cust,
        cookie_id=kwargs.pop("cookie_id", f"ck-{cust}"),
        user_id=kwargs.pop("user_id", None),
        recommended_products=rec,
        page_number=page_number,
        widget_id=widget,
        segment_flag=Segment(segment) if segment else None,
        **kwargs,
    )


def _interaction(
    etype: EventType,
    cust: str,
    ts: int,
    product: str,
    *,
    page: str = "PDP",
    price: float | tuple | None = None,
    quantity: int = 1,
    event_id: str | None = None,
    segment: str | None = None,
    **kwargs,
) -> Event:
    unit_price = None
    if isinstance(price, (int, float)):
        unit_price = Price(amount=float(price), currency="USD")
    elif isinstance(price, tuple):
        unit_price = Price(amount=float(price[0]), currency=price[1])
    return Event(
        event_id=event_id or next_id(etype.value[0].lower()),
        event_type=etype,
        timestamp_utc=ts,
        page_type=PageType(page),
        cust_id=cust,
        cookie_id=kwargs.pop("cookie_id", f"ck-{cust}"),
        user_id=kwargs.pop("user_id", None),
        product_id=product,
        quantity=quantity,
        unit_price=unit_price,
        segment_flag=Segment(segment) if segment else None,
        **kwargs,
    )


def mk_click(cust, ts, product, **kwargs) -> Event:
    return _interaction(EventType.CLICK, cust, ts, product, **kwargs)


def mk_atc(cust, ts, product, **kwargs) -> Event:
    return _interaction(EventType.ATC, cust, ts, product, **kwargs)


def mk_buy(cust, ts, product, **kwargs) -> Event:
    return _interaction(EventType.BUY, cust, ts, product, **kwargs)


def mk_log(*events) -> EventLog:
    flat = []
    for item in events:
        if isinstance(item, Event):
            flat.append(item)
        else:
            flat.extend(item)
    return EventLog(flat)


@pytest.fixture
def builders():
    return mk_hit, mk_click, mk_atc, mk_buy, mk_log


MIN = 60_000
HOUR = 3_600_000
DAY = 86_400_000
