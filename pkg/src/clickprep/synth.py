"""Synthetic clickstream generator with injected, labeled pathologies.

Every cleaning rule in the package is tuned and tested against logs from
here: the generator plants bounces, bots, resellers, outlier days,
warehousing glitches, shared cookies, and combo purchases, and records
exactly what it planted. Interaction quotas (rather than per-hit coin
flips) pin the emitted CTR/ATC-TR/BTR to the configured targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .events import (
    Event,
    EventLog,
    EventType,
    LogMetadata,
    PageType,
    Price,
    Segment,
    replace,
)
from .validation import assign_segments

DEFAULT_START_MS = int(
    datetime(2024, 3, 4, tzinfo=timezone.utc).timestamp() * 1000
)
_MS_PER_DAY = 86_400_000

_PAGE_CHOICES = ("HOME", "PDP", "PLP", "CART")
_PAGE_PROBS = (0.20, 0.50, 0.22, 0.08)
_WIDGETS = {
    "HOME": ("home_recs",),
    "PDP": ("similar", "also_like"),
    "PLP": ("plp_grid",),
    "CART": ("bought_also",),
}
_HUMAN_UAS = (
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) Gecko/20100101 Firefox/115.0",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 13_5) AppleWebKit/605.1.15 Safari/605.1.15",
    "Mozilla/5.0 (Linux; Android 13; Pixel 7) AppleWebKit/537.36 Chrome/114.0 Mobile",
)
#: user agent planted on signature-type bots; match with pattern ``*dataspider*``
BOT_SIGNATURE_UA = "DataSpider/3.4 (+https://spider.example/bot)"
#: source subnet planted on signature bots; match with ``198.51.100.0/24``
BOT_SIGNATURE_SUBNET = "198.51.100."

LABEL_CLEAN = "CLEAN"
LABEL_BOUNCE = "BOUNCE"
LABEL_BOT = "BOT"
LABEL_B2B = "B2B"
LABEL_OUTLIER = "OUTLIER"


class InfeasibleConfig(ValueError):
    pass


@dataclass(frozen=True)
class BotBehavior:
    burst_gap_ms: int = 400  # mean gap of fast bots (well above 1 event/s)
    regular_gap_ms: int = 5_000  # metronome bots
    events_per_day: int = 40
    active_days: int = 2


@dataclass(frozen=True)
class OutlierSpec:
    count: int = 0
    view_magnitude: int = 400  # clicks on the outlier day
    buy_magnitude: int = 0  # buy chains on the outlier day (0 = views only)


@dataclass(frozen=True)
class SynthConfig:
    customers: int = 500
    days: int = 7
    base_ctr: float = 0.06
    base_atctr: float = 0.025
    base_btr: float = 0.012
    bounce_fraction: float = 0.0
    bot_count: int = 0
    bot_behavior: BotBehavior = field(default_factory=BotBehavior)
    b2b_count: int = 0
    b2b_daily_buys: int = 20
    duplicate_glitch_prob: float = 0.0
    outlier_customers: OutlierSpec = field(default_factory=OutlierSpec)
    combo_catalog: int = 0
    combo_share: float = 0.25  # fraction of buy journeys that purchase a combo
    multi_device_fraction: float = 0.0
    shared_cookie_pairs: int = 0
    never_logged_in_fraction: float = 0.3
    price_range: tuple[float, float] = (5.0, 100.0)
    currencies: tuple[str, ...] = ("USD",)
    catalog_size: int = 200
    hits_per_day: tuple[int, int] = (2, 6)
    active_day_prob: float = 0.75
    daily_ctr_amplitude: float = 0.4  # weekday-style CTR swing shared by segments
    personalization_ramp: int = 0  # first N clicks of a customer convert worse
    ramp_ctr_scale: float = 0.5
    aa_seed: int | None = None
    aa_ctr_scale_a2: float = 1.0
    start_utc_ms: int = DEFAULT_START_MS
    seed: int = 0

    def __post_init__(self):
        if self.customers < 1 or self.days < 1:
            raise InfeasibleConfig("need at least one customer and one day")
        for name in ("base_ctr", "base_atctr", "base_btr"):
            rate = getattr(self, name)
            if not 0 < rate < 1:
                raise InfeasibleConfig(f"{name} must lie in (0, 1)")
        if not self.base_btr <= self.base_atctr <= self.base_ctr:
            raise InfeasibleConfig("need base_btr <= base_atctr <= base_ctr")
        for name in (
            "bounce_fraction",
            "duplicate_glitch_prob",
            "multi_device_fraction",
            "never_logged_in_fraction",
            "combo_share",
        ):
            frac = getattr(self, name)
            if not 0 <= frac <= 1:
                raise InfeasibleConfig(f"{name} must lie in [0, 1]")
        if not 0 <= self.daily_ctr_amplitude < 1:
            raise InfeasibleConfig("daily_ctr_amplitude must lie in [0, 1)")
        special = (
            round(self.bounce_fraction * self.customers)
            + self.bot_count
            + self.b2b_count
            + self.outlier_customers.count
        )
        if special > self.customers:
            raise InfeasibleConfig(
                f"injected pathologies need {special} customers, only {self.customers} configured"
            )
        if self.price_range[0] < 0 or self.price_range[0] > self.price_range[1]:
            raise InfeasibleConfig("bad price_range")
        if not self.currencies:
            raise InfeasibleConfig("need at least one currency")


@dataclass
class GroundTruth:
    """Exactly what the generator injected, keyed by true customer identity."""

    labels: dict[str, str]
    cookie_user_map: dict[str, tuple[str, ...]]
    ambiguous_cookies: tuple[str, ...]
    ambiguous_event_ids: frozenset[str]
    glitch_duplicate_ids: frozenset[str]
    combo_members: dict[str, str]
    segment_of: dict[str, str]

    def customers_with(self, label: str) -> set[str]:
        return {c for c, l in self.labels.items() if l == label}

    def to_dict(self) -> dict:
        return {
            "labels": dict(sorted(self.labels.items())),
            "cookie_user_map": {k: list(v) for k, v in sorted(self.cookie_user_map.items())},
            "ambiguous_cookies": sorted(self.ambiguous_cookies),
            "ambiguous_event_ids": sorted(self.ambiguous_event_ids),
            "glitch_duplicate_ids": sorted(self.glitch_duplicate_ids),
            "combo_members": dict(sorted(self.combo_members.items())),
            "segment_of": dict(sorted(self.segment_of.items())),
        }


@dataclass
class _HitStub:
    """Bookkeeping for the interaction quota pass."""

    event_id: str
    cust: str
    timestamp: int
    day: int
    clickable: tuple[str, ...]
    in_quota_pool: bool


@dataclass
class _Customer:
    index: int
    label: str
    user_id: str | None
    cookies: tuple[str, ...]
    key: str  # true identity: user_id when it exists, else the cookie


class _Generator:
    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.events: list[Event] = []
        self.hits: list[_HitStub] = []
        self._counter = 0
        self.products = [f"P{i:04d}" for i in range(cfg.catalog_size)]
        self.combo_members: dict[str, str] = {}
        self.combos: list[str] = []
        for ci in range(cfg.combo_catalog):
            combo = f"K{ci:03d}"
            self.combos.append(combo)
            for si in range(2 + ci % 2):  # 2 or 3 component SKUs
                self.combo_members[f"{combo}-s{si}"] = combo
        self.recommendable = self.products + self.combos

    def _next_id(self) -> str:
        self._counter += 1
        return f"e{self._counter:07d}"

    def _rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, *key])

    def _price(self, rng) -> Price:
        lo, hi = self.cfg.price_range
        amount = round(float(rng.uniform(lo, hi)), 2)
        currency = str(rng.choice(self.cfg.currencies))
        return Price(amount=amount, currency=currency)

    def _day_start(self, day: int) -> int:
        return self.cfg.start_utc_ms + day * _MS_PER_DAY

    def _session_start(self, rng, day: int) -> int:
        hour_ms = int(rng.integers(8 * 3_600_000, 22 * 3_600_000))
        return self._day_start(day) + hour_ms

    def _browse_gap(self, rng) -> int:
        return max(1_000, int(rng.lognormal(np.log(20), 0.6) * 1000))

    def _emit(self, **kwargs) -> Event:
        ev = Event(event_id=self._next_id(), **kwargs)
        self.events.append(ev)
        return ev

    def _emit_hit(
        self,
        rng,
        cust: _Customer,
        cookie: str | None,
        user: str | None,
        ts: int,
        ua: str,
        ip: str | None,
        in_quota_pool: bool,
    ) -> _HitStub:
        page = str(rng.choice(_PAGE_CHOICES, p=_PAGE_PROBS))
        widget = str(rng.choice(_WIDGETS[page]))
        n_slots = 12 if page == "PLP" else 6
        page_number = None
        if page == "PLP":
            page_number = 1 if rng.random() < 0.85 else 2
        shown = [
            str(p) for p in rng.choice(self.recommendable, size=n_slots, replace=False)
        ]
        ev = self._emit(
            event_type=EventType.HIT,
            timestamp_utc=ts,
            page_type=PageType(page),
            cookie_id=cookie,
            user_id=user,
            recommended_products=tuple((p, i) for i, p in enumerate(shown)),
            page_number=page_number,
            widget_id=widget,
            user_agent=ua,
            ip=ip,
        )
        # gate: PLP hits only count on page 1 and in the top 8 slots
        if page == "PLP":
            eligible = page_number == 1
            clickable = tuple(shown[:8]) if eligible else ()
        else:
            eligible = True
            clickable = tuple(shown)
        stub = _HitStub(
            event_id=ev.event_id,
            cust=cust.key,
            timestamp=ts,
            day=(ts - self.cfg.start_utc_ms) // _MS_PER_DAY,
            clickable=clickable,
            in_quota_pool=in_quota_pool and eligible,
        )
        self.hits.append(stub)
        return stub

    # -- customer generators -------------------------------------------------

    def _plan_customers(self) -> list[_Customer]:
        cfg = self.cfg
        n_bounce = round(cfg.bounce_fraction * cfg.customers)
        labels = (
            [LABEL_BOUNCE] * n_bounce
            + [LABEL_BOT] * cfg.bot_count
            + [LABEL_B2B] * cfg.b2b_count
            + [LABEL_OUTLIER] * cfg.outlier_customers.count
        )
        labels += [LABEL_CLEAN] * (cfg.customers - len(labels))
        rng = self._rng(2)
        rng.shuffle(labels)

        customers: list[_Customer] = []
        for idx, label in enumerate(labels):
            crng = self._rng(3, idx)
            cookie0 = f"c{idx:05d}a"
            if label in (LABEL_BOUNCE, LABEL_BOT):
                # anonymous traffic: a cookie and nothing else
                customers.append(_Customer(idx, label, None, (cookie0,), cookie0))
                continue
            logs_in = crng.random() >= cfg.never_logged_in_fraction
            if label == LABEL_B2B:
                logs_in = True  # resellers have accounts
            if not logs_in:
                customers.append(_Customer(idx, label, None, (cookie0,), cookie0))
                continue
            user = f"u{idx:05d}"
            cookies = [cookie0]
            if crng.random() < cfg.multi_device_fraction:
                cookies.append(f"c{idx:05d}b")
            customers.append(_Customer(idx, label, user, tuple(cookies), user))
        return customers

    def _active_days(self, rng) -> list[int]:
        days = [d for d in range(self.cfg.days) if rng.random() < self.cfg.active_day_prob]
        if not days:
            days = [int(rng.integers(0, self.cfg.days))]
        return days

    def _gen_clean(self, cust: _Customer) -> None:
        """Normal browsing: sessions of hits; interactions arrive via quota."""
        cfg = self.cfg
        rng = self._rng(4, cust.index)
        ua = str(rng.choice(_HUMAN_UAS))
        ip = f"192.0.2.{cust.index % 250 + 1}"
        lo, hi = cfg.hits_per_day
        # each cookie must co-occur with the user at least once for backfill
        cookie_seen_with_user = {c: False for c in cust.cookies}
        for day in self._active_days(rng):
            cookie = cust.cookies[int(rng.integers(0, len(cust.cookies)))]
            logged = cust.user_id is not None and (
                rng.random() < 0.6 or not cookie_seen_with_user[cookie]
            )
            user = cust.user_id if logged else None
            if user:
                cookie_seen_with_user[cookie] = True
            ts = self._session_start(rng, day)
            for _ in range(int(rng.integers(lo, hi + 1))):
                self._emit_hit(rng, cust, cookie, user, ts, ua, ip, in_quota_pool=True)
                ts += self._browse_gap(rng)

    def _gen_bounce(self, cust: _Customer) -> None:
        rng = self._rng(4, cust.index)
        ua = str(rng.choice(_HUMAN_UAS))
        day = int(rng.integers(0, self.cfg.days))
        ts = self._session_start(rng, day)
        page = "HOME" if rng.random() < 0.7 else "PLP"
        shown = [str(p) for p in rng.choice(self.recommendable, size=6, replace=False)]
        self._emit(
            event_type=EventType.HIT,
            timestamp_utc=ts,
            page_type=PageType(page),
            cookie_id=cust.cookies[0],
            recommended_products=tuple((p, i) for i, p in enumerate(shown)),
            page_number=1 if page == "PLP" else None,
            widget_id=_WIDGETS[page][0],
            user_agent=ua,
            ip=f"192.0.2.{cust.index % 250 + 1}",
        )

    def _gen_bot(self, cust: _Customer, kind: int) -> None:
        """kind 0: burst rate; kind 1: metronome gaps; kind 2: UA/IP signature."""
        cfg = self.cfg
        rng = self._rng(4, cust.index)
        behavior = cfg.bot_behavior
        if kind == 2:
            ua = BOT_SIGNATURE_UA
            ip = f"{BOT_SIGNATURE_SUBNET}{cust.index % 250 + 1}"
        else:
            ua = str(rng.choice(_HUMAN_UAS))
            ip = f"203.0.113.{cust.index % 250 + 1}"
        days = sorted(
            int(d)
            for d in rng.choice(cfg.days, size=min(behavior.active_days, cfg.days), replace=False)
        )
        for day in days:
            ts = self._session_start(rng, day)
            # crawlers trigger widget loads too
            self._emit_hit(rng, cust, cust.cookies[0], None, ts, ua, ip, in_quota_pool=False)
            for _ in range(behavior.events_per_day):
                if kind == 0:
                    gap = max(50, int(rng.lognormal(np.log(behavior.burst_gap_ms), 0.5)))
                elif kind == 1:
                    gap = int(behavior.regular_gap_ms + rng.integers(-25, 26))
                else:
                    gap = max(1_000, int(rng.lognormal(np.log(12_000), 0.5)))
                ts += gap
                self._emit(
                    event_type=EventType.CLICK,
                    timestamp_utc=ts,
                    page_type=PageType.PDP,
                    cookie_id=cust.cookies[0],
                    product_id=str(rng.choice(self.products)),
                    user_agent=ua,
                    ip=ip,
                )

    def _gen_b2b(self, cust: _Customer) -> None:
        """Reseller: full click-ATC-buy chains on many distinct products daily."""
        cfg = self.cfg
        rng = self._rng(4, cust.index)
        ua = str(rng.choice(_HUMAN_UAS))
        ip = f"192.0.2.{cust.index % 250 + 1}"
        for day in range(cfg.days):
            ts = self._session_start(rng, day)
            self._emit_hit(rng, cust, cust.cookies[0], cust.user_id, ts, ua, ip, in_quota_pool=False)
            ts += self._browse_gap(rng)
            daily_products = [
                str(p) for p in rng.choice(self.products, size=cfg.b2b_daily_buys, replace=False)
            ]
            for product in daily_products:
                price = self._price(rng)
                self._emit(
                    event_type=EventType.CLICK,
                    timestamp_utc=ts,
                    page_type=PageType.PDP,
                    cookie_id=cust.cookies[0],
                    user_id=cust.user_id,
                    product_id=product,
                    user_agent=ua,
                    ip=ip,
                )
                ts += self._browse_gap(rng)
                self._emit(
                    event_type=EventType.ATC,
                    timestamp_utc=ts,
                    page_type=PageType.PDP,
                    cookie_id=cust.cookies[0],
                    user_id=cust.user_id,
                    product_id=product,
                    unit_price=price,
                    user_agent=ua,
                    ip=ip,
                )
                ts += self._browse_gap(rng)
                self._emit(
                    event_type=EventType.BUY,
                    timestamp_utc=ts,
                    page_type=PageType.CART,
                    cookie_id=cust.cookies[0],
                    user_id=cust.user_id,
                    product_id=product,
                    unit_price=price,
                    user_agent=ua,
                    ip=ip,
                )
                ts += self._browse_gap(rng)

    def _gen_outlier(self, cust: _Customer) -> None:
        """One pathological day of extreme (but human-paced) activity."""
        cfg = self.cfg
        spec = cfg.outlier_customers
        rng = self._rng(4, cust.index)
        ua = str(rng.choice(_HUMAN_UAS))
        ip = f"192.0.2.{cust.index % 250 + 1}"
        cookie = cust.cookies[0]
        burst_day = int(rng.integers(0, cfg.days))
        # a little ordinary browsing on one other day keeps them realistic
        other = (burst_day + 1 + int(rng.integers(0, max(1, cfg.days - 1)))) % cfg.days
        if cfg.days > 1 and other != burst_day:
            ts = self._session_start(rng, other)
            for _ in range(2):
                self._emit_hit(rng, cust, cookie, cust.user_id, ts, ua, ip, in_quota_pool=True)
                ts += self._browse_gap(rng)

        ts = self._day_start(burst_day) + 4 * 3_600_000
        self._emit_hit(rng, cust, cookie, cust.user_id, ts, ua, ip, in_quota_pool=False)
        for _ in range(spec.view_magnitude):
            ts += max(2_000, int(rng.lognormal(np.log(45), 0.8) * 1000))
            self._emit(
                event_type=EventType.CLICK,
                timestamp_utc=ts,
                page_type=PageType.PDP,
                cookie_id=cookie,
                user_id=cust.user_id,
                product_id=str(rng.choice(self.products)),
                user_agent=ua,
                ip=ip,
            )
        buy_products = [
            str(p) for p in rng.choice(self.products, size=spec.buy_magnitude, replace=False)
        ]
        for product in buy_products:
            ts += self._browse_gap(rng)
            price = self._price(rng)
            for etype, page in (
                (EventType.CLICK, PageType.PDP),
                (EventType.ATC, PageType.PDP),
                (EventType.BUY, PageType.CART),
            ):
                self._emit(
                    event_type=etype,
                    timestamp_utc=ts,
                    page_type=page,
                    cookie_id=cookie,
                    user_id=cust.user_id,
                    product_id=product,
                    unit_price=price if etype != EventType.CLICK else None,
                    user_agent=ua,
                    ip=ip,
                )
                ts += self._browse_gap(rng)

    # -- interaction quotas ---------------------------------------------------

    def _day_multipliers(self) -> np.ndarray:
        """Weekday-style CTR modulation, normalized to mean exactly 1."""
        cfg = self.cfg
        if cfg.daily_ctr_amplitude <= 0 or cfg.days == 1:
            return np.ones(cfg.days)
        raw = 1.0 + cfg.daily_ctr_amplitude * np.sin(
            2 * np.pi * np.arange(cfg.days) / 7.0 + 0.7
        )
        return raw / raw.mean()

    def _interaction_quotas(
        self, customers: list[_Customer], segment_of: dict[str, str]
    ) -> None:
        """Plant clicks/ATCs/buys on quota-chosen hits so measured rates
        land on the configured targets.

        Click quotas are drawn per day so both A/A segments share the same
        day-over-day CTR swing; ATC and buy quotas are plan-global."""
        cfg = self.cfg
        rng = self._rng(7)
        by_customer = {c.key: c for c in customers}
        pool = [h for h in self.hits if h.in_quota_pool and h.clickable]
        multipliers = self._day_multipliers()
        scaled = cfg.aa_ctr_scale_a2 != 1.0 and bool(segment_of)
        if cfg.personalization_ramp > 0:
            self._quota_with_ramp(rng, pool, by_customer, multipliers)
            return

        if scaled:
            pools = {
                "A1": [h for h in pool if segment_of.get(h.cust) == "A1"],
                "A2": [h for h in pool if segment_of.get(h.cust) == "A2"],
            }
            plans = [
                (pools["A1"], 1.0),
                (pools["A2"], cfg.aa_ctr_scale_a2),
            ]
        else:
            plans = [(pool, 1.0)]

        for hits, scale in plans:
            n = len(hits)
            by_day: dict[int, list[_HitStub]] = {}
            for stub in hits:
                by_day.setdefault(stub.day, []).append(stub)
            clicked: list[_HitStub] = []
            for day in sorted(by_day):
                day_hits = by_day[day]
                m = multipliers[day % len(multipliers)]
                n_click = round(cfg.base_ctr * m * scale * len(day_hits))
                order = rng.permutation(len(day_hits))
                clicked.extend(day_hits[i] for i in order[: min(n_click, len(day_hits))])
            n_atc = round(cfg.base_atctr * scale * n)
            n_buy = round(cfg.base_btr * scale * n)
            self._plant_chains(rng, clicked, n_atc, n_buy, by_customer)

    def _quota_with_ramp(self, rng, pool, by_customer, multipliers) -> None:
        """Sequential per-hit draws with CTR suppressed for early clicks."""
        cfg = self.cfg
        clicks_so_far: dict[str, int] = {}
        clicked: list[_HitStub] = []
        for stub in sorted(pool, key=lambda h: (h.cust, h.timestamp, h.event_id)):
            done = clicks_so_far.get(stub.cust, 0)
            m = multipliers[stub.day % len(multipliers)]
            p = cfg.base_ctr * m * (
                cfg.ramp_ctr_scale if done < cfg.personalization_ramp else 1.0
            )
            if rng.random() < p:
                clicks_so_far[stub.cust] = done + 1
                clicked.append(stub)
        n = len(pool)
        self._plant_chains(
            rng,
            clicked,
            round(cfg.base_atctr * n),
            round(cfg.base_btr * n),
            by_customer,
        )

    def _plant_chains(self, rng, clicked, n_atc: int, n_buy: int, by_customer) -> None:
        """Emit a CLICK on every chosen hit, then ATC/BUY chains on subsets."""
        cfg = self.cfg
        atc_taken: set[tuple[str, str, int]] = set()
        click_info: list[tuple[_HitStub, str, int]] = []
        for stub in clicked:
            cust = by_customer[stub.cust]
            crng = self._rng(8, int(stub.event_id[1:]))
            product = str(crng.choice(stub.clickable))
            # people click within seconds of seeing a widget; staying well
            # inside the 5-minute window also keeps attribution unambiguous
            lag = int(crng.integers(5_000, 45_000))
            ts = stub.timestamp + lag
            self._emit(
                event_type=EventType.CLICK,
                timestamp_utc=ts,
                page_type=PageType.PDP,
                cookie_id=cust.cookies[0],
                user_id=cust.user_id,
                product_id=product,
                user_agent=str(crng.choice(_HUMAN_UAS)),
                ip=f"192.0.2.{cust.index % 250 + 1}",
            )
            click_info.append((stub, product, ts))

        order = rng.permutation(len(click_info))
        chains: list[tuple[_HitStub, str, int]] = []
        for i in order:
            if len(chains) >= n_atc:
                break
            stub, product, click_ts = click_info[i]
            key = (stub.cust, product, stub.day)
            if key in atc_taken:
                continue  # session dedup would collapse a second ATC/BUY
            atc_taken.add(key)
            chains.append(click_info[i])

        buy_rows_per_day: dict[tuple[str, int], int] = {}
        for chain_idx, (stub, product, click_ts) in enumerate(chains):
            cust = by_customer[stub.cust]
            crng = self._rng(9, int(stub.event_id[1:]))
            price = self._price(crng)
            atc_ts = click_ts + int(crng.integers(5_000, 60_000))
            self._emit(
                event_type=EventType.ATC,
                timestamp_utc=atc_ts,
                page_type=PageType.PDP,
                cookie_id=cust.cookies[0],
                user_id=cust.user_id,
                product_id=product,
                unit_price=price,
                user_agent=str(crng.choice(_HUMAN_UAS)),
                ip=f"192.0.2.{cust.index % 250 + 1}",
            )
            if chain_idx >= n_buy:
                continue
            members = []
            if product in self.combos:
                members = sorted(
                    sku for sku, combo in self.combo_members.items() if combo == product
                )
            day_key = (stub.cust, stub.day)
            # an exploded combo counts one BUY row per SKU; cap the rows so
            # ordinary customers stay far below the reseller threshold
            rows = len(members) or 1
            if buy_rows_per_day.get(day_key, 0) + rows > 3:
                continue
            buy_rows_per_day[day_key] = buy_rows_per_day.get(day_key, 0) + rows
            buy_ts = atc_ts + int(crng.integers(60_000, 4 * 3_600_000))
            if members:
                for si, sku in enumerate(members):
                    self._emit(
                        event_type=EventType.BUY,
                        timestamp_utc=buy_ts + si * 3_000,
                        page_type=PageType.CART,
                        cookie_id=cust.cookies[0],
                        user_id=cust.user_id,
                        product_id=sku,
                        unit_price=Price(
                            amount=round(price.amount / len(members), 2),
                            currency=price.currency,
                        ),
                        user_agent=str(crng.choice(_HUMAN_UAS)),
                        ip=f"192.0.2.{cust.index % 250 + 1}",
                    )
            else:
                self._emit(
                    event_type=EventType.BUY,
                    timestamp_utc=buy_ts,
                    page_type=PageType.CART,
                    cookie_id=cust.cookies[0],
                    user_id=cust.user_id,
                    product_id=product,
                    unit_price=price,
                    user_agent=str(crng.choice(_HUMAN_UAS)),
                    ip=f"192.0.2.{cust.index % 250 + 1}",
                )

    # -- pathology post-passes ------------------------------------------------

    def _shared_cookies(
        self, customers: list[_Customer]
    ) -> tuple[dict[str, tuple[str, ...]], tuple[str, ...], frozenset[str]]:
        """Plant cookies shared by two logged-in customers, plus anonymous
        rows on those cookies that identity resolution must eliminate."""
        cfg = self.cfg
        rng = self._rng(11)
        logged_in = [c for c in customers if c.user_id and c.label == LABEL_CLEAN]
        ambiguous: list[str] = []
        anon_ids: set[str] = set()
        extra_map: dict[str, set[str]] = {}
        n_pairs = min(cfg.shared_cookie_pairs, len(logged_in) // 2)
        for pair_idx in range(n_pairs):
            a, b = logged_in[2 * pair_idx], logged_in[2 * pair_idx + 1]
            shared = f"cs{pair_idx:03d}"
            ambiguous.append(shared)
            extra_map[shared] = {a.user_id, b.user_id}
            day = int(rng.integers(0, cfg.days))
            ts = self._day_start(day) + int(rng.integers(9, 21)) * 3_600_000
            for owner in (a, b):
                # the shared device seen logged-in: links the cookie to both users
                self._emit(
                    event_type=EventType.CLICK,
                    timestamp_utc=ts,
                    page_type=PageType.PDP,
                    cookie_id=shared,
                    user_id=owner.user_id,
                    product_id=str(rng.choice(self.products)),
                    user_agent=str(rng.choice(_HUMAN_UAS)),
                )
                ts += int(rng.integers(60_000, 600_000))
            for _ in range(2):
                # anonymous rows on a multi-user cookie: unresolvable
                ev = self._emit(
                    event_type=EventType.CLICK,
                    timestamp_utc=ts,
                    page_type=PageType.PDP,
                    cookie_id=shared,
                    product_id=str(rng.choice(self.products)),
                    user_agent=str(rng.choice(_HUMAN_UAS)),
                )
                anon_ids.add(ev.event_id)
                ts += int(rng.integers(60_000, 600_000))
        return (
            {k: tuple(sorted(v)) for k, v in extra_map.items()},
            tuple(ambiguous),
            frozenset(anon_ids),
        )

    def _glitch_duplicates(self) -> tuple[frozenset[str], dict[str, str]]:
        cfg = self.cfg
        if cfg.duplicate_glitch_prob <= 0:
            return frozenset(), {}
        rng = self._rng(13)
        dup_source: dict[str, str] = {}
        duplicates: list[Event] = []
        for ev in list(self.events):
            if ev.event_type == EventType.HIT:
                continue
            if rng.random() < cfg.duplicate_glitch_prob:
                dup = Event(
                    event_id=self._next_id(),
                    event_type=ev.event_type,
                    timestamp_utc=ev.timestamp_utc + int(rng.integers(100, 1_500)),
                    page_type=ev.page_type,
                    cookie_id=ev.cookie_id,
                    user_id=ev.user_id,
                    product_id=ev.product_id,
                    page_number=ev.page_number,
                    widget_id=ev.widget_id,
                    quantity=ev.quantity,
                    unit_price=ev.unit_price,
                    user_agent=ev.user_agent,
                    ip=ev.ip,
                    segment_flag=ev.segment_flag,
                )
                duplicates.append(dup)
                dup_source[dup.event_id] = ev.event_id
        self.events.extend(duplicates)
        return frozenset(dup_source), dup_source

    # -- assembly ---------------------------------------------------------------

    def run(self) -> tuple[EventLog, GroundTruth]:
        cfg = self.cfg
        customers = self._plan_customers()

        segment_of: dict[str, str] = {}
        if cfg.aa_seed is not None:
            segmap = assign_segments([c.key for c in customers], cfg.aa_seed)
            segment_of = {k: s.value for k, s in segmap.assignments.items()}

        bot_kind = 0
        for cust in customers:
            if cust.label == LABEL_CLEAN:
                self._gen_clean(cust)
            elif cust.label == LABEL_BOUNCE:
                self._gen_bounce(cust)
            elif cust.label == LABEL_BOT:
                self._gen_bot(cust, bot_kind % 3)
                bot_kind += 1
            elif cust.label == LABEL_B2B:
                self._gen_b2b(cust)
            elif cust.label == LABEL_OUTLIER:
                self._gen_outlier(cust)

        self._interaction_quotas(customers, segment_of)
        extra_map, ambiguous, anon_ids = self._shared_cookies(customers)

        if segment_of:
            owner_of_cookie = {c: cust for cust in customers for c in cust.cookies}
            stamped = []
            for ev in self.events:
                key = ev.user_id or (
                    owner_of_cookie[ev.cookie_id].key
                    if ev.cookie_id in owner_of_cookie
                    else None
                )
                seg = segment_of.get(key)
                stamped.append(
                    replace(ev, segment_flag=Segment(seg)) if seg else ev
                )
            self.events = stamped

        glitch_ids, dup_source = self._glitch_duplicates()
        # a glitch copy of an unresolvable row is unresolvable too
        anon_ids = anon_ids | {
            dup for dup, src in dup_source.items() if src in anon_ids
        }

        cookie_map: dict[str, set[str]] = {}
        for cust in customers:
            if cust.user_id:
                for cookie in cust.cookies:
                    cookie_map.setdefault(cookie, set()).add(cust.user_id)
        for cookie, users in extra_map.items():
            cookie_map.setdefault(cookie, set()).update(users)

        truth = GroundTruth(
            labels={c.key: c.label for c in customers},
            cookie_user_map={k: tuple(sorted(v)) for k, v in sorted(cookie_map.items())},
            ambiguous_cookies=ambiguous,
            ambiguous_event_ids=anon_ids,
            glitch_duplicate_ids=glitch_ids,
            combo_members=dict(self.combo_members),
            segment_of=segment_of,
        )
        log = EventLog(
            self.events,
            LogMetadata(source=f"synth(seed={cfg.seed})", base_currency=cfg.currencies[0]),
        )
        return log, truth


def generate(cfg: SynthConfig) -> tuple[EventLog, GroundTruth]:
    """Generate a labeled synthetic clickstream; same seed, same bytes."""
    return _Generator(cfg).run()


__all__ = [
    "SynthConfig",
    "BotBehavior",
    "OutlierSpec",
    "GroundTruth",
    "InfeasibleConfig",
    "generate",
    "BOT_SIGNATURE_UA",
    "BOT_SIGNATURE_SUBNET",
    "LABEL_CLEAN",
    "LABEL_BOUNCE",
    "LABEL_BOT",
    "LABEL_B2B",
    "LABEL_OUTLIER",
]
