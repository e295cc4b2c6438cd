"""Customer-behavior filters: B2B buyers, bounces, bots, new-customer clicks.

Each detector is a pure function from a resolved log to a
:class:`FlagSet`; :func:`apply_flags` performs the removals (or, for the
new-customer rule, marks clicks as excluded from metric input without
deleting them).
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from fnmatch import fnmatch
from statistics import median as stat_median

import numpy as np

from .events import CleaningReport, EventLog, EventType, PageType, day_index
from .metrics import AttributionWindows, PlpGate, attribute

RATE_WINDOW_MS = 10_000  # sustained-rate check window


class NoPurchases(ValueError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class B2BConfig:
    """Reseller heuristic: flag customers buying m times the median per day."""

    m: float = 5.0

    def __post_init__(self):
        if self.m <= 1:
            raise ValueError("multiplier m must exceed 1")


@dataclass(frozen=True)
class BotConfig:
    signature_user_agents: tuple[str, ...] = ()
    signature_ips: tuple[str, ...] = ()
    rate_threshold: float = 1.0  # click+ATC events per second, sustained
    regularity_min_events: int = 20
    regularity_cv_max: float = 0.1

    def __post_init__(self):
        if self.rate_threshold <= 0:
            raise ValueError("rate_threshold must be positive")
        if self.regularity_min_events < 3:
            raise ValueError("regularity_min_events must be >= 3")
        object.__setattr__(
            self, "signature_user_agents", tuple(self.signature_user_agents)
        )
        object.__setattr__(self, "signature_ips", tuple(self.signature_ips))

    @classmethod
    def from_dict(cls, data: dict) -> "BotConfig":
        return cls(
            signature_user_agents=tuple(data.get("user_agents", ())),
            signature_ips=tuple(data.get("ips", ())),
            rate_threshold=data.get("rate_threshold", 1.0),
            regularity_min_events=data.get("regularity_min_events", 20),
            regularity_cv_max=data.get("regularity_cv_max", 0.1),
        )


@dataclass(frozen=True)
class Evidence:
    reason: str
    value: float | str

    def to_dict(self) -> dict:
        return {"reason": self.reason, "value": self.value}


@dataclass
class FlagSet:
    """One rule's flagged customers, each with the evidence that tripped it."""

    rule: str
    flagged: dict[str, Evidence] = field(default_factory=dict)
    excluded_event_ids: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def customers(self) -> set[str]:
        return set(self.flagged)

    def __len__(self) -> int:
        return len(self.flagged)

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "flagged": {c: e.to_dict() for c, e in sorted(self.flagged.items())},
        }


def buys_per_day(log: EventLog) -> dict[tuple[str, int], int]:
    """Quantity-weighted BUY count per (customer, UTC day)."""
    counts: dict[tuple[str, int], int] = {}
    for ev in log:
        if ev.event_type != EventType.BUY:
            continue
        key = ev.customer_key()
        if key is None:
            continue
        day = day_index(ev.timestamp_utc)
        counts[(key, day)] = counts.get((key, day), 0) + ev.quantity
    return counts


def detect_b2b(log: EventLog, cfg: B2BConfig | None = None) -> FlagSet:
    """Flag customers whose daily purchases exceed m times the median buys/day."""
    cfg = cfg or B2BConfig()
    counts = buys_per_day(log)
    if not counts:
        raise NoPurchases("log contains no BUY events")
    threshold = cfg.m * stat_median(counts.values())
    flags = FlagSet(rule="b2b")
    for (customer, day), count in sorted(counts.items()):
        if count > threshold and customer not in flags.flagged:
            flags.flagged[customer] = Evidence(
                reason=f"bought {count} items in one day (> {threshold:g})",
                value=count,
            )
    return flags


def detect_bounces(log: EventLog) -> FlagSet:
    """Flag customers whose entire history is one home/PLP hit and nothing else."""
    flags = FlagSet(rule="bounce")
    for customer, events in sorted(log.by_customer().items()):
        if len(events) != 1:
            continue
        only = events[0]
        if only.event_type == EventType.HIT and only.page_type in (
            PageType.HOME,
            PageType.PLP,
        ):
            flags.flagged[customer] = Evidence(
                reason=f"single {only.page_type.value} hit, no interactions",
                value=only.event_id,
            )
    return flags


def _ua_matches(user_agent: str, patterns: tuple[str, ...]) -> str | None:
    ua = user_agent.lower()
    for pattern in patterns:
        if fnmatch(ua, pattern.lower()):
            return pattern
    return None


def _ip_matches(ip: str, entries: tuple[str, ...]) -> str | None:
    try:
        addr = ipaddress.ip_address(ip)
    except ValueError:
        return None
    for entry in entries:
        try:
            if "/" in entry:
                if addr in ipaddress.ip_network(entry, strict=False):
                    return entry
            elif addr == ipaddress.ip_address(entry):
                return entry
        except ValueError:
            continue
    return None


def _max_window_count(timestamps: list[int], window_ms: int) -> int:
    """Largest number of events inside any half-open window of window_ms."""
    best, left = 0, 0
    for right, ts in enumerate(timestamps):
        while ts - timestamps[left] >= window_ms:
            left += 1
        best = max(best, right - left + 1)
    return best


def _min_gap_cv(timestamps: list[int], window_events: int) -> float | None:
    """Lowest coefficient of variation of inter-event gaps over any run
    of window_events consecutive events. None when too few events."""
    if len(timestamps) < window_events:
        return None
    gaps = np.diff(np.asarray(timestamps, dtype=np.float64))
    span = window_events - 1
    best = None
    for start in range(0, len(gaps) - span + 1):
        window = gaps[start : start + span]
        mean = window.mean()
        if mean == 0:
            return 0.0  # simultaneous events: perfectly regular
        cv = float(window.std() / mean)
        if best is None or cv < best:
            best = cv
    return best


def detect_bots(log: EventLog, cfg: BotConfig | None = None) -> FlagSet:
    """Flag bot-like customers via signatures or anomalous click activity.

    Four triggers, any one suffices: a known user-agent signature, a known
    IP/CIDR signature, a sustained click+ATC rate at or above the
    threshold over a 10-second window, or near-constant inter-click gaps
    (metronome behavior) over a long enough run.
    """
    cfg = cfg or BotConfig()
    flags = FlagSet(rule="bots")
    window_events = int(np.ceil(cfg.rate_threshold * RATE_WINDOW_MS / 1000))

    for customer, events in sorted(log.by_customer().items()):
        actions = [
            e for e in events if e.event_type in (EventType.CLICK, EventType.ATC)
        ]
        evidence: Evidence | None = None

        for ev in events:
            if ev.user_agent and cfg.signature_user_agents:
                pattern = _ua_matches(ev.user_agent, cfg.signature_user_agents)
                if pattern:
                    evidence = Evidence("user_agent signature", pattern)
                    break
            if ev.ip and cfg.signature_ips:
                entry = _ip_matches(ev.ip, cfg.signature_ips)
                if entry:
                    evidence = Evidence("ip signature", entry)
                    break

        if evidence is None and actions:
            timestamps = [e.timestamp_utc for e in actions]
            peak = _max_window_count(timestamps, RATE_WINDOW_MS)
            if peak >= window_events:
                evidence = Evidence(
                    f"{peak} clicks/ATCs within {RATE_WINDOW_MS // 1000}s",
                    peak / (RATE_WINDOW_MS / 1000),
                )
            else:
                cv = _min_gap_cv(timestamps, cfg.regularity_min_events)
                if cv is not None and cv < cfg.regularity_cv_max:
                    evidence = Evidence(
                        f"inter-click gap CV {cv:.4f} over "
                        f"{cfg.regularity_min_events} consecutive events",
                        cv,
                    )

        if evidence is not None:
            flags.flagged[customer] = evidence
    return flags


def new_customer_cutoff(
    log: EventLog,
    ratio: float = 0.7,
    x_max: int = 10,
    *,
    windows: AttributionWindows | None = None,
    gate: PlpGate | None = None,
    min_customers: int = 20,
) -> tuple[int, list[tuple[int, float | None, float | None]]]:
    """Find the click ordinal below which CTR is drastically lower.

    Hits are staged by how many attributed clicks the customer had already
    made. x grows while every ordinal so far converts drastically worse
    than the rest of the data (marginal CTR at ordinal j below
    ratio * CTR above j); the first ordinal that converts normally stops
    the growth. Returns that largest x (0 when even the first click
    converts normally) plus a table of cumulative early/late CTRs per x.

    The cumulative comparison alone cannot locate the ramp length: early
    ordinals keep dragging the cumulative average down well past the point
    where personalization has caught up.
    """
    windows = windows or AttributionWindows()
    gate = gate or PlpGate()
    attr = attribute(log, windows, gate)

    click_times: dict[str, list[int]] = {}
    for pair in attr.pairs:
        if pair.interaction_type != EventType.CLICK:
            continue
        ev = log.get(pair.interaction_id)
        key = ev.customer_key()
        click_times.setdefault(key, []).append(ev.timestamp_utc)
    for times in click_times.values():
        times.sort()

    experienced = sum(1 for t in click_times.values() if len(t) >= x_max)
    if experienced < min_customers:
        raise InsufficientData(
            f"only {experienced} customers have >= {x_max} attributed clicks "
            f"(need {min_customers})"
        )

    # Per eligible hit: how many attributed clicks the customer already had.
    hit_states: list[int] = []
    for hit_id in attr.eligible_hit_ids:
        hit = log.get(hit_id)
        key = hit.customer_key()
        times = click_times.get(key, ())
        state = int(np.searchsorted(times, hit.timestamp_utc, side="left")) if times else 0
        hit_states.append(state)
    hit_states_arr = np.asarray(hit_states, dtype=np.int64)
    click_ordinal_counts = np.asarray(
        sorted(len(t) for t in click_times.values()), dtype=np.int64
    )

    table: list[tuple[int, float | None, float | None]] = []
    best = 0
    prefix_holds = True
    total_clicks = int(click_ordinal_counts.sum()) if click_ordinal_counts.size else 0
    for x in range(1, x_max + 1):
        early_hits = int((hit_states_arr < x).sum())
        late_hits = len(hit_states_arr) - early_hits
        early_clicks = int(np.minimum(click_ordinal_counts, x).sum())
        late_clicks = total_clicks - early_clicks
        ctr_early = early_clicks / early_hits if early_hits else None
        ctr_late = late_clicks / late_hits if late_hits else None
        table.append((x, ctr_early, ctr_late))

        at_hits = int((hit_states_arr == x - 1).sum())
        at_clicks = int((click_ordinal_counts >= x).sum())
        if prefix_holds and at_hits > 0 and late_hits > 0 and ctr_late and ctr_late > 0:
            if at_clicks / at_hits < ratio * ctr_late:
                best = x
            else:
                prefix_holds = False
        else:
            prefix_holds = False
    return best, table


def new_customer_flags(
    log: EventLog,
    x: int,
    *,
    windows: AttributionWindows | None = None,
    gate: PlpGate | None = None,
) -> FlagSet:
    """Mark each customer's first x attributed clicks for metric exclusion."""
    flags = FlagSet(rule="new_customer")
    if x <= 0:
        return flags
    windows = windows or AttributionWindows()
    gate = gate or PlpGate()
    attr = attribute(log, windows, gate)

    per_customer: dict[str, list[tuple[int, str, str]]] = {}
    for pair in attr.pairs:
        if pair.interaction_type != EventType.CLICK:
            continue
        ev = log.get(pair.interaction_id)
        key = ev.customer_key()
        per_customer.setdefault(key, []).append((ev.timestamp_utc, ev.event_id, key))

    for customer, clicks in sorted(per_customer.items()):
        clicks.sort()
        first = tuple(event_id for _, event_id, _ in clicks[:x])
        if first:
            flags.flagged[customer] = Evidence(
                reason=f"first {len(first)} attributed clicks excluded from CTR",
                value=len(first),
            )
            flags.excluded_event_ids[customer] = first
    return flags


def apply_flags(
    log: EventLog,
    flags: list[FlagSet],
    policy: dict[str, str] | None = None,
) -> tuple[EventLog, CleaningReport]:
    """Apply detector flags to the log.

    Default policy: ``bounce`` removes the flagged customers' hits, ``b2b``
    and ``bots`` remove every event of flagged customers, and
    ``new_customer`` only marks clicks as excluded from metric input.
    """
    actions = {
        "bounce": "remove_hits",
        "b2b": "remove_customer",
        "bots": "remove_customer",
        "new_customer": "exclude_clicks",
    }
    if policy:
        actions.update(policy)

    report = CleaningReport()
    doomed: set[str] = set()
    excluded: set[str] = set()

    for flag_set in flags:
        action = actions.get(flag_set.rule, "remove_customer")
        customers = flag_set.customers()
        if action == "exclude_clicks":
            ids = {eid for ids in flag_set.excluded_event_ids.values() for eid in ids}
            excluded |= ids
            report.add(
                flag_set.rule,
                len(ids),
                {"action": action},
                customers=len(customers),
                removed=False,
            )
            continue
        removed = 0
        hits = 0
        for ev in log:
            key = ev.customer_key()
            if key in customers and ev.event_id not in doomed:
                if action == "remove_hits" and ev.event_type != EventType.HIT:
                    continue
                doomed.add(ev.event_id)
                removed += 1
                if ev.event_type == EventType.HIT:
                    hits += 1
        report.add(
            flag_set.rule,
            removed,
            {"action": action},
            customers=len(customers),
            hits=hits,
        )

    out = log.filter(lambda e: e.event_id not in doomed)
    if excluded:
        out = out.with_exclusions(excluded)
    return out, report


__all__ = [
    "B2BConfig",
    "BotConfig",
    "Evidence",
    "FlagSet",
    "NoPurchases",
    "InsufficientData",
    "buys_per_day",
    "detect_b2b",
    "detect_bounces",
    "detect_bots",
    "new_customer_cutoff",
    "new_customer_flags",
    "apply_flags",
    "RATE_WINDOW_MS",
]
