"""Journey-integrity audit and combo/bundle purchase handling.

A shopper's ideal path per product is click, then add-to-cart, then buy.
Interactions arriving out of that order point at data-integration faults
(unless the site has a quick-buy flow); a high violation rate is an alarm
to investigate rather than a license to delete.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum

from .events import CleaningReport, Event, EventLog, EventType, Price, replace
from .ingest import DEFAULT_SESSION_GAP_MS, assign_sessions


class AlarmRefusal(RuntimeError):
    """Refused to remove violators while the integration alarm is raised."""


class NoHits(ValueError):
    pass


class JourneyVerdict(str, Enum):
    CLEAN = "CLEAN"
    REMOVE_VIOLATORS = "REMOVE_VIOLATORS"
    INTEGRATION_ALARM = "INTEGRATION_ALARM"


@dataclass(frozen=True)
class JourneyPolicy:
    quick_buy_enabled: bool = False
    violation_rate_alarm: float = 0.05

    def __post_init__(self):
        if not 0 < self.violation_rate_alarm < 1:
            raise ValueError("alarm ratio must lie in (0, 1)")


@dataclass(frozen=True)
class Violation:
    cust_id: str
    product_id: str
    missing_stage: str

    def to_dict(self) -> dict:
        return {
            "cust_id": self.cust_id,
            "product_id": self.product_id,
            "missing_stage": self.missing_stage,
        }


@dataclass
class JourneyReport:
    violations: list[Violation]
    violation_rate: float
    verdict: JourneyVerdict
    pairs_checked: int
    by_user_agent: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "violation_rate": self.violation_rate,
            "pairs_checked": self.pairs_checked,
            "violations": [v.to_dict() for v in self.violations],
            "by_user_agent": dict(sorted(self.by_user_agent.items())),
        }


@dataclass(frozen=True)
class ComboMap:
    """Individual SKU -> combo identifier (each SKU in at most one combo)."""

    sku_to_combo: dict[str, str]

    def combo_for(self, sku: str) -> str | None:
        return self.sku_to_combo.get(sku)

    def __len__(self) -> int:
        return len(self.sku_to_combo)

    @classmethod
    def from_csv(cls, source) -> "ComboMap":
        """Load from CSV with header ``sku,combo_id``."""
        if isinstance(source, (str, bytes)) and "\n" not in str(source):
            with open(source, encoding="utf-8") as fh:
                return cls._parse(fh)
        return cls._parse(io.StringIO(source))

    @classmethod
    def _parse(cls, fh) -> "ComboMap":
        reader = csv.DictReader(fh)
        if not reader.fieldnames or {"sku", "combo_id"} - set(reader.fieldnames):
            raise ValueError("combo CSV needs a 'sku,combo_id' header")
        mapping: dict[str, str] = {}
        for row in reader:
            sku, combo = row["sku"].strip(), row["combo_id"].strip()
            if not sku or not combo:
                continue
            if sku in mapping and mapping[sku] != combo:
                raise ValueError(f"SKU {sku!r} mapped to multiple combos")
            mapping[sku] = combo
        return cls(mapping)


def audit_journeys(log: EventLog, policy: JourneyPolicy | None = None) -> JourneyReport:
    """Check every (customer, product) history for out-of-order interactions.

    An ATC with no earlier click, or a BUY with neither an earlier click
    nor an earlier ATC, is a violation; with quick-buy enabled those
    bypasses are legitimate and nothing is flagged. Lookback spans the
    whole log, not one session.
    """
    policy = policy or JourneyPolicy()
    violations: list[Violation] = []
    by_user_agent: dict[str, int] = {}

    pairs: dict[tuple[str, str], list[Event]] = {}
    for ev in log:
        if not ev.is_interaction:
            continue
        key = ev.customer_key()
        if key is None or ev.product_id is None:
            continue
        pairs.setdefault((key, ev.product_id), []).append(ev)

    checked = pairs if not policy.quick_buy_enabled else {}
    for (cust, product), events in sorted(checked.items()):
        seen_click = seen_atc = False
        for ev in events:  # already time-ordered
            missing = None
            if ev.event_type == EventType.CLICK:
                seen_click = True
            elif ev.event_type == EventType.ATC:
                if not seen_click:
                    missing = "CLICK"
                seen_atc = True
            elif ev.event_type == EventType.BUY:
                if not seen_click and not seen_atc:
                    missing = "CLICK/ATC"
            if missing is not None:
                violations.append(Violation(cust, product, missing))
                ua = ev.user_agent or "(unknown)"
                by_user_agent[ua] = by_user_agent.get(ua, 0) + 1
                break  # one violation per pair

    rate = len(violations) / len(pairs) if pairs else 0.0
    if rate >= policy.violation_rate_alarm:
        verdict = JourneyVerdict.INTEGRATION_ALARM
    elif violations:
        verdict = JourneyVerdict.REMOVE_VIOLATORS
    else:
        verdict = JourneyVerdict.CLEAN
    return JourneyReport(
        violations=violations,
        violation_rate=rate,
        verdict=verdict,
        pairs_checked=len(pairs),
        by_user_agent=by_user_agent,
    )


def remove_violators(log: EventLog, report: JourneyReport) -> tuple[EventLog, CleaningReport]:
    """Drop all interactions of each violating (customer, product) pair.

    Refuses under INTEGRATION_ALARM: when violations are a significant
    share of the data, finding the root cause beats deleting the evidence.
    """
    if report.verdict == JourneyVerdict.INTEGRATION_ALARM:
        raise AlarmRefusal(
            f"violation rate {report.violation_rate:.1%} is at or above the alarm "
            "threshold; investigate the integration instead of removing data"
        )
    cleaning = CleaningReport()
    if not report.violations:
        cleaning.add("journey_violation", 0)
        return log, cleaning

    bad_pairs = {(v.cust_id, v.product_id) for v in report.violations}

    def keep(ev: Event) -> bool:
        if not ev.is_interaction:
            return True
        return (ev.customer_key(), ev.product_id) not in bad_pairs

    removed = sum(1 for ev in log if not keep(ev))
    cleaning.add(
        "journey_violation",
        removed,
        {"pairs": len(bad_pairs)},
        customers=len({c for c, _ in bad_pairs}),
    )
    return log.filter(keep), cleaning


def expand_combos(log: EventLog, combos: ComboMap) -> EventLog:
    """Rewrite component-SKU buys to their combo and collapse per session.

    Clicks and ATCs already record the combo identifier on these sites;
    only purchases explode into component SKUs. After rewriting, multiple
    buys of one combo by one customer within a session merge into a
    single BUY whose price is the summed component revenue.
    """
    sessions = assign_sessions(log, DEFAULT_SESSION_GAP_MS)
    kept: list[Event] = []
    merged: dict[tuple[str, int, str], Event] = {}
    merged_order: list[tuple[str, int, str]] = []

    for ev in log:
        if ev.event_type != EventType.BUY or combos.combo_for(ev.product_id or "") is None:
            kept.append(ev)
            continue
        combo_id = combos.combo_for(ev.product_id)
        cust, session = sessions[ev.event_id]
        key = (cust, session, combo_id)
        if key not in merged:
            price = None
            if ev.unit_price is not None:
                price = Price(
                    amount=ev.quantity * ev.unit_price.amount,
                    currency=ev.unit_price.currency,
                )
            merged[key] = replace(ev, product_id=combo_id, quantity=1, unit_price=price)
            merged_order.append(key)
        else:
            first = merged[key]
            if (
                first.unit_price is not None
                and ev.unit_price is not None
                and first.unit_price.currency == ev.unit_price.currency
            ):
                merged[key] = replace(
                    first,
                    unit_price=Price(
                        amount=first.unit_price.amount
                        + ev.quantity * ev.unit_price.amount,
                        currency=first.unit_price.currency,
                    ),
                )

    kept.extend(merged[key] for key in merged_order)
    return log.with_events(kept)


def btr_buyer(log: EventLog) -> float:
    """Fallback buy metric when no combo map exists: unique recommended
    buyers over total hits."""
    hits = sum(1 for ev in log if ev.event_type == EventType.HIT)
    if hits == 0:
        raise NoHits("log contains no hits")
    hit_customers = {
        ev.customer_key() for ev in log if ev.event_type == EventType.HIT
    }
    buyers = {
        ev.customer_key()
        for ev in log
        if ev.event_type == EventType.BUY and ev.customer_key() in hit_customers
    }
    buyers.discard(None)
    return len(buyers) / hits


__all__ = [
    "JourneyPolicy",
    "JourneyVerdict",
    "JourneyReport",
    "Violation",
    "ComboMap",
    "AlarmRefusal",
    "NoHits",
    "audit_journeys",
    "remove_violators",
    "expand_combos",
    "btr_buyer",
]
