"""Unique-visitor resolution: assign every event a customer identifier.

The mapping is timeless: a cookie observed with exactly one login user
anywhere in the data backfills that user onto all of the cookie's
anonymous rows, before and after the login moment. Cookies observed with
two or more users are ambiguous, and their anonymous rows are eliminated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .events import CleaningReport, Event, EventLog, replace


@dataclass(frozen=True)
class IdentityMap:
    """cookie_id -> set of user_ids observed together anywhere in the log."""

    cookie_to_users: dict[str, frozenset[str]]

    def users_for(self, cookie_id: str) -> frozenset[str]:
        return self.cookie_to_users.get(cookie_id, frozenset())

    def is_ambiguous(self, cookie_id: str) -> bool:
        return len(self.users_for(cookie_id)) >= 2

    def merge(self, other: "IdentityMap") -> "IdentityMap":
        merged: dict[str, frozenset[str]] = dict(self.cookie_to_users)
        for cookie, users in other.cookie_to_users.items():
            merged[cookie] = merged.get(cookie, frozenset()) | users
        return IdentityMap(merged)

    def to_dict(self) -> dict:
        return {c: sorted(u) for c, u in sorted(self.cookie_to_users.items())}


@dataclass
class IdentityReport:
    eliminated_no_ids: int = 0
    eliminated_ambiguous: int = 0
    backfilled_from_map: int = 0
    cookie_only: int = 0
    assigned_from_user: int = 0
    multi_user_cookie_fraction: float = 0.0
    eliminated_event_ids: set[str] = field(default_factory=set)

    def to_dict(self) -> dict:
        return {
            "eliminated_no_ids": self.eliminated_no_ids,
            "eliminated_ambiguous": self.eliminated_ambiguous,
            "backfilled_from_map": self.backfilled_from_map,
            "cookie_only": self.cookie_only,
            "assigned_from_user": self.assigned_from_user,
            "multi_user_cookie_fraction": self.multi_user_cookie_fraction,
        }


def build_identity_map(log: EventLog) -> IdentityMap:
    """Collect every (cookie_id, user_id) co-occurrence in the log."""
    pairs: dict[str, set[str]] = {}
    for ev in log:
        if ev.cookie_id and ev.user_id:
            pairs.setdefault(ev.cookie_id, set()).add(ev.user_id)
    return IdentityMap({c: frozenset(u) for c, u in pairs.items()})


def resolve(log: EventLog, identity_map: IdentityMap | None = None) -> tuple[EventLog, IdentityReport]:
    """Stamp a cust_id on every event, eliminating unresolvable rows.

    Three steps: drop rows with neither identifier; drop anonymous rows
    whose cookie maps to several users; then cust_id := user_id when
    present, else the unique mapped user, else the cookie itself.
    """
    imap = identity_map if identity_map is not None else build_identity_map(log)
    report = IdentityReport()
    resolved: list[Event] = []

    for ev in log:
        if not ev.cookie_id and not ev.user_id:
            report.eliminated_no_ids += 1
            report.eliminated_event_ids.add(ev.event_id)
            continue
        if ev.user_id:
            report.assigned_from_user += 1
            resolved.append(replace(ev, cust_id=ev.user_id))
            continue
        users = imap.users_for(ev.cookie_id)
        if len(users) >= 2:
            report.eliminated_ambiguous += 1
            report.eliminated_event_ids.add(ev.event_id)
            continue
        if len(users) == 1:
            report.backfilled_from_map += 1
            resolved.append(replace(ev, cust_id=next(iter(users))))
        else:
            report.cookie_only += 1
            resolved.append(replace(ev, cust_id=ev.cookie_id))

    all_cookies = {ev.cookie_id for ev in log if ev.cookie_id}
    if all_cookies:
        ambiguous = sum(1 for c in all_cookies if imap.is_ambiguous(c))
        report.multi_user_cookie_fraction = ambiguous / len(all_cookies)

    out = log.with_events(resolved)
    return out, report


def resolution_cleaning_report(report: IdentityReport) -> CleaningReport:
    """Repackage eliminations as a CleaningReport section for the pipeline."""
    cleaning = CleaningReport()
    cleaning.add("identity_no_ids", report.eliminated_no_ids)
    cleaning.add(
        "identity_ambiguous_cookie",
        report.eliminated_ambiguous,
        {"multi_user_cookie_fraction": report.multi_user_cookie_fraction},
    )
    return cleaning


__all__ = [
    "IdentityMap",
    "IdentityReport",
    "build_identity_map",
    "resolve",
    "resolution_cleaning_report",
]
