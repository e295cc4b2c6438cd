#!/usr/bin/env python3
"""Walk a deliberately dirty clickstream through every cleaning stage.

The synthetic generator plants bounces, bots, resellers, duplicate
records, and shared cookies, and tells us exactly what it planted, so we
can watch each stage remove what it is supposed to remove.
"""

from clickprep.behavior import BotConfig, apply_flags, detect_b2b, detect_bots, detect_bounces
from clickprep.identity import resolve
from clickprep.ingest import deduplicate
from clickprep.journey import JourneyVerdict, audit_journeys
from clickprep.synth import OutlierSpec, SynthConfig, generate

cfg = SynthConfig(
    customers=600,
    days=7,
    seed=2024,
    bounce_fraction=0.35,
    bot_count=15,
    b2b_count=6,
    outlier_customers=OutlierSpec(count=4, view_magnitude=250),
    duplicate_glitch_prob=0.015,
    multi_device_fraction=0.12,
    shared_cookie_pairs=4,
)
log, truth = generate(cfg)
print(f"raw log: {len(log)} events from {cfg.customers} customers over {cfg.days} days")
print(f"planted: {len(truth.customers_with('BOUNCE'))} bounces, "
      f"{len(truth.customers_with('BOT'))} bots, "
      f"{len(truth.customers_with('B2B'))} resellers, "
      f"{len(truth.glitch_duplicate_ids)} duplicate records")

# 1. duplicates: warehousing glitches and same-session re-buys
log, dedup_report = deduplicate(log)
print(f"\n[dedup]    removed {dedup_report.records_removed} duplicates "
      f"({len(truth.glitch_duplicate_ids)} were planted glitches)")

# 2. identity: one customer id per event, ambiguous shared cookies dropped
log, id_report = resolve(log)
print(f"[identity] backfilled {id_report.backfilled_from_map} anonymous rows, "
      f"eliminated {id_report.eliminated_ambiguous} rows on shared cookies "
      f"({id_report.multi_user_cookie_fraction:.2%} of cookies are multi-user)")

# 3. behavior: bounces, bots, resellers
flags = [
    detect_bounces(log),
    detect_bots(log, BotConfig(signature_user_agents=("*dataspider*",))),
    detect_b2b(log),
]
for f in flags:
    print(f"[{f.rule:8s}] flagged {len(f)} customers")
log, behavior_report = apply_flags(log, flags)
print(f"[behavior] removed {behavior_report.records_removed} events "
      f"({behavior_report.hits_removed} hits)")

# 4. journey sanity: the ideal click -> add-to-cart -> buy order
audit = audit_journeys(log)
print(f"[journey]  verdict {audit.verdict.value}, "
      f"violation rate {audit.violation_rate:.2%}")
assert audit.verdict == JourneyVerdict.CLEAN

print(f"\ncleaned log: {len(log)} events")
