#!/usr/bin/env python3
"""Attribution windows, PLP gating, and the resulting metric table.

A click only credits a recommendation if the product was shown to that
customer within the last 5 minutes (30 minutes for add-to-cart, 24 hours
for purchases). PLP impressions count only on page 1 in the top slots,
because products below the fold never had a chance to be seen.
"""

from clickprep.identity import resolve
from clickprep.metrics import (
    AttributionWindows,
    PlpGate,
    attribute,
    conversion_revenue,
    flag_low_visibility,
    rates,
)
from clickprep.synth import SynthConfig, generate

log, _ = generate(SynthConfig(customers=800, days=7, seed=11, combo_catalog=0))
log, _ = resolve(log)

windows = AttributionWindows()  # 5 min / 30 min / 24 h
gate = PlpGate(top_n=8, first_page_only=True)
attr = attribute(log, windows, gate)

print(f"eligible hits: {len(attr.eligible_hit_ids)}")
print(f"attributed interactions: {len(attr.pairs)}")
print(f"skipped: {attr.excluded}")

report = rates(attr)
t = report.totals
print(f"\nCTR {t.ctr:.2%}   ATC-TR {t.atc_tr:.2%}   BTR {t.btr:.2%}")
print(f"conversion revenue: {conversion_revenue(attr, log):,.2f} "
      f"{log.metadata.base_currency}")

print("\nper page/widget (aggregated over days):")
by_widget = {}
for (day, page, widget, seg), cell in report.cells.items():
    agg = by_widget.setdefault((page, widget), [0, 0])
    agg[0] += cell.hits
    agg[1] += cell.clicks
for (page, widget), (hits, clicks) in sorted(by_widget.items()):
    print(f"  {page:5s} {widget:10s} hits {hits:6d}  ctr {clicks / hits:.2%}")

low = flag_low_visibility(report, fraction=0.25)
if low:
    print("\nlow-visibility suspects (CTR far below site median):")
    for page, widget, ctr, median in low:
        print(f"  {page} / {widget}: {ctr:.2%} vs site median {median:.2%}")
else:
    print("\nno low-visibility widgets flagged")

# tightening the gate never adds eligible impressions or attributions
print()
for top_n in (12, 8, 4, 2):
    gated = attribute(log, windows, PlpGate(top_n=top_n))
    print(f"PLP gate top_n={top_n:2d}: {len(gated.eligible_hit_ids)} eligible hits, "
          f"{len(gated.pairs)} attributed interactions")
