import numpy as np
import pytest

from clickprep.events import Event, EventLog, EventType, PageType
from clickprep.metrics import (
    AttributionWindows,
    CurrencyMismatch,
    MissingPrice,
    PlpGate,
    attribute,
    conversion_revenue,
    flag_low_visibility,
    rates,
)

from conftest import DAY, HOUR, mk_atc, mk_buy, mk_click, mk_hit, mk_log


def brute_force_pairs(log: EventLog, windows: AttributionWindows, gate: PlpGate):
    """All-pairs matcher: no indexing, scans every hit per interaction."""
    def gate_ok(hit):
        if hit.page_type != PageType.PLP:
            return True
        if gate.first_page_only and hit.page_number != 1:
            return False
        return any(s < gate.top_n for _, s in hit.recommended_products)

    def products_of(hit):
        if hit.page_type == PageType.PLP:
            return {p for p, s in hit.recommended_products if s < gate.top_n}
        return {p for p, _ in hit.recommended_products}

    hits = [e for e in log if e.event_type == EventType.HIT and gate_ok(e)
            and e.customer_key() is not None]
    pairs = []
    for ev in log:
        if ev.event_type not in (EventType.CLICK, EventType.ATC, EventType.BUY):
            continue
        if ev.event_id in log.excluded_metric_clicks:
            continue
        window = windows.window_for(ev.event_type)
        best = None
        for hit in hits:
            if hit.customer_key() != ev.customer_key():
                continue
            if ev.product_id not in products_of(hit):
                continue
            lag = ev.timestamp_utc - hit.timestamp_utc
            if lag < 0 or lag > window:
                continue
            key = (hit.timestamp_utc, hit.event_id)
            if best is None or key > best:
                best = key
        if best is not None:
            pairs.append((ev.event_id, best[1]))
    eligible = len(hits)
    return sorted(pairs), eligible


def random_log(rng, n_events=400) -> EventLog:
    """Adversarial attribution fuzz: boundary lags, shared products, PLP slots."""
    windows = AttributionWindows()
    events = []
    counter = 0
    customers = [f"c{i}" for i in range(rng.integers(3, 8))]
    products = [f"p{i}" for i in range(rng.integers(4, 10))]
    hit_times = {}
    for _ in range(n_events):
        counter += 1
        cust = str(rng.choice(customers))
        ts = int(rng.integers(0, 3 * DAY))
        if rng.random() < 0.45:
            page = str(rng.choice(["HOME", "PDP", "PLP", "CART"]))
            shown = list(rng.choice(products, size=min(len(products), 1 + int(rng.integers(1, 9))), replace=False))
            events.append(
                mk_hit(
                    cust, ts, shown,
                    page=page,
                    page_number=int(rng.integers(1, 4)) if page == "PLP" else None,
                    widget=str(rng.choice(["w1", "w2"])),
                    event_id=f"f{counter}",
                    segment=str(rng.choice(["A1", "A2"])) if rng.random() < 0.5 else None,
                )
            )
            hit_times.setdefault(cust, []).append((ts, shown))
        else:
            etype = str(rng.choice(["CLICK", "ATC", "BUY"]))
            product = str(rng.choice(products))
            # aim near window boundaries for this interaction type
            window = {"CLICK": windows.click_ms, "ATC": windows.atc_ms, "BUY": windows.buy_ms}[etype]
            if hit_times.get(cust) and rng.random() < 0.7:
                base_ts, shown = hit_times[cust][int(rng.integers(0, len(hit_times[cust])))]
                if rng.random() < 0.5:
                    product = str(rng.choice(shown))
                offset = int(rng.choice([0, 1, window - 1, window, window + 1,
                                         int(rng.integers(0, window + 10_000))]))
                ts = base_ts + offset
            maker = {"CLICK": mk_click, "ATC": mk_atc, "BUY": mk_buy}[etype]
            events.append(
                maker(cust, ts, product, event_id=f"f{counter}",
                      price=round(float(rng.uniform(1, 30)), 2))
            )
    log = EventLog(events)
    # mark a few clicks as excluded, as the new-customer rule would
    clicks = [e.event_id for e in log if e.event_type == EventType.CLICK]
    if clicks:
        excluded = list(rng.choice(clicks, size=min(3, len(clicks)), replace=False))
        log = log.with_exclusions(excluded)
    return log


class TestAttributionExamples:
    def _hit(self, ts=0, products=("p1", "p2")):
        return mk_hit("c", ts, list(products), event_id="H")

    def test_click_window_boundary(self):
        for lag_s, expected in [(299, 1), (300, 1), (301, 0)]:
            log = mk_log(self._hit(), mk_click("c", lag_s * 1000, "p1"))
            attr = attribute(log)
            assert len(attr.pairs) == expected, f"lag {lag_s}s"

    def test_buy_at_23h_attributed(self):
        log = mk_log(self._hit(), mk_buy("c", 23 * HOUR, "p1"))
        attr = attribute(log)
        assert len(attr.pairs) == 1
        assert attr.pairs[0].interaction_type == EventType.BUY

    def test_buy_past_24h_not_attributed(self):
        log = mk_log(self._hit(), mk_buy("c", 25 * HOUR, "p1"))
        attr = attribute(log)
        assert attr.pairs == []
        assert attr.excluded.get("outside_window") == 1

    def test_click_on_never_shown_product_unattributed(self):
        log = mk_log(self._hit(), mk_click("c", 1000, "p9"))
        attr = attribute(log)
        assert attr.pairs == []
        assert attr.excluded.get("never_recommended") == 1

    def test_plp_slot_past_gate_ineligible_both_ways(self):
        # slots 8..11 with top_n 8: the product in slot 9 neither counts as
        # an impression target nor attracts attribution
        shown = [(f"p{i}", i) for i in range(6, 12)]
        hit = Event(
            event_id="H",
            event_type=EventType.HIT,
            timestamp_utc=0,
            page_type=PageType.PLP,
            cust_id="c",
            cookie_id="ck-c",
            recommended_products=tuple(shown),
            page_number=1,
            widget_id="plp_grid",
        )
        log = mk_log(hit, mk_click("c", 1000, "p9"))
        attr = attribute(log)
        assert attr.pairs == []  # p9 sits in slot 9
        assert len(attr.eligible_hit_ids) == 1  # slots 6,7 keep the hit eligible
        log2 = mk_log(hit, mk_click("c", 1000, "p7"))
        assert len(attribute(log2).pairs) == 1

    def test_plp_second_page_ineligible(self):
        hit = mk_hit("c", 0, ["p1", "p2"], page="PLP", page_number=2, event_id="H")
        log = mk_log(hit, mk_click("c", 1000, "p1"))
        attr = attribute(log)
        assert attr.eligible_hit_ids == []
        assert attr.pairs == []

    def test_most_recent_qualifying_hit_wins(self):
        log = mk_log(
            mk_hit("c", 0, ["p1"], event_id="H1"),
            mk_hit("c", 60_000, ["p1"], event_id="H2"),
            mk_click("c", 90_000, "p1"),
        )
        attr = attribute(log)
        assert attr.pairs[0].hit_id == "H2"
        assert attr.pairs[0].lag_ms == 30_000

    def test_equal_timestamp_hits_stable_under_permutation(self):
        h1 = mk_hit("c", 1000, ["p1"], event_id="HA")
        h2 = mk_hit("c", 1000, ["p1"], event_id="HB")
        click = mk_click("c", 2000, "p1")
        a = attribute(EventLog([h1, h2, click]))
        b = attribute(EventLog([h2, click, h1]))
        assert a.pairs == b.pairs
        assert a.pairs[0].hit_id == "HB"  # event_id breaks the tie

    def test_excluded_clicks_skipped(self):
        log = mk_log(self._hit(), mk_click("c", 1000, "p1", event_id="K"))
        marked = log.with_exclusions(["K"])
        attr = attribute(marked)
        assert attr.pairs == []
        assert attr.excluded.get("new_customer_click") == 1


class TestOracleEquivalence:
    def test_indexed_equals_brute_force_on_random_logs(self):
        windows = AttributionWindows()
        for seed in range(12):
            rng = np.random.default_rng(1000 + seed)
            gate = PlpGate(top_n=int(rng.integers(2, 9)),
                           first_page_only=bool(rng.random() < 0.8))
            log = random_log(rng, n_events=300)
            attr = attribute(log, windows, gate)
            got = sorted((p.interaction_id, p.hit_id) for p in attr.pairs)
            want, eligible = brute_force_pairs(log, windows, gate)
            assert got == want, f"seed {seed}"
            assert len(attr.eligible_hit_ids) == eligible

    def test_shrinking_windows_never_add_attributions(self):
        rng = np.random.default_rng(77)
        log = random_log(rng, n_events=300)
        full = AttributionWindows()
        shrunk = AttributionWindows(click_ms=60_000, atc_ms=300_000, buy_ms=HOUR)
        n_full = len(attribute(log, full).pairs)
        n_shrunk = len(attribute(log, shrunk).pairs)
        assert n_shrunk <= n_full

    def test_tighter_plp_gate_never_adds_eligible_hits(self):
        rng = np.random.default_rng(78)
        log = random_log(rng, n_events=300)
        wide = attribute(log, gate=PlpGate(top_n=10))
        tight = attribute(log, gate=PlpGate(top_n=3))
        assert len(tight.eligible_hit_ids) <= len(wide.eligible_hit_ids)


class TestRates:
    def test_post_cleaning_ctr_example(self):
        # 81 attributed clicks over 1,000 eligible hits: CTR 8.1%
        events = [mk_hit(f"c{i}", i * 1000, ["p1"], event_id=f"h{i}") for i in range(1000)]
        events += [
            mk_click(f"c{i}", i * 1000 + 500, "p1", event_id=f"k{i}") for i in range(81)
        ]
        report = rates(attribute(mk_log(events)))
        assert report.totals.ctr == pytest.approx(0.081)

    def test_zero_hit_cells_report_absent_rates(self):
        log = mk_log(mk_hit("c", 0, ["p1"]))
        report = rates(attribute(log))
        assert report.totals.ctr == 0.0
        empty = rates(attribute(mk_log(mk_click("c", 0, "p1"))))
        assert empty.totals.hits == 0
        assert empty.totals.ctr is None

    def test_equal_inputs_give_equal_rates_across_segments(self):
        events = []
        for seg in ("A1", "A2"):
            for i in range(50):
                events.append(
                    mk_hit(f"{seg}-c{i}", i * 1000, ["p1"], segment=seg,
                           event_id=f"{seg}h{i}")
                )
            for i in range(5):
                events.append(
                    mk_click(f"{seg}-c{i}", i * 1000 + 100, "p1", segment=seg,
                             event_id=f"{seg}k{i}")
                )
        report = rates(attribute(mk_log(events)))
        by_segment = {}
        for (day, page, widget, segment), cell in report.cells.items():
            agg = by_segment.setdefault(segment, [0, 0])
            agg[0] += cell.hits
            agg[1] += cell.clicks
        assert by_segment["A1"] == by_segment["A2"]

    def test_totals_equal_cell_sums(self):
        rng = np.random.default_rng(5)
        log = random_log(rng, n_events=300)
        report = rates(attribute(log))
        assert report.totals.hits == sum(c.hits for c in report.cells.values())
        assert report.totals.clicks == sum(c.clicks for c in report.cells.values())
        assert report.totals.buys == sum(c.buys for c in report.cells.values())
        assert report.totals.revenue == pytest.approx(
            sum(c.revenue for c in report.cells.values())
        )


class TestConversionRevenue:
    def test_quantity_times_price(self):
        log = mk_log(
            mk_hit("c", 0, ["p1"]),
            mk_buy("c", 1000, "p1", price=10.0, quantity=2),
        )
        attr = attribute(log)
        assert conversion_revenue(attr, log) == pytest.approx(20.0)

    def test_no_attributed_buys_zero(self):
        log = mk_log(mk_hit("c", 0, ["p1"]))
        assert conversion_revenue(attribute(log), log) == 0.0

    def test_missing_price_raises(self):
        log = mk_log(mk_hit("c", 0, ["p1"]), mk_buy("c", 1000, "p1"))
        with pytest.raises(MissingPrice):
            conversion_revenue(attribute(log), log)

    def test_mixed_currency_raises(self):
        log = mk_log(
            mk_hit("c", 0, ["p1", "p2"]),
            mk_buy("c", 1000, "p1", price=(10.0, "USD")),
            mk_buy("c", 2000, "p2", price=(10.0, "EUR")),
        )
        with pytest.raises(CurrencyMismatch):
            conversion_revenue(attribute(log), log)


class TestLowVisibility:
    def _report(self, widget_ctrs: dict):
        events = []
        for widget, (hits, clicks) in widget_ctrs.items():
            for i in range(hits):
                events.append(
                    mk_hit(f"c{widget}{i}", i * 1000, ["p1"], widget=widget,
                           event_id=f"{widget}h{i}")
                )
            for i in range(clicks):
                events.append(
                    mk_click(f"c{widget}{i}", i * 1000 + 100, "p1",
                             event_id=f"{widget}k{i}")
                )
        # clicks attach to the widget's hits because customers are disjoint
        return rates(attribute(mk_log(events)))

    def test_buried_widget_flagged(self):
        report = self._report({"good": (100, 6), "ok": (100, 5), "buried": (200, 1)})
        flagged = flag_low_visibility(report, fraction=0.25)
        assert [(w, round(c, 4)) for _, w, c, _ in flagged] == [("buried", 0.005)]

    def test_uniform_ctrs_no_flags(self):
        report = self._report({"w1": (100, 6), "w2": (100, 6)})
        assert flag_low_visibility(report) == []

    def test_single_cell_precondition(self):
        report = self._report({"only": (100, 6)})
        with pytest.raises(ValueError):
            flag_low_visibility(report)
