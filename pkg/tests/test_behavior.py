import numpy as np
import pytest

from clickprep.behavior import (
    B2BConfig,
    BotConfig,
    InsufficientData,
    NoPurchases,
    apply_flags,
    detect_b2b,
    detect_bots,
    detect_bounces,
    new_customer_cutoff,
    new_customer_flags,
)
from clickprep.events import EventLog, EventType
from clickprep.metrics import attribute, rates
from clickprep.synth import SynthConfig, generate
from clickprep.identity import resolve

from conftest import DAY, HOUR, MIN, mk_buy, mk_click, mk_hit, mk_log


class TestDetectB2B:
    def _log_with_median_2(self):
        # six ordinary purchasing days at 1-3 buys and one reseller at 20/day
        events = []
        daily = [1, 2, 2, 2, 3, 3]
        for i, n in enumerate(daily):
            for j in range(n):
                events.append(mk_buy(f"c{i}", i * DAY + j * HOUR, f"p{i}-{j}"))
        for j in range(20):
            events.append(mk_buy("reseller", 3 * DAY + j * MIN, f"rp{j}"))
        return mk_log(events)

    def test_flags_above_m_times_median(self):
        log = self._log_with_median_2()
        flags = detect_b2b(log, B2BConfig(m=5.0))
        assert flags.customers() == {"reseller"}
        assert flags.flagged["reseller"].value == 20

    def test_uniform_single_buys_no_flags(self):
        events = [mk_buy(f"c{i}", i * 1000, "p1") for i in range(10)]
        flags = detect_b2b(mk_log(events), B2BConfig(m=1.5))
        assert len(flags) == 0

    def test_no_purchases(self):
        with pytest.raises(NoPurchases):
            detect_b2b(mk_log(mk_click("c", 0, "p")))

    def test_quantity_weighs_in(self):
        events = [mk_buy(f"c{i}", i * 1000, "p1") for i in range(8)]
        events.append(mk_buy("bulk", 0, "p9", quantity=30))
        flags = detect_b2b(mk_log(events), B2BConfig(m=5.0))
        assert flags.customers() == {"bulk"}

    def test_larger_m_flags_subset(self):
        rng = np.random.default_rng(1)
        events = []
        for i in range(60):
            for j in range(int(rng.integers(1, 12))):
                events.append(mk_buy(f"c{i}", j * MIN, f"p{j}"))
        log = mk_log(events)
        flags_m5 = detect_b2b(log, B2BConfig(m=5.0)).customers()
        flags_m10 = detect_b2b(log, B2BConfig(m=10.0)).customers()
        assert flags_m10 <= flags_m5

    def test_m_must_exceed_one(self):
        with pytest.raises(ValueError):
            B2BConfig(m=1.0)


class TestDetectBounces:
    def test_single_home_hit_flagged(self):
        log = mk_log(
            mk_hit("b", 0, ["p1"], page="HOME"),
            mk_hit("ok", 0, ["p1"], page="HOME"),
            mk_click("ok", 1000, "p1"),
        )
        flags = detect_bounces(log)
        assert flags.customers() == {"b"}

    def test_single_pdp_hit_not_flagged(self):
        log = mk_log(mk_hit("c", 0, ["p1"], page="PDP"))
        assert len(detect_bounces(log)) == 0

    def test_single_plp_hit_flagged(self):
        log = mk_log(mk_hit("c", 0, ["p1"], page="PLP", page_number=1))
        assert detect_bounces(log).customers() == {"c"}

    def test_hit_plus_interaction_not_flagged(self):
        log = mk_log(
            mk_hit("c", 0, ["p1"], page="HOME"),
            mk_click("c", 1000, "p1"),
        )
        assert len(detect_bounces(log)) == 0

    def test_two_hits_not_flagged(self):
        log = mk_log(
            mk_hit("c", 0, ["p1"], page="HOME"),
            mk_hit("c", 5000, ["p2"], page="HOME"),
        )
        assert len(detect_bounces(log)) == 0


class TestDetectBots:
    def test_rate_burst_flagged(self):
        # 15 clicks inside 10 seconds: at or above 1/s sustained
        events = [mk_click("fast", i * 700, f"p{i % 3}") for i in range(15)]
        flags = detect_bots(mk_log(events))
        assert "fast" in flags.customers()
        assert "10s" in flags.flagged["fast"].reason

    def test_metronome_regularity_flagged(self):
        # 30 clicks exactly 5.0 s apart: far too regular for a human
        events = [mk_click("tick", i * 5_000, f"p{i % 5}") for i in range(30)]
        flags = detect_bots(mk_log(events))
        assert "tick" in flags.customers()
        assert "CV" in flags.flagged["tick"].reason

    def test_humanlike_gaps_not_flagged(self):
        rng = np.random.default_rng(2)
        ts, events = 0, []
        for i in range(40):
            ts += int(rng.lognormal(np.log(90), 0.9) * 1000)  # ~0.01 clicks/s
            events.append(mk_click("human", ts, f"p{i % 7}"))
        flags = detect_bots(mk_log(events))
        assert "human" not in flags.customers()

    def test_user_agent_signature(self):
        log = mk_log(
            mk_click("sig", 0, "p1", user_agent="SpiderBot/2.0 (+http://x)"),
        )
        cfg = BotConfig(signature_user_agents=("*spiderbot*",))
        flags = detect_bots(log, cfg)
        assert flags.customers() == {"sig"}
        assert flags.flagged["sig"].reason == "user_agent signature"

    def test_ip_signature_cidr(self):
        log = mk_log(mk_click("sig", 0, "p1", ip="198.51.100.23"))
        cfg = BotConfig(signature_ips=("198.51.100.0/24",))
        assert detect_bots(log, cfg).customers() == {"sig"}

    def test_order_insensitive(self):
        rng = np.random.default_rng(3)
        events = [mk_click("t", i * 5_000, f"p{i % 5}", event_id=f"e{i}") for i in range(25)]
        shuffled = list(events)
        rng.shuffle(shuffled)
        f1 = detect_bots(EventLog(events))
        f2 = detect_bots(EventLog(shuffled))
        assert f1.customers() == f2.customers()

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            BotConfig(rate_threshold=0)
        with pytest.raises(ValueError):
            BotConfig(regularity_min_events=2)


def _figure3_log():
    """100 customers, 10 'early' hits each; 45 make a first click (4.5%);
    those 45 then see 10 more hits with 34 second clicks (7.6%)."""
    events = []
    for i in range(100):
        cust = f"c{i}"
        base = i * 10 * MIN
        for h in range(10):
            events.append(
                mk_hit(cust, base + h * MIN, [f"p{h}", f"q{h}"], event_id=f"{cust}-eh{h}")
            )
        if i < 45:
            click_hit_ts = base + 9 * MIN
            events.append(
                mk_click(cust, click_hit_ts + 10_000, "p9", event_id=f"{cust}-k1")
            )
            for h in range(10):
                events.append(
                    mk_hit(cust, base + (11 + h) * MIN, [f"p{h}", f"q{h}"],
                           event_id=f"{cust}-lh{h}")
                )
            if i < 34:
                events.append(
                    mk_click(cust, base + 20 * MIN + 10_000, "p9", event_id=f"{cust}-k2")
                )
    return mk_log(events)


class TestNewCustomerCutoff:
    def test_first_click_ctr_gap_selects_x1(self):
        log = _figure3_log()
        x, table = new_customer_cutoff(log, ratio=0.7, x_max=2, min_customers=0)
        assert x == 1
        x1, early, late = table[0]
        assert x1 == 1
        assert early == pytest.approx(45 / 1000)
        assert late == pytest.approx(34 / 450)

    def test_homogeneous_ctr_yields_zero(self):
        cfg = SynthConfig(
            customers=250, days=7, seed=21,
            base_ctr=0.3, base_atctr=0.05, base_btr=0.02, hits_per_day=(4, 8),
        )
        log, _ = generate(cfg)
        resolved, _ = resolve(log)
        x, _ = new_customer_cutoff(resolved, ratio=0.7, x_max=4, min_customers=20)
        assert x == 0

    def test_personalization_ramp_recovered(self):
        cfg = SynthConfig(
            customers=300, days=10, seed=22,
            base_ctr=0.3, base_atctr=0.05, base_btr=0.02, hits_per_day=(5, 9),
            personalization_ramp=3, ramp_ctr_scale=0.4,
        )
        log, _ = generate(cfg)
        resolved, _ = resolve(log)
        x, _ = new_customer_cutoff(resolved, ratio=0.7, x_max=6, min_customers=10)
        assert x == 3

    def test_insufficient_data(self):
        log = mk_log(mk_hit("c", 0, ["p1"]), mk_click("c", 1000, "p1"))
        with pytest.raises(InsufficientData):
            new_customer_cutoff(log, x_max=10, min_customers=20)


class TestApplyFlags:
    def test_no_flags_log_unchanged(self):
        log = mk_log(mk_hit("c", 0, ["p1"]), mk_click("c", 1000, "p1"))
        out, report = apply_flags(log, [])
        assert [e.event_id for e in out] == [e.event_id for e in log]
        assert report.records_removed == 0

    def test_bounce_removal_is_fixpoint(self):
        log = mk_log(
            mk_hit("b1", 0, ["p1"], page="HOME"),
            mk_hit("b2", 0, ["p2"], page="PLP", page_number=1),
            mk_hit("ok", 0, ["p1"], page="HOME"),
            mk_click("ok", 1000, "p1"),
        )
        flags = detect_bounces(log)
        out, report = apply_flags(log, [flags])
        assert report.hits_removed == 2
        assert len(detect_bounces(out)) == 0

    def test_bounce_removal_increases_ctr(self):
        events = [mk_hit("b%d" % i, 0, ["p1"], page="HOME") for i in range(5)]
        events.append(mk_hit("ok", 0, ["p1"], event_id="okh"))
        events.append(mk_click("ok", 1000, "p1"))
        log = mk_log(events)
        before = rates(attribute(log)).totals.ctr
        out, _ = apply_flags(log, [detect_bounces(log)])
        after = rates(attribute(out)).totals.ctr
        assert after > before

    def test_b2b_removes_all_customer_events(self):
        events = [mk_buy(f"c{i}", i * 1000, "p") for i in range(6)]
        events += [mk_buy("bulk", j * MIN, f"p{j}") for j in range(15)]
        events.append(mk_hit("bulk", 0, ["p1"]))
        events.append(mk_click("bulk", 500, "p1"))
        log = mk_log(events)
        flags = detect_b2b(log, B2BConfig(m=5.0))
        out, report = apply_flags(log, [flags])
        assert all(e.customer_key() != "bulk" for e in out)
        assert report.customers_flagged == 1
        assert report.records_removed == 17

    def test_b2b_removal_proportions(self):
        # 3 resellers out of 10,000 customers (0.03%) at 43 buys each make up
        # 14% of the 921 purchases; removal must match those proportions
        events = []
        for i in range(792):
            events.append(mk_buy(f"c{i}", i * MIN, f"p{i % 40}"))
        for r in range(3):
            for j in range(43):
                events.append(mk_buy(f"reseller{r}", r * HOUR + j * MIN, f"rp{r}-{j}"))
        for i in range(9205):
            events.append(mk_hit(f"window{i}", i * 1000, ["p1"], event_id=f"wh{i}"))
        log = mk_log(events)
        assert len(log.customer_ids()) == 10_000

        flags = detect_b2b(log, B2BConfig(m=5.0))
        assert flags.customers() == {"reseller0", "reseller1", "reseller2"}
        out, report = apply_flags(log, [flags])
        assert report.customers_flagged / 10_000 == pytest.approx(0.0003)
        buys_before = sum(1 for e in log if e.event_type == EventType.BUY)
        buys_after = sum(1 for e in out if e.event_type == EventType.BUY)
        assert (buys_before - buys_after) / buys_before == pytest.approx(0.14, abs=0.001)

    def test_new_customer_marks_without_deleting(self):
        log = _figure3_log()
        flags = new_customer_flags(log, 1)
        out, report = apply_flags(log, [flags])
        assert len(out) == len(log)  # nothing deleted
        assert len(out.excluded_metric_clicks) == 45  # every first click marked
        assert report.records_removed == 0
        # excluded clicks vanish from CTR but the events remain
        before = rates(attribute(log)).totals
        after = rates(attribute(out)).totals
        assert after.hits == before.hits
        assert after.clicks == before.clicks - 45
