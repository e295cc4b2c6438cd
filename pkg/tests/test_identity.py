import numpy as np
import pytest

from clickprep.identity import build_identity_map, resolve

from conftest import mk_click, mk_log


def _click(cust=None, *, cookie, user, ts, event_id=None, product="p1"):
    return mk_click(
        cust, ts, product, cookie_id=cookie, user_id=user, event_id=event_id
    )


class TestBuildMap:
    def test_duplicate_pairs_dedup(self):
        log = mk_log(
            _click(cookie="c1", user="u1", ts=1000),
            _click(cookie="c1", user="u1", ts=2000),
        )
        imap = build_identity_map(log)
        assert imap.to_dict() == {"c1": ["u1"]}

    def test_multi_user_cookie(self):
        log = mk_log(
            _click(cookie="c1", user="u1", ts=1000),
            _click(cookie="c1", user="u2", ts=2000),
        )
        imap = build_identity_map(log)
        assert imap.to_dict() == {"c1": ["u1", "u2"]}
        assert imap.is_ambiguous("c1")

    def test_cookie_only_rows_absent(self):
        log = mk_log(_click(cookie="c2", user=None, ts=1000))
        assert build_identity_map(log).to_dict() == {}


class TestResolve:
    def test_user_present_wins(self):
        log = mk_log(_click(cookie="c1", user="u1", ts=1000))
        out, report = resolve(log)
        assert out.events[0].cust_id == "u1"
        assert report.assigned_from_user == 1

    def test_backfill_from_map(self):
        log = mk_log(
            _click(cookie="c1", user="u1", ts=1000),
            _click(cookie="c1", user=None, ts=2000, event_id="anon"),
        )
        out, report = resolve(log)
        assert out.get("anon").cust_id == "u1"
        assert report.backfilled_from_map == 1

    def test_backfill_applies_before_login_moment(self):
        # pre-login rows carry the user the cookie later logged in as
        log = mk_log(
            _click(cookie="c1", user=None, ts=1000, event_id="pre"),
            _click(cookie="c1", user="u1", ts=9000),
        )
        out, _ = resolve(log)
        assert out.get("pre").cust_id == "u1"

    def test_unmapped_cookie_becomes_cust(self):
        log = mk_log(_click(cookie="c3", user=None, ts=1000))
        out, report = resolve(log)
        assert out.events[0].cust_id == "c3"
        assert report.cookie_only == 1

    def test_ambiguous_cookie_anonymous_rows_eliminated(self):
        log = mk_log(
            _click(cookie="c1", user="u1", ts=1000),
            _click(cookie="c1", user="u2", ts=2000),
            _click(cookie="c1", user=None, ts=3000, event_id="gone"),
        )
        out, report = resolve(log)
        assert "gone" not in out
        assert report.eliminated_ambiguous == 1
        assert report.eliminated_event_ids == {"gone"}

    def test_ambiguous_cookie_rows_with_user_kept(self):
        # the asymmetry: rows naming a user survive even on a shared cookie
        log = mk_log(
            _click(cookie="c1", user="u1", ts=1000, event_id="a"),
            _click(cookie="c1", user="u2", ts=2000, event_id="b"),
        )
        out, _ = resolve(log)
        assert out.get("a").cust_id == "u1"
        assert out.get("b").cust_id == "u2"

    def test_multi_user_fraction(self):
        log = mk_log(
            _click(cookie="c1", user="u1", ts=1000),
            _click(cookie="c1", user="u2", ts=2000),
            _click(cookie="c2", user="u3", ts=3000),
            _click(cookie="c3", user=None, ts=4000),
            _click(cookie="c4", user=None, ts=5000),
        )
        _, report = resolve(log)
        assert report.multi_user_cookie_fraction == pytest.approx(0.25)

    def test_every_survivor_has_cust_id(self):
        rng = np.random.default_rng(3)
        events = []
        for i in range(200):
            cookie = f"c{rng.integers(0, 20)}" if rng.random() < 0.9 else None
            user = f"u{rng.integers(0, 15)}" if rng.random() < 0.4 else None
            if cookie is None and user is None:
                cookie = "c0"
            events.append(
                _click(cookie=cookie, user=user, ts=int(rng.integers(0, 10**6)), event_id=f"r{i}")
            )
        out, _ = resolve(mk_log(events))
        assert all(e.cust_id for e in out)

    def test_idempotent_on_own_output(self):
        log = mk_log(
            _click(cookie="c1", user="u1", ts=1000),
            _click(cookie="c1", user=None, ts=2000),
            _click(cookie="c2", user="u2", ts=3000),
            _click(cookie="c2", user="u3", ts=4000),
            _click(cookie="c2", user=None, ts=5000),
            _click(cookie="c9", user=None, ts=6000),
        )
        once, _ = resolve(log)
        twice, report2 = resolve(once)
        assert [e.cust_id for e in twice] == [e.cust_id for e in once]
        assert len(twice) == len(once)
        assert report2.eliminated_ambiguous == 0

    def test_map_is_order_insensitive_and_merge_matches_union(self):
        rng = np.random.default_rng(7)
        rows = []
        for i in range(120):
            cookie = f"c{rng.integers(0, 10)}"
            user = f"u{rng.integers(0, 8)}" if rng.random() < 0.5 else None
            rows.append(_click(cookie=cookie, user=user, ts=1000 + i, event_id=f"m{i}"))
        half_a, half_b = rows[:60], rows[60:]
        merged_map = build_identity_map(mk_log(half_a)).merge(
            build_identity_map(mk_log(half_b))
        )
        union_map = build_identity_map(mk_log(rows))
        assert merged_map.to_dict() == union_map.to_dict()

        union_log = mk_log(rows)
        out_direct, _ = resolve(union_log)
        out_merged, _ = resolve(union_log, merged_map)
        assert [(e.event_id, e.cust_id) for e in out_direct] == [
            (e.event_id, e.cust_id) for e in out_merged
        ]
