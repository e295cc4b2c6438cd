import json

import pytest

from clickprep import cli
from clickprep.pipeline import (
    EXIT_ALARM,
    EXIT_OK,
    STAGES,
    ConfigInvalid,
    PipelineConfig,
    run_pipeline,
)
from clickprep.synth import OutlierSpec, SynthConfig, generate

from conftest import MIN, mk_buy, mk_click, mk_log

FAST_OUTLIERS = dict(bootstrap_iterations=1500)

PATHOLOGY_CFG = SynthConfig(
    customers=250,
    days=5,
    seed=17,
    bounce_fraction=0.2,
    bot_count=8,
    b2b_count=4,
    outlier_customers=OutlierSpec(count=3, view_magnitude=200),
    duplicate_glitch_prob=0.01,
    multi_device_fraction=0.1,
)


def _pipeline_cfg(**over) -> PipelineConfig:
    base = dict(
        bot_user_agents=("*dataspider*",),
        bot_ips=("198.51.100.0/24",),
        **FAST_OUTLIERS,
    )
    base.update(over)
    return PipelineConfig(**base)


class TestRunPipeline:
    def test_full_run_has_all_stage_sections(self):
        log, truth = generate(PATHOLOGY_CFG)
        result = run_pipeline(_pipeline_cfg(), log=log)
        assert result.exit_code == EXIT_OK
        for stage in STAGES:
            assert stage in result.report
        enabled = [s for s in STAGES if result.report[s].get("enabled")]
        assert enabled == list(STAGES)

    def test_cleaning_removes_planted_pathologies(self):
        log, truth = generate(PATHOLOGY_CFG)
        result = run_pipeline(_pipeline_cfg(), log=log)
        survivors = {e.customer_key() for e in result.log}
        for label in ("BOUNCE", "BOT", "B2B"):
            assert not (truth.customers_with(label) & survivors), label

    def test_alarm_halts_with_exit_2(self):
        events = []
        for i in range(30):
            events.append(mk_click(f"c{i}", i * MIN, f"p{i}"))
            events.append(mk_buy(f"c{i}", i * MIN + 10_000, f"p{i}"))
        for i in range(10):  # ten buys with no click at all
            events.append(mk_buy(f"x{i}", i * MIN, f"q{i}"))
        log = mk_log(events)
        result = run_pipeline(_pipeline_cfg(behavior_rules=()), log=log)
        assert result.exit_code == EXIT_ALARM
        assert result.report["journey"]["audit"]["verdict"] == "INTEGRATION_ALARM"
        assert result.report["outliers"] == {"enabled": False}
        assert result.report["metrics"] == {"enabled": False}

    def test_metrics_only_run(self):
        log, _ = generate(SynthConfig(customers=100, days=5, seed=1))
        cfg = PipelineConfig(
            dedup=False,
            identity=True,
            behavior_rules=(),
            journey=False,
            outlier_metrics=(),
            aa=False,
        )
        result = run_pipeline(cfg, log=log)
        assert result.exit_code == EXIT_OK
        assert result.report["metrics"]["enabled"]
        assert not result.report["journey"]["enabled"]

    def test_deterministic_reports(self):
        log, _ = generate(PATHOLOGY_CFG)
        r1 = run_pipeline(_pipeline_cfg(aa_seed=3), log=log)
        r2 = run_pipeline(_pipeline_cfg(aa_seed=3), log=log)
        assert r1.dumps() == r2.dumps()

    def test_combo_expansion_inside_pipeline(self, tmp_path):
        cfg = SynthConfig(
            customers=300, days=5, seed=8, combo_catalog=5, combo_share=0.6,
            base_ctr=0.15, base_atctr=0.08, base_btr=0.05,
        )
        log, truth = generate(cfg)
        combos_csv = tmp_path / "combos.csv"
        combos_csv.write_text(
            "sku,combo_id\n"
            + "".join(f"{sku},{combo}\n" for sku, combo in sorted(truth.combo_members.items()))
        )
        result = run_pipeline(_pipeline_cfg(combos_path=str(combos_csv)), log=log)
        assert result.exit_code == EXIT_OK
        assert result.report["journey"]["combo_expansion"]["events_collapsed"] > 0
        assert result.report["journey"]["audit"]["verdict"] == "CLEAN"
        # collapsed combo buys attribute back to the combo click's hit
        assert result.report["metrics"]["report"]["totals"]["buys"] > 0


class TestConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigInvalid):
            PipelineConfig.from_dict({"no_such_key": 1})

    def test_overrides_coerce_types(self):
        cfg = PipelineConfig().with_overrides(
            ["b2b_m=7.5", "dedup=false", "plp_top_n=4",
             "behavior_rules=bounce,bots", "aa_seed=9"]
        )
        assert cfg.b2b_m == 7.5
        assert cfg.dedup is False
        assert cfg.plp_top_n == 4
        assert cfg.behavior_rules == ("bounce", "bots")
        assert cfg.aa_seed == 9

    def test_bad_override_rejected(self):
        with pytest.raises(ConfigInvalid):
            PipelineConfig().with_overrides(["nonsense"])
        with pytest.raises(ConfigInvalid):
            PipelineConfig().with_overrides(["ghost_key=1"])


class TestCli:
    def test_stagewise_cli_round_trip(self, tmp_path):
        raw = tmp_path / "raw.jsonl"
        truth_path = tmp_path / "truth.json"
        synth_cfg = tmp_path / "synth.json"
        synth_cfg.write_text(json.dumps({
            "customers": 120, "days": 5, "seed": 9,
            "bounce_fraction": 0.2, "bot_count": 4,
        }))
        assert cli.main(["synth", "--config", str(synth_cfg),
                         "--out", str(raw), "--truth", str(truth_path)]) == 0
        assert raw.exists() and truth_path.exists()

        clean = tmp_path / "clean.jsonl"
        rejects = tmp_path / "rejects.json"
        assert cli.main(["ingest", "--format", "jsonl", "--in", str(raw),
                         "--out", str(clean), "--rejects", str(rejects)]) == 0

        resolved = tmp_path / "resolved.jsonl"
        id_report = tmp_path / "identity.json"
        assert cli.main(["identity", "--in", str(clean), "--out", str(resolved),
                         "--report", str(id_report)]) == 0

        cleaned = tmp_path / "cleaned.jsonl"
        clean_report = tmp_path / "cleaning.json"
        assert cli.main(["clean", "--rules", "bounce,b2b,bots",
                         "--in", str(resolved), "--out", str(cleaned),
                         "--report", str(clean_report)]) == 0
        report = json.loads(clean_report.read_text())
        assert report["records_removed"] > 0

        journeyed = tmp_path / "journeyed.jsonl"
        assert cli.main(["journey", "--quick-buy", "false", "--in", str(cleaned),
                         "--out", str(journeyed)]) == 0

        metrics_json = tmp_path / "metrics.json"
        metrics_csv = tmp_path / "metrics.csv"
        assert cli.main(["metrics", "--windows", "300,1800,86400",
                         "--plp-top-n", "8", "--in", str(journeyed),
                         "--report", str(metrics_json), "--csv", str(metrics_csv)]) == 0
        payload = json.loads(metrics_json.read_text())
        assert payload["report"]["totals"]["hits"] > 0
        assert metrics_csv.read_text().startswith("day,page_type")

        verdict_json = tmp_path / "aa.json"
        assert cli.main(["aa", "--seed", "7", "--days", "5",
                         "--in", str(journeyed), "--verdict", str(verdict_json)]) == 0
        assert json.loads(verdict_json.read_text())["verdict"] in (
            "CONSISTENT", "INCONSISTENT"
        )

    def test_outliers_cli_with_manual_limit(self, tmp_path):
        log, _ = generate(SynthConfig(customers=150, days=5, seed=2))
        raw = tmp_path / "resolved.jsonl"
        log.to_jsonl(raw)
        decision_path = tmp_path / "views_decision.json"
        hist_path = tmp_path / "views_hist.json"
        rc = cli.main([
            "outliers", "--metric", "views", "--k", "7", "--iters", "1500",
            "--seed", "42", "--limit", "3", "--in", str(raw),
            "--decision", str(decision_path), "--hist", str(hist_path),
        ])
        assert rc == 0
        decision = json.loads(decision_path.read_text())
        assert decision["final_limit"] == 3
        hist = json.loads(hist_path.read_text())
        assert len(hist["bin_counts"]) == 200

    def test_run_subcommand_exit_codes(self, tmp_path):
        log, _ = generate(SynthConfig(customers=100, days=5, seed=4))
        raw = tmp_path / "raw.jsonl"
        log.to_jsonl(raw)
        out_dir = tmp_path / "out"
        rc = cli.main([
            "run", "--in", str(raw), "--output-dir", str(out_dir),
            "--set", "bootstrap_iterations=1500",
        ])
        assert rc == 0
        report = json.loads((out_dir / "pipeline_report.json").read_text())
        assert report["metrics"]["enabled"]
        assert (out_dir / "cleaned.jsonl").exists()

    def test_run_repeatability_byte_identical(self, tmp_path):
        # same config and input twice: byte-identical report files
        log, _ = generate(SynthConfig(customers=100, days=5, seed=4))
        raw = tmp_path / "raw.jsonl"
        log.to_jsonl(raw)
        outs = []
        for name in ("a", "b"):
            out_dir = tmp_path / name
            assert cli.main([
                "run", "--in", str(raw), "--output-dir", str(out_dir),
                "--set", "bootstrap_iterations=1500", "--set", "aa_seed=5",
            ]) == 0
            outs.append((out_dir / "pipeline_report.json").read_bytes())
        assert outs[0] == outs[1]
