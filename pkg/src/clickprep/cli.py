"""Command-line entry points: one subcommand per pipeline stage.

Exit codes: 0 success, 1 error, 2 halted by the journey integration alarm.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import behavior, identity, ingest, journey, metrics, outliers, pipeline, validation
from .events import EventLog, LogMetadata
from .synth import BotBehavior, OutlierSpec, SynthConfig, generate


def _write_json(path, payload: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_log(path, fmt: str = "jsonl", offset: int | None = None) -> EventLog:
    log, rejects = ingest.parse_events_file(
        path,
        fmt,
        metadata=LogMetadata(source=str(path)),
        default_utc_offset_minutes=offset,
    )
    if len(rejects):
        print(f"warning: {len(rejects)} rejected rows while loading {path}", file=sys.stderr)
    return log


def _synth_config_from_dict(data: dict) -> SynthConfig:
    data = dict(data)
    if "bot_behavior" in data and isinstance(data["bot_behavior"], dict):
        data["bot_behavior"] = BotBehavior(**data["bot_behavior"])
    if "outlier_customers" in data and isinstance(data["outlier_customers"], dict):
        data["outlier_customers"] = OutlierSpec(**data["outlier_customers"])
    for key in ("currencies", "hits_per_day", "price_range"):
        if key in data and isinstance(data[key], list):
            data[key] = tuple(data[key])
    return SynthConfig(**data)


def cmd_synth(args) -> int:
    cfg = SynthConfig(seed=args.seed)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
        if args.seed != 0:
            data["seed"] = args.seed
        cfg = _synth_config_from_dict(data)
    log, truth = generate(cfg)
    log.to_jsonl(args.out)
    if args.truth:
        _write_json(args.truth, truth.to_dict())
    print(f"wrote {len(log)} events to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    log, rejects = ingest.parse_events_file(
        args.infile,
        args.format,
        metadata=LogMetadata(source=str(args.infile), base_currency=args.base),
        default_utc_offset_minutes=args.default_utc_offset,
    )
    if args.rates:
        table = ingest.RateTable.from_json(args.rates, base=args.base)
        log = ingest.normalize_currency(log, table)
    log, dedup_report = ingest.deduplicate(
        log,
        ingest.DedupPolicy(
            session_gap_ms=args.session_gap * 1000,
            glitch_window_ms=args.glitch_window * 1000,
        ),
    )
    log.to_jsonl(args.out)
    if args.rejects:
        _write_json(args.rejects, rejects.to_dict())
    print(
        f"ingested {len(log)} events ({len(rejects)} rejected, "
        f"{dedup_report.records_removed} duplicates dropped)"
    )
    return 0


def cmd_identity(args) -> int:
    log = _load_log(args.infile)
    resolved, report = identity.resolve(log)
    resolved.to_jsonl(args.out)
    if args.report:
        _write_json(args.report, report.to_dict())
    print(
        f"resolved {len(resolved)} events "
        f"(dropped {report.eliminated_no_ids + report.eliminated_ambiguous})"
    )
    return 0


def cmd_clean(args) -> int:
    log = _load_log(args.infile)
    rules = [r.strip() for r in args.rules.split(",") if r.strip()]
    bot_cfg = behavior.BotConfig()
    if args.bot_config:
        with open(args.bot_config, encoding="utf-8") as fh:
            bot_cfg = behavior.BotConfig.from_dict(json.load(fh))

    flags = []
    section: dict = {}
    for rule in rules:
        if rule == "bounce":
            flags.append(behavior.detect_bounces(log))
        elif rule == "b2b":
            try:
                flags.append(behavior.detect_b2b(log, behavior.B2BConfig(m=args.b2b_m)))
            except behavior.NoPurchases as exc:
                section["b2b"] = {"skipped": str(exc)}
        elif rule == "bots":
            flags.append(behavior.detect_bots(log, bot_cfg))
        elif rule == "newcust":
            try:
                x, table = behavior.new_customer_cutoff(
                    log, args.newcust_ratio, args.newcust_x_max
                )
                section["new_customer_x"] = x
                if x > 0:
                    flags.append(behavior.new_customer_flags(log, x))
            except behavior.InsufficientData as exc:
                section["newcust"] = {"skipped": str(exc)}
        else:
            print(f"error: unknown rule {rule!r}", file=sys.stderr)
            return 1
    cleaned, report = behavior.apply_flags(log, flags)
    cleaned.to_jsonl(args.out)
    if args.report:
        _write_json(args.report, {**report.to_dict(), **section})
    print(f"cleaned log: {len(cleaned)} events remain")
    return 0


def cmd_journey(args) -> int:
    log = _load_log(args.infile)
    if args.combos:
        log = journey.expand_combos(log, journey.ComboMap.from_csv(args.combos))
    policy = journey.JourneyPolicy(
        quick_buy_enabled=args.quick_buy == "true",
        violation_rate_alarm=args.alarm,
    )
    audit = journey.audit_journeys(log, policy)
    payload = {"audit": audit.to_dict()}
    if audit.verdict == journey.JourneyVerdict.INTEGRATION_ALARM:
        if args.report:
            _write_json(args.report, payload)
        print(
            f"integration alarm: violation rate {audit.violation_rate:.1%}",
            file=sys.stderr,
        )
        return pipeline.EXIT_ALARM
    if audit.verdict == journey.JourneyVerdict.REMOVE_VIOLATORS:
        log, cleaning = journey.remove_violators(log, audit)
        payload["cleaning"] = cleaning.to_dict()
    log.to_jsonl(args.out)
    if args.report:
        _write_json(args.report, payload)
    print(f"journey audit: {audit.verdict.value}, {len(log)} events remain")
    return 0


def cmd_outliers(args) -> int:
    log = _load_log(args.infile)
    metric = outliers.Metric(args.metric)
    pop = outliers.ActivityPopulation.from_log(log, metric)
    if not len(pop):
        print(f"error: no {args.metric} activity in log", file=sys.stderr)
        return 1
    import numpy as np

    sample = args.sample_size or max(
        2 * args.k + 2,
        int(np.ceil(0.01 * len(pop))),
        outliers.MIN_BUY_SAMPLE if metric == outliers.Metric.BUYS_PER_DAY else 0,
    )
    sample = min(sample, len(pop))
    params = outliers.BootlierParams(
        sample_size=sample,
        trim_depth=args.k,
        iterations=args.iters,
        seed=args.seed,
        prominence=args.prominence,
        noise_prominence=args.noise_prominence,
    )
    if args.limit is not None:
        decision = outliers.decision_for_limit(pop, args.limit, params)
    else:
        try:
            decision = outliers.find_outlier_limit(pop, params)
        except (outliers.NoUnimodalLimit, outliers.InsufficientPopulation) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    if args.decision:
        _write_json(args.decision, decision.to_dict())
    if args.hist:
        subset = pop.values[pop.values <= decision.final_limit]
        hist = outliers.bootlier_histogram(
            outliers.ActivityPopulation(metric=metric, values=subset),
            dataclasses.replace(params, sample_size=min(params.sample_size, subset.size)),
        )
        _write_json(args.hist, hist.to_dict())
    if args.out:
        filtered, _report = outliers.apply_outlier_filter(log, [decision])
        filtered.to_jsonl(args.out)
    print(
        f"{args.metric} outlier limit: {decision.final_limit} "
        f"({decision.flagged_fraction:.2%} of customers flagged)"
    )
    return 0


def cmd_metrics(args) -> int:
    log = _load_log(args.infile)
    click_s, atc_s, buy_s = (int(x) for x in args.windows.split(","))
    windows = metrics.AttributionWindows(
        click_ms=click_s * 1000, atc_ms=atc_s * 1000, buy_ms=buy_s * 1000
    )
    gate = metrics.PlpGate(top_n=args.plp_top_n, first_page_only=not args.plp_all_pages)
    attr = metrics.attribute(log, windows, gate)
    rep = metrics.rates(attr)
    try:
        metrics.flag_low_visibility(rep, args.low_visibility_fraction)
    except ValueError:
        pass
    payload = {
        "report": rep.to_dict(),
        "excluded_interactions": dict(sorted(attr.excluded.items())),
    }
    try:
        payload["conversion_revenue"] = round(metrics.conversion_revenue(attr, log), 6)
    except (metrics.MissingPrice, metrics.CurrencyMismatch) as exc:
        payload["conversion_revenue_error"] = str(exc)
    if args.report:
        _write_json(args.report, payload)
    if args.csv:
        Path(args.csv).write_text(rep.to_csv(), encoding="utf-8")
    totals = rep.totals
    ctr = f"{totals.ctr:.4f}" if totals.ctr is not None else "n/a"
    print(f"hits={totals.hits} clicks={totals.clicks} ctr={ctr}")
    return 0


def cmd_aa(args) -> int:
    log = _load_log(args.infile)
    if not any(ev.segment_flag is not None for ev in log):
        segmap = validation.assign_segments(log.customer_ids(), args.seed)
        log = validation.stamp_segments(log, segmap)
    attr = metrics.attribute(log)
    rep = metrics.rates(attr)
    a1, a2 = validation.daily_ctr_by_segment(rep.cells)
    try:
        verdict = validation.compare_aa(
            a1, a2, args.diff_max, args.corr_min, args.days
        )
    except validation.SeriesTooShort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.verdict:
        _write_json(args.verdict, verdict.to_dict())
    print(f"A/A verdict: {verdict.verdict.value}")
    return 0


def cmd_run(args) -> int:
    cfg = pipeline.PipelineConfig()
    if args.config:
        cfg = pipeline.PipelineConfig.from_json(args.config)
    if args.set:
        cfg = cfg.with_overrides(args.set)
    if args.infile:
        cfg = dataclasses.replace(cfg, input_path=args.infile)
    if args.output_dir:
        cfg = dataclasses.replace(cfg, output_dir=args.output_dir)
    try:
        result = pipeline.run_pipeline(cfg)
    except (pipeline.ConfigInvalid, pipeline.StageFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_ERROR
    written = pipeline.write_outputs(result, cfg)
    for path in written:
        print(f"wrote {path}")
    if result.exit_code == pipeline.EXIT_ALARM:
        print("pipeline halted: journey integration alarm", file=sys.stderr)
    return result.exit_code


def cmd_serve(args) -> int:
    from .server import serve

    log = _load_log(args.infile)
    try:
        serve(log, port=args.port, state_dir=args.state_dir, static_dir=args.static_dir)
    except OSError as exc:  # port busy and friends
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clickprep",
        description="Clickstream cleaning and recommendation-metric evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic log")
    p.add_argument("--config", help="SynthConfig JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse, normalize, and deduplicate a raw log")
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    p.add_argument("--rates", help="rate table JSON")
    p.add_argument("--base", default="USD")
    p.add_argument("--default-utc-offset", type=int, default=None,
                   help="minutes offset for zone-less timestamps")
    p.add_argument("--session-gap", type=int, default=1800, help="seconds")
    p.add_argument("--glitch-window", type=int, default=2, help="seconds")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rejects")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("identity", help="resolve cookie/user ids to customer ids")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_identity)

    p = sub.add_parser("clean", help="behavior filters: b2b, bounce, bots, newcust")
    p.add_argument("--rules", default="bounce,b2b,bots")
    p.add_argument("--b2b-m", type=float, default=5.0)
    p.add_argument("--bot-config", help="JSON with user_agents (globs) and ips (CIDRs)")
    p.add_argument("--newcust-ratio", type=float, default=0.7)
    p.add_argument("--newcust-x-max", type=int, default=10)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("journey", help="combo expansion and journey audit")
    p.add_argument("--combos", help="CSV with sku,combo_id header")
    p.add_argument("--quick-buy", choices=("true", "false"), default="false")
    p.add_argument("--alarm", type=float, default=0.05)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_journey)

    p = sub.add_parser("outliers", help="bootstrap outlier-limit estimation")
    p.add_argument("--metric", choices=("views", "buys"), required=True)
    p.add_argument("--k", type=int, default=7, help="per-tail trim depth")
    p.add_argument("--iters", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-size", type=int, default=None,
                   help="bootstrap sample size (default: 1%% of population)")
    p.add_argument("--limit", type=int, default=None,
                   help="record this limit instead of searching")
    p.add_argument("--prominence", type=float, default=outliers.DEFAULT_PROMINENCE)
    p.add_argument("--noise-prominence", type=float, default=outliers.DEFAULT_NOISE_PROMINENCE)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--decision")
    p.add_argument("--hist")
    p.add_argument("--out", help="write the filtered log here")
    p.set_defaults(func=cmd_outliers)

    p = sub.add_parser("metrics", help="attribution and CTR/ATC-TR/BTR/revenue")
    p.add_argument("--windows", default="300,1800,86400",
                   help="click,atc,buy windows in seconds")
    p.add_argument("--plp-top-n", type=int, default=8)
    p.add_argument("--plp-all-pages", action="store_true")
    p.add_argument("--low-visibility-fraction", type=float, default=0.25)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--report")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("aa", help="A/A split comparison")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int, default=5, help="minimum days required")
    p.add_argument("--diff-max", type=float, default=0.10)
    p.add_argument("--corr-min", type=float, default=0.8)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--verdict")
    p.set_defaults(func=cmd_aa)

    p = sub.add_parser("run", help="run the full pipeline from a config file")
    p.add_argument("--config", help="PipelineConfig JSON")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--in", dest="infile")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("serve", help="loopback JSON API for the inspector UI")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--state-dir")
    p.add_argument("--static-dir")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
