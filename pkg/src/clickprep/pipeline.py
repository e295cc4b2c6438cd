"""Pipeline orchestration: fixed stage order, consolidated reporting.

Stage order is ingest, dedup, identity, behavior cleaning, journey,
outliers, metrics, A/A. Behavior cleaning runs before the outlier stage
so bot and reseller traffic cannot masquerade as outlier customers, and
the journey audit halts everything when violations look like an
integration fault rather than noise.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from . import behavior, identity, ingest, journey, metrics, outliers, validation
from .events import EventLog, LogMetadata

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ALARM = 2

_DEFAULT_CLICK_WINDOW_MS = metrics.DEFAULT_CLICK_WINDOW_MS
_DEFAULT_ATC_WINDOW_MS = metrics.DEFAULT_ATC_WINDOW_MS
_DEFAULT_BUY_WINDOW_MS = metrics.DEFAULT_BUY_WINDOW_MS
_DEFAULT_SESSION_GAP_MS = ingest.DEFAULT_SESSION_GAP_MS
_DEFAULT_GLITCH_WINDOW_MS = ingest.DEFAULT_GLITCH_WINDOW_MS
_DEFAULT_PROMINENCE = outliers.DEFAULT_PROMINENCE
_DEFAULT_NOISE_PROMINENCE = outliers.DEFAULT_NOISE_PROMINENCE

STAGES = ("ingest", "dedup", "identity", "behavior", "journey", "outliers", "metrics", "aa")


class ConfigInvalid(ValueError):
    pass


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    input_path: str | None = None
    input_format: str = "jsonl"
    output_dir: str | None = None
    base_currency: str = "USD"
    rates: dict[str, float] | None = None
    default_utc_offset_minutes: int | None = None
    seed: int = 0

    # stage toggles
    dedup: bool = True
    identity: bool = True
    behavior_rules: tuple[str, ...] = ("bounce", "b2b", "bots")
    journey: bool = True
    outlier_metrics: tuple[str, ...] = ("views", "buys")
    metrics: bool = True
    aa: bool = True
    halt_on_alarm: bool = True

    # dedup
    session_gap_ms: int = _DEFAULT_SESSION_GAP_MS
    glitch_window_ms: int = _DEFAULT_GLITCH_WINDOW_MS

    # behavior
    b2b_m: float = 5.0
    bot_user_agents: tuple[str, ...] = ()
    bot_ips: tuple[str, ...] = ()
    bot_rate_threshold: float = 1.0
    bot_regularity_min_events: int = 20
    bot_regularity_cv_max: float = 0.1
    newcust_enabled: bool = False
    newcust_ratio: float = 0.7
    newcust_x_max: int = 10
    newcust_min_customers: int = 20

    # journey
    quick_buy: bool = False
    journey_alarm: float = 0.05
    combos_path: str | None = None

    # outliers
    trim_depth_views: int = 7
    trim_depth_buys: int = 3
    bootstrap_iterations: int = 50_000
    prominence: float = _DEFAULT_PROMINENCE
    noise_prominence: float = _DEFAULT_NOISE_PROMINENCE

    # metrics
    click_window_ms: int = _DEFAULT_CLICK_WINDOW_MS
    atc_window_ms: int = _DEFAULT_ATC_WINDOW_MS
    buy_window_ms: int = _DEFAULT_BUY_WINDOW_MS
    plp_top_n: int = 8
    plp_first_page_only: bool = True
    low_visibility_fraction: float = 0.25

    # A/A
    aa_seed: int | None = None
    aa_diff_max: float = 0.10
    aa_corr_min: float = 0.8
    aa_min_days: int = 5

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        coerced = {}
        for key, value in data.items():
            if isinstance(value, list):
                value = tuple(value)
            coerced[key] = value
        try:
            return cls(**coerced)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def with_overrides(self, pairs: list[str]) -> "PipelineConfig":
        """Apply ``--set key=value`` overrides, coercing to the field type."""
        updates = {}
        for pair in pairs:
            if "=" not in pair:
                raise ConfigInvalid(f"override {pair!r} is not key=value")
            key, raw = pair.split("=", 1)
            key = key.strip()
            if not hasattr(self, key):
                raise ConfigInvalid(f"unknown config key {key!r}")
            current = getattr(self, key)
            updates[key] = _coerce(raw.strip(), current)
        return dataclasses.replace(self, **updates)

    def windows(self) -> metrics.AttributionWindows:
        return metrics.AttributionWindows(
            click_ms=self.click_window_ms,
            atc_ms=self.atc_window_ms,
            buy_ms=self.buy_window_ms,
        )

    def plp_gate(self) -> metrics.PlpGate:
        return metrics.PlpGate(top_n=self.plp_top_n, first_page_only=self.plp_first_page_only)

    def bot_config(self) -> behavior.BotConfig:
        return behavior.BotConfig(
            signature_user_agents=self.bot_user_agents,
            signature_ips=self.bot_ips,
            rate_threshold=self.bot_rate_threshold,
            regularity_min_events=self.bot_regularity_min_events,
            regularity_cv_max=self.bot_regularity_cv_max,
        )


def _coerce(raw: str, current):
    if isinstance(current, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(x.strip() for x in raw.split(",") if x.strip())
    if current is None:
        for caster in (int, float):
            try:
                return caster(raw)
            except ValueError:
                continue
        return raw
    return raw


@dataclass
class PipelineResult:
    exit_code: int
    report: dict
    log: EventLog | None = None

    def dumps(self) -> str:
        return json.dumps(self.report, indent=2, sort_keys=True) + "\n"


def run_pipeline(cfg: PipelineConfig, log: EventLog | None = None) -> PipelineResult:
    """Execute the enabled stages in order over a file or an in-memory log."""
    report: dict = {stage: {"enabled": False} for stage in STAGES}

    try:
        if log is None:
            if cfg.input_path is None:
                raise ConfigInvalid("no input_path configured and no log supplied")
            log, rejects = ingest.parse_events_file(
                cfg.input_path,
                cfg.input_format,
                metadata=LogMetadata(source=str(cfg.input_path), base_currency=cfg.base_currency),
                default_utc_offset_minutes=cfg.default_utc_offset_minutes,
            )
            report["ingest"] = {
                "enabled": True,
                "parsed": len(log),
                "rejected": len(rejects),
                "rejects": rejects.to_dict()["lines"],
            }
        else:
            report["ingest"] = {"enabled": True, "parsed": len(log), "rejected": 0,
                                "rejects": [], "source": "in-memory"}

        if cfg.rates:
            table = ingest.RateTable(base=cfg.base_currency, rates=cfg.rates)
            log = ingest.normalize_currency(log, table)
            report["ingest"]["normalized_to"] = cfg.base_currency
    except (ingest.UnknownFormat, ingest.UnreadableStream, ingest.MissingRate, OSError) as exc:
        raise StageFailure("ingest", exc) from exc

    if cfg.dedup:
        policy = ingest.DedupPolicy(
            session_gap_ms=cfg.session_gap_ms, glitch_window_ms=cfg.glitch_window_ms
        )
        log, dedup_report = ingest.deduplicate(log, policy)
        report["dedup"] = {"enabled": True, **dedup_report.to_dict()}

    if cfg.identity:
        log, id_report = identity.resolve(log)
        cleaning = identity.resolution_cleaning_report(id_report)
        report["identity"] = {
            "enabled": True,
            **id_report.to_dict(),
            "cleaning": cleaning.to_dict(),
        }

    if cfg.behavior_rules:
        section, log = _behavior_stage(cfg, log)
        report["behavior"] = section

    if cfg.journey:
        try:
            section, log, halted = _journey_stage(cfg, log)
        except journey.AlarmRefusal as exc:  # pragma: no cover - defensive
            raise StageFailure("journey", exc) from exc
        report["journey"] = section
        if halted:
            report["halted"] = "journey integration alarm"
            return PipelineResult(EXIT_ALARM, report, log)

    if cfg.outlier_metrics:
        section, log = _outlier_stage(cfg, log)
        report["outliers"] = section

    if cfg.metrics:
        report["metrics"] = _metrics_stage(cfg, log)

    if cfg.aa:
        report["aa"] = _aa_stage(cfg, log)

    return PipelineResult(EXIT_OK, report, log)


def _behavior_stage(cfg: PipelineConfig, log: EventLog) -> tuple[dict, EventLog]:
    section: dict = {"enabled": True, "rules": {}}
    flags: list[behavior.FlagSet] = []
    for rule in cfg.behavior_rules:
        if rule == "bounce":
            flag_set = behavior.detect_bounces(log)
        elif rule == "b2b":
            try:
                flag_set = behavior.detect_b2b(log, behavior.B2BConfig(m=cfg.b2b_m))
            except behavior.NoPurchases:
                section["rules"]["b2b"] = {"skipped": "no purchases in log"}
                continue
        elif rule == "bots":
            flag_set = behavior.detect_bots(log, cfg.bot_config())
        else:
            raise ConfigInvalid(f"unknown behavior rule {rule!r}")
        section["rules"][rule] = {"flagged": len(flag_set)}
        flags.append(flag_set)

    if cfg.newcust_enabled:
        try:
            x, table = behavior.new_customer_cutoff(
                log,
                cfg.newcust_ratio,
                cfg.newcust_x_max,
                windows=cfg.windows(),
                gate=cfg.plp_gate(),
                min_customers=cfg.newcust_min_customers,
            )
            section["rules"]["new_customer"] = {
                "x": x,
                "table": [
                    {"x": row[0], "ctr_at_or_below": row[1], "ctr_above": row[2]}
                    for row in table
                ],
            }
            if x > 0:
                flags.append(
                    behavior.new_customer_flags(log, x, windows=cfg.windows(), gate=cfg.plp_gate())
                )
        except behavior.InsufficientData as exc:
            section["rules"]["new_customer"] = {"skipped": str(exc)}

    log, cleaning = behavior.apply_flags(log, flags)
    section["cleaning"] = cleaning.to_dict()
    return section, log


def _journey_stage(cfg: PipelineConfig, log: EventLog) -> tuple[dict, EventLog, bool]:
    section: dict = {"enabled": True}
    if cfg.combos_path:
        combo_map = journey.ComboMap.from_csv(cfg.combos_path)
        before = len(log)
        log = journey.expand_combos(log, combo_map)
        section["combo_expansion"] = {
            "mapped_skus": len(combo_map),
            "events_collapsed": before - len(log),
        }
    policy = journey.JourneyPolicy(
        quick_buy_enabled=cfg.quick_buy, violation_rate_alarm=cfg.journey_alarm
    )
    audit = journey.audit_journeys(log, policy)
    section["audit"] = audit.to_dict()
    if audit.verdict == journey.JourneyVerdict.INTEGRATION_ALARM:
        if cfg.halt_on_alarm:
            return section, log, True
        section["note"] = "alarm raised but halt_on_alarm disabled; no removals"
        return section, log, False
    if audit.verdict == journey.JourneyVerdict.REMOVE_VIOLATORS:
        log, cleaning = journey.remove_violators(log, audit)
        section["cleaning"] = cleaning.to_dict()
    return section, log, False


def _outlier_stage(cfg: PipelineConfig, log: EventLog) -> tuple[dict, EventLog]:
    section: dict = {"enabled": True, "metrics": {}}
    decisions = []
    for name in cfg.outlier_metrics:
        metric = outliers.Metric(name)
        trim = cfg.trim_depth_views if metric == outliers.Metric.VIEWS_PER_DAY else cfg.trim_depth_buys
        pop = outliers.ActivityPopulation.from_log(log, metric)
        floor = outliers.MIN_BUY_SAMPLE if metric == outliers.Metric.BUYS_PER_DAY else 0
        min_size = max(2 * trim + 2, floor)
        if len(pop) < min_size:
            section["metrics"][name] = {
                "skipped": f"population of {len(pop)} below minimum {min_size}"
            }
            continue
        params = outliers.BootlierParams(
            sample_size=min_size,
            trim_depth=trim,
            iterations=cfg.bootstrap_iterations,
            seed=cfg.seed,
            prominence=cfg.prominence,
            noise_prominence=cfg.noise_prominence,
        )
        try:
            decision = outliers.find_outlier_limit(pop, params)
        except (outliers.NoUnimodalLimit, outliers.InsufficientPopulation) as exc:
            section["metrics"][name] = {"error": f"{type(exc).__name__}: {exc}"}
            continue
        section["metrics"][name] = decision.to_dict()
        decisions.append(decision)
    log, cleaning = outliers.apply_outlier_filter(log, decisions)
    section["cleaning"] = cleaning.to_dict()
    return section, log


def _metrics_stage(cfg: PipelineConfig, log: EventLog) -> dict:
    attr = metrics.attribute(log, cfg.windows(), cfg.plp_gate())
    rep = metrics.rates(attr)
    section: dict = {"enabled": True}
    try:
        metrics.flag_low_visibility(rep, cfg.low_visibility_fraction)
    except ValueError as exc:
        section["low_visibility_note"] = str(exc)
    section["report"] = rep.to_dict()
    section["excluded_interactions"] = dict(sorted(attr.excluded.items()))
    try:
        section["conversion_revenue"] = round(metrics.conversion_revenue(attr, log), 6)
    except (metrics.MissingPrice, metrics.CurrencyMismatch) as exc:
        section["conversion_revenue_error"] = f"{type(exc).__name__}: {exc}"
    return section


def _aa_stage(cfg: PipelineConfig, log: EventLog) -> dict:
    section: dict = {"enabled": True}
    have_flags = any(ev.segment_flag is not None for ev in log)
    if not have_flags:
        if cfg.aa_seed is None:
            return {**section, "skipped": "no segment flags and no aa_seed configured"}
        segmap = validation.assign_segments(log.customer_ids(), cfg.aa_seed)
        log = validation.stamp_segments(log, segmap)
        section["assigned"] = segmap.counts()
    attr = metrics.attribute(log, cfg.windows(), cfg.plp_gate())
    rep = metrics.rates(attr)
    a1, a2 = validation.daily_ctr_by_segment(rep.cells)
    try:
        verdict = validation.compare_aa(
            a1, a2, cfg.aa_diff_max, cfg.aa_corr_min, cfg.aa_min_days
        )
        section["verdict"] = verdict.to_dict()
    except validation.SeriesTooShort as exc:
        section["skipped"] = str(exc)
    return section


def write_outputs(result: PipelineResult, cfg: PipelineConfig) -> list[str]:
    """Write the consolidated report (and cleaned log) into output_dir."""
    if cfg.output_dir is None:
        return []
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    report_path = out / "pipeline_report.json"
    report_path.write_text(result.dumps(), encoding="utf-8")
    written.append(str(report_path))
    if result.log is not None:
        log_path = out / "cleaned.jsonl"
        result.log.to_jsonl(log_path)
        written.append(str(log_path))
    return written


__all__ = [
    "PipelineConfig",
    "PipelineResult",
    "ConfigInvalid",
    "StageFailure",
    "run_pipeline",
    "write_outputs",
    "EXIT_OK",
    "EXIT_ERROR",
    "EXIT_ALARM",
    "STAGES",
]
