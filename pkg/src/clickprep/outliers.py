"""Robust outlier-limit estimation on per-customer daily activity counts.

Two routes: the Hampel X84 rule (median + x * 1.4826 * MAD) as the cheap
parametric-ish baseline, and a non-parametric bootstrap procedure that
resamples the population, histograms the (mean - trimmed mean) statistic,
and trims the upper tail until the histogram is a noise-free single bell.
The bootstrap route needs no distributional assumption, which matters
because daily activity counts are heavy-tailed rather than normal (see
:func:`normality_probe`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace
from enum import Enum

import numpy as np
from scipy.signal import find_peaks
from scipy.stats import gaussian_kde, probplot

from .events import CleaningReport, EventLog, EventType, day_index

HAMPEL_SCALE = 1.4826  # one normal sigma expressed in MADs
HIST_BINS = 200  # fixed so CLI, API, and UI render identical plots
DEFAULT_PROMINENCE = 0.05
DEFAULT_NOISE_PROMINENCE = 0.01
MIN_BUY_SAMPLE = 50  # small buy populations still need a workable sample


class EmptyPopulation(ValueError):
    pass


class InsufficientPopulation(ValueError):
    pass


class NoUnimodalLimit(RuntimeError):
    """Trimming exhausted the population without reaching a unimodal plot."""


class Metric(str, Enum):
    VIEWS_PER_DAY = "views"
    BUYS_PER_DAY = "buys"


_METRIC_EVENT = {Metric.VIEWS_PER_DAY: EventType.CLICK, Metric.BUYS_PER_DAY: EventType.BUY}


@dataclass(frozen=True)
class ActivityPopulation:
    """One activity count per (customer, day); zero-activity pairs are absent.

    ``customers``/``days`` are optional provenance arrays parallel to
    ``values``; decisions can only name flagged customers when present.
    """

    metric: Metric
    values: np.ndarray
    customers: tuple[str, ...] | None = None
    days: tuple[int, ...] | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        if values.size and values.min() < 1:
            raise ValueError("activity counts must be >= 1")
        object.__setattr__(self, "values", values)
        if self.customers is not None and len(self.customers) != values.size:
            raise ValueError("customers provenance must parallel values")

    def __len__(self) -> int:
        return int(self.values.size)

    @classmethod
    def from_log(cls, log: EventLog, metric: Metric) -> "ActivityPopulation":
        """Count CLICK (views) or BUY events per (customer, UTC day)."""
        wanted = _METRIC_EVENT[metric]
        counts: dict[tuple[str, int], int] = {}
        for ev in log:
            if ev.event_type != wanted:
                continue
            key = ev.customer_key()
            if key is None:
                continue
            counts[(key, day_index(ev.timestamp_utc))] = (
                counts.get((key, day_index(ev.timestamp_utc)), 0) + 1
            )
        items = sorted(counts.items())
        return cls(
            metric=metric,
            values=np.array([c for _, c in items], dtype=np.int64),
            customers=tuple(k[0] for k, _ in items),
            days=tuple(k[1] for k, _ in items),
        )


@dataclass(frozen=True)
class BootlierParams:
    """Bootstrap controls: resample size, per-tail trim depth, iterations."""

    sample_size: int
    trim_depth: int
    iterations: int = 50_000
    seed: int = 0
    prominence: float = DEFAULT_PROMINENCE
    noise_prominence: float = DEFAULT_NOISE_PROMINENCE

    def __post_init__(self):
        if self.trim_depth < 1:
            raise ValueError("trim_depth must be >= 1")
        if self.sample_size < 2 * self.trim_depth + 2:
            raise ValueError("sample_size must be >= 2 * trim_depth + 2")
        if self.iterations < 1000:
            raise ValueError("iterations must be >= 1000")
        if not 0 < self.noise_prominence <= self.prominence < 1:
            raise ValueError("need 0 < noise_prominence <= prominence < 1")


@dataclass(frozen=True)
class BootlierHistogram:
    """The (mean - trimmed mean) bootstrap statistics plus fixed-width bins.

    ``value_spacing`` is the granularity of the source population (1 for
    counts); it sets the scale below which histogram structure is
    quantization, not modality.
    """

    statistics: np.ndarray
    bin_edges: np.ndarray
    bin_counts: np.ndarray
    params: BootlierParams
    population_size: int
    value_spacing: float = 0.0

    def to_dict(self) -> dict:
        """Plot-ready payload: bins only, not the raw statistic samples."""
        return {
            "bin_edges": [float(x) for x in self.bin_edges],
            "bin_counts": [int(x) for x in self.bin_counts],
            "iterations": int(self.statistics.size),
            "population_size": self.population_size,
            "params": {
                "sample_size": self.params.sample_size,
                "trim_depth": self.params.trim_depth,
                "iterations": self.params.iterations,
                "seed": self.params.seed,
            },
        }


class Verdict(str, Enum):
    UNIMODAL = "UNIMODAL"
    NOISY = "NOISY"
    MULTIMODAL = "MULTIMODAL"


@dataclass(frozen=True)
class ModalityResult:
    verdict: Verdict
    peak_count: int
    strong_peaks: int
    weak_peaks: int
    density_x: np.ndarray
    density_y: np.ndarray
    peak_positions: tuple[tuple[float, float], ...] = ()  # (x, density) per weak peak

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "peak_count": self.peak_count,
            "strong_peaks": self.strong_peaks,
            "weak_peaks": self.weak_peaks,
            "peak_positions": [
                {"x": x, "density": y} for x, y in self.peak_positions
            ],
            "density": {
                "x": [float(v) for v in self.density_x],
                "y": [float(v) for v in self.density_y],
            },
        }


@dataclass(frozen=True)
class TraceStep:
    candidate_limit: int
    verdict: Verdict
    peak_count: int
    population_size: int
    sample_size: int


@dataclass(frozen=True)
class OutlierDecision:
    metric: Metric
    final_limit: int
    removal_trace: tuple[TraceStep, ...]
    customers_flagged: frozenset[str]
    flagged_fraction: float
    params: BootlierParams

    def to_dict(self) -> dict:
        return {
            "metric": self.metric.value,
            "final_limit": self.final_limit,
            "flagged_fraction": self.flagged_fraction,
            "customers_flagged": sorted(self.customers_flagged),
            "removal_trace": [
                {
                    "candidate_limit": s.candidate_limit,
                    "verdict": s.verdict.value,
                    "peak_count": s.peak_count,
                    "population_size": s.population_size,
                    "sample_size": s.sample_size,
                }
                for s in self.removal_trace
            ],
            "params": {
                "sample_size": self.params.sample_size,
                "trim_depth": self.params.trim_depth,
                "iterations": self.params.iterations,
                "seed": self.params.seed,
                "prominence": self.params.prominence,
                "noise_prominence": self.params.noise_prominence,
            },
        }


def mad(values) -> float:
    """Median absolute deviation from the median."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise EmptyPopulation("cannot take MAD of an empty population")
    return float(np.median(np.abs(arr - np.median(arr))))


def hampel_limit(median: float, mad_value: float, x: float = 2.0) -> float:
    """Upper activity limit: median + x * 1.4826 * MAD.

    x is the number of normal-equivalent standard deviations tolerated
    before a count is called an outlier.
    """
    if mad_value < 0:
        raise ValueError("MAD must be non-negative")
    if x <= 0:
        raise ValueError("x must be positive")
    return median + x * HAMPEL_SCALE * mad_value


def _sample_statistics(values: np.ndarray, params: BootlierParams, rng) -> np.ndarray:
    """Vectorized (mean - trimmed mean) over bootstrap resamples, chunked."""
    n, k, iters = params.sample_size, params.trim_depth, params.iterations
    pop = values.astype(np.float64)
    out = np.empty(iters, dtype=np.float64)
    chunk = max(1, min(iters, 4_000_000 // n))
    done = 0
    while done < iters:
        m = min(chunk, iters - done)
        idx = rng.integers(0, pop.size, size=(m, n))
        samples = pop[idx]
        samples.sort(axis=1)
        means = samples.mean(axis=1)
        trimmed = samples[:, k : n - k].mean(axis=1)
        out[done : done + m] = means - trimmed
        done += m
    return out


def bootlier_histogram(pop: ActivityPopulation, params: BootlierParams) -> BootlierHistogram:
    """Resample the population and histogram the mean-minus-trimmed-mean statistic."""
    if params.sample_size > len(pop):
        raise InsufficientPopulation(
            f"sample_size {params.sample_size} exceeds population {len(pop)}"
        )
    rng = np.random.default_rng(params.seed)
    stats = _sample_statistics(pop.values, params, rng)
    lo, hi = float(stats.min()), float(stats.max())
    if lo == hi:  # degenerate: all statistics identical
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(stats, bins=HIST_BINS, range=(lo, hi))
    distinct = np.unique(pop.values)
    spacing = float(np.diff(distinct).min()) if distinct.size > 1 else 0.0
    return BootlierHistogram(
        statistics=stats,
        bin_edges=edges,
        bin_counts=counts,
        params=params,
        population_size=len(pop),
        value_spacing=spacing,
    )


def modality(
    hist: BootlierHistogram,
    prominence: float | None = None,
    noise_prominence: float | None = None,
    grid_points: int = 512,
) -> ModalityResult:
    """Classify the statistic histogram as UNIMODAL, NOISY, or MULTIMODAL.

    A Gaussian KDE (Silverman bandwidth) smooths the statistics; local
    maxima whose prominence reaches a fraction of the global density peak
    count as modes. Extra modes at the strong threshold mean outliers are
    clearly present; extra modes only at the weak threshold mean the plot
    is still too noisy to call outlier-free.
    """
    strong = prominence if prominence is not None else hist.params.prominence
    weak = noise_prominence if noise_prominence is not None else hist.params.noise_prominence
    if not 0 < weak <= strong < 1:
        raise ValueError("need 0 < noise_prominence <= prominence < 1")

    stats = hist.statistics
    if stats.size == 0:
        raise EmptyPopulation("empty histogram")
    if float(stats.max()) == float(stats.min()):
        xs = np.linspace(stats.min() - 0.5, stats.max() + 0.5, grid_points)
        ys = np.zeros_like(xs)
        ys[grid_points // 2] = 1.0
        peak = ((float(stats.min()), 1.0),)
        return ModalityResult(Verdict.UNIMODAL, 1, 1, 1, xs, ys, peak)

    kde = gaussian_kde(stats, bw_method="silverman")
    bandwidth = float(np.sqrt(kde.covariance[0, 0]))
    # Keep the bandwidth at or above the statistic's quantization scale:
    # on integer counts the trimmed mean moves in steps of
    # spacing / (sample_size - 2 * trim_depth), and structure finer than
    # that is lattice artifact, not modality.
    kept = hist.params.sample_size - 2 * hist.params.trim_depth
    lattice = hist.value_spacing / kept if kept > 0 else 0.0
    if lattice > bandwidth:
        data_sigma = bandwidth / kde.factor  # the sigma the factor scales
        bandwidth = lattice
        kde.set_bandwidth(bandwidth / data_sigma)
    pad = 3.0 * bandwidth
    xs = np.linspace(float(stats.min()) - pad, float(stats.max()) + pad, grid_points)
    ys = kde(xs)
    peak_floor = ys.max()

    strong_idx, _ = find_peaks(ys, prominence=strong * peak_floor)
    weak_idx, _ = find_peaks(ys, prominence=weak * peak_floor)
    strong_count = max(1, int(strong_idx.size))
    weak_count = max(strong_count, int(weak_idx.size))
    marker_idx = weak_idx if weak_idx.size else np.array([int(np.argmax(ys))])
    peaks = tuple((float(xs[i]), float(ys[i])) for i in marker_idx)

    if strong_count > 1:
        verdict, peak_count = Verdict.MULTIMODAL, strong_count
    elif weak_count > 1:
        verdict, peak_count = Verdict.NOISY, weak_count
    else:
        verdict, peak_count = Verdict.UNIMODAL, 1
    return ModalityResult(verdict, peak_count, strong_count, weak_count, xs, ys, peaks)


def _step_seed(base_seed: int, step: int) -> int:
    return int(np.random.SeedSequence([base_seed, step]).generate_state(1)[0])


def _sample_size_for(pop_size: int, metric: Metric, trim_depth: int) -> int:
    """One percent of the population, floored for small buy populations."""
    n = math.ceil(0.01 * pop_size)
    if metric == Metric.BUYS_PER_DAY:
        n = max(n, MIN_BUY_SAMPLE)
    return max(n, 2 * trim_depth + 2)


def find_outlier_limit(
    pop: ActivityPopulation,
    params: BootlierParams,
    *,
    recompute_sample_size: bool = True,
) -> OutlierDecision:
    """Trim candidate limits down the upper tail until the plot is unimodal.

    Candidates descend through the distinct observed counts starting at
    the maximum; the first (largest) candidate whose restricted population
    yields a unimodal bootstrap histogram becomes the limit. The resample
    size tracks 1% of the current population unless
    ``recompute_sample_size`` is off, which reproduces a fixed-size run.
    """
    values = pop.values
    if values.size == 0:
        raise EmptyPopulation("empty activity population")
    median0 = float(np.median(values))
    candidates = np.unique(values)[::-1]
    trace: list[TraceStep] = []

    for step, candidate in enumerate(int(c) for c in candidates):
        if candidate < median0:
            break
        subset = values[values <= candidate]
        if recompute_sample_size:
            n = _sample_size_for(subset.size, pop.metric, params.trim_depth)
        else:
            n = params.sample_size
        if subset.size < max(n, 2 * params.trim_depth + 2):
            break
        step_params = dc_replace(params, sample_size=n, seed=_step_seed(params.seed, step))
        hist = bootlier_histogram(
            ActivityPopulation(metric=pop.metric, values=subset), step_params
        )
        result = modality(hist, params.prominence, params.noise_prominence)
        trace.append(
            TraceStep(candidate, result.verdict, result.peak_count, int(subset.size), n)
        )
        if result.verdict == Verdict.UNIMODAL:
            flagged, fraction = _flagged_customers(pop, candidate)
            return OutlierDecision(
                metric=pop.metric,
                final_limit=candidate,
                removal_trace=tuple(trace),
                customers_flagged=flagged,
                flagged_fraction=fraction,
                params=params,
            )

    raise NoUnimodalLimit(
        f"no unimodal limit at or above the population median ({median0}); "
        f"inspected {len(trace)} candidates"
    )


def _flagged_customers(pop: ActivityPopulation, limit: int) -> tuple[frozenset[str], float]:
    if pop.customers is None:
        return frozenset(), 0.0
    flagged = frozenset(
        c for c, v in zip(pop.customers, pop.values) if int(v) > limit
    )
    total = len(set(pop.customers))
    return flagged, (len(flagged) / total if total else 0.0)


def decision_for_limit(pop: ActivityPopulation, limit: int, params: BootlierParams) -> OutlierDecision:
    """Package a manually chosen limit (e.g. from the inspector UI) as a decision."""
    subset = pop.values[pop.values <= limit]
    if subset.size >= max(params.sample_size, 2 * params.trim_depth + 2):
        hist = bootlier_histogram(ActivityPopulation(metric=pop.metric, values=subset), params)
        result = modality(hist, params.prominence, params.noise_prominence)
        step = TraceStep(int(limit), result.verdict, result.peak_count, int(subset.size), params.sample_size)
    else:
        step = TraceStep(int(limit), Verdict.UNIMODAL, 1, int(subset.size), params.sample_size)
    flagged, fraction = _flagged_customers(pop, int(limit))
    return OutlierDecision(
        metric=pop.metric,
        final_limit=int(limit),
        removal_trace=(step,),
        customers_flagged=flagged,
        flagged_fraction=fraction,
        params=params,
    )


def apply_outlier_filter(
    log: EventLog, decisions: list[OutlierDecision]
) -> tuple[EventLog, CleaningReport]:
    """Remove all events of any (customer, day) whose count exceeds its limit.

    The comparison is strict: a customer sitting exactly at the limit is
    retained.
    """
    report = CleaningReport()
    doomed_days: set[tuple[str, int]] = set()
    flagged_customers: set[str] = set()

    for decision in decisions:
        wanted = _METRIC_EVENT[decision.metric]
        counts: dict[tuple[str, int], int] = {}
        for ev in log:
            if ev.event_type != wanted:
                continue
            key = ev.customer_key()
            if key is None:
                continue
            day = day_index(ev.timestamp_utc)
            counts[(key, day)] = counts.get((key, day), 0) + 1
        over = {k for k, v in counts.items() if v > decision.final_limit}
        removed = sum(
            1
            for ev in log
            if ev.customer_key() is not None
            and (ev.customer_key(), day_index(ev.timestamp_utc)) in over
            and (ev.customer_key(), day_index(ev.timestamp_utc)) not in doomed_days
        )
        doomed_days |= over
        metric_customers = {c for c, _ in over}
        flagged_customers |= metric_customers
        total_customers = len(log.customer_ids())
        report.add(
            f"outlier_{decision.metric.value}",
            removed,
            {
                "limit": decision.final_limit,
                "flagged_customer_fraction": (
                    len(metric_customers) / total_customers if total_customers else 0.0
                ),
            },
            customers=len(metric_customers),
        )

    if not doomed_days:
        return log, report

    def keep(ev) -> bool:
        key = ev.customer_key()
        return key is None or (key, day_index(ev.timestamp_utc)) not in doomed_days

    return log.filter(keep), report


class NormalityVerdict(str, Enum):
    NORMAL = "NORMAL"
    NON_NORMAL = "NON_NORMAL"


@dataclass(frozen=True)
class NormalityProbe:
    density_x: np.ndarray
    density_y: np.ndarray
    qq_theoretical: np.ndarray
    qq_observed: np.ndarray
    qq_correlation: float
    verdict: NormalityVerdict

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "qq_correlation": self.qq_correlation,
            "density": {
                "x": [float(v) for v in self.density_x],
                "y": [float(v) for v in self.density_y],
            },
            "qq": {
                "theoretical": [float(v) for v in self.qq_theoretical],
                "observed": [float(v) for v in self.qq_observed],
            },
        }


def normality_probe(pop: ActivityPopulation, *, min_correlation: float = 0.95) -> NormalityProbe:
    """Plot-ready density and Q-Q data plus a normal / non-normal verdict."""
    values = pop.values.astype(np.float64)
    if values.size < 20:
        raise InsufficientPopulation("normality probe needs at least 20 values")

    if float(values.max()) == float(values.min()):
        xs = np.linspace(values.min() - 1, values.max() + 1, 256)
        ys = np.zeros_like(xs)
        osm = np.zeros(values.size)
        return NormalityProbe(xs, ys, osm, values, 0.0, NormalityVerdict.NON_NORMAL)

    kde = gaussian_kde(values, bw_method="silverman")
    xs = np.linspace(float(values.min()), float(values.max()), 256)
    ys = kde(xs)
    (osm, osr), (_slope, _intercept, r) = probplot(values, dist="norm")
    correlation = float(r)
    verdict = (
        NormalityVerdict.NORMAL
        if np.isfinite(correlation) and correlation >= min_correlation
        else NormalityVerdict.NON_NORMAL
    )
    return NormalityProbe(xs, ys, osm, osr, correlation, verdict)


__all__ = [
    "Metric",
    "ActivityPopulation",
    "BootlierParams",
    "BootlierHistogram",
    "Verdict",
    "ModalityResult",
    "TraceStep",
    "OutlierDecision",
    "NormalityVerdict",
    "NormalityProbe",
    "EmptyPopulation",
    "InsufficientPopulation",
    "NoUnimodalLimit",
    "mad",
    "hampel_limit",
    "bootlier_histogram",
    "modality",
    "find_outlier_limit",
    "decision_for_limit",
    "apply_outlier_filter",
    "normality_probe",
    "HAMPEL_SCALE",
    "HIST_BINS",
    "MIN_BUY_SAMPLE",
    "DEFAULT_PROMINENCE",
    "DEFAULT_NOISE_PROMINENCE",
]
