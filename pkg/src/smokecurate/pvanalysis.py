"""Solar-PV attenuation analysis: join PV production, cloud cover and archived
PM2.5; classify clear-sky days; compute peak-window aggregates and smoky/clear
output ratios; fit the linear trend.

Local time is a fixed UTC offset (default UTC-6); days dropped for PM2.5 gaps
are reported, never imputed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .archive import CuratedArchive
from .query import SamplingMode, sample_series
from .timecal import UTC

PEAK_START_HOUR = 10          # local, inclusive
PEAK_END_HOUR = 16            # local, exclusive for PV records
DEFAULT_UTC_OFFSET_HOURS = -6
DEFAULT_CLEAR_SKY_THRESHOLD = 0.01
DEFAULT_CLOUD_MAX_PCT = 20.0
PAIRING_WINDOW_DAYS = 7


class InsufficientDataError(ValueError):
    pass


class EmptyJoinError(ValueError):
    pass


class PairingError(ValueError):
    pass


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class SolarRecord:
    timestamp: datetime   # timezone-aware
    energy_kwh: float     # per 15-minute interval


@dataclass
class DailyAggregate:
    day: date
    avg_output: float     # kW-equivalent mean over the peak window
    avg_pm25: float
    avg_cloud: float
    clear_sky: bool
    smoky: bool
    smoothness: float


@dataclass(frozen=True)
class ExcludedDay:
    day: date
    reason: str


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def classify_clear_sky(records: Sequence[SolarRecord],
                       threshold: float = DEFAULT_CLEAR_SKY_THRESHOLD,
                       utc_offset_hours: int = DEFAULT_UTC_OFFSET_HOURS
                       ) -> tuple[bool, float]:
    """Smoothness of one day's production curve.

    Score is the normalized second-difference energy of the daylight
    (positive-production) sequence; a day is clear when the score is at or
    below the threshold. An all-zero day has no signal and is never clear.
    """
    tz = timezone(timedelta(hours=utc_offset_hours))
    in_window = [r for r in records
                 if PEAK_START_HOUR <= r.timestamp.astimezone(tz).hour < PEAK_END_HOUR]
    if len(in_window) < 8:
        raise InsufficientDataError(
            f"need >= 8 peak-window records, got {len(in_window)}")
    ordered = sorted(records, key=lambda r: r.timestamp)
    daylight = [r.energy_kwh for r in ordered if r.energy_kwh > 0]
    denom = sum(e * e for e in daylight)
    if len(daylight) < 3 or denom == 0:
        return False, math.inf
    num = sum((daylight[i + 1] - 2 * daylight[i] + daylight[i - 1]) ** 2
              for i in range(1, len(daylight) - 1))
    score = num / denom
    return score <= threshold, score


def daily_aggregates(solar: Iterable[SolarRecord],
                     cloud: dict[date, float],
                     archive: CuratedArchive,
                     site: tuple[float, float],
                     mode: SamplingMode = SamplingMode.BILINEAR,
                     smoky_flags: dict[date, bool] | None = None,
                     utc_offset_hours: int = DEFAULT_UTC_OFFSET_HOURS,
                     clear_threshold: float = DEFAULT_CLEAR_SKY_THRESHOLD
                     ) -> tuple[list[DailyAggregate], list[ExcludedDay]]:
    """Per-day peak-window means of PV output, PM2.5 and cloud cover.

    PM2.5 is sampled hourly at the site over the local peak window; any gap
    drops the day into the exclusion list.
    """
    lat, lon = site
    tz = timezone(timedelta(hours=utc_offset_hours))
    smoky_flags = smoky_flags or {}

    by_day: dict[date, list[SolarRecord]] = {}
    for rec in solar:
        if rec.energy_kwh < 0:
            raise ValueError(f"negative energy at {rec.timestamp}")
        by_day.setdefault(rec.timestamp.astimezone(tz).date(), []).append(rec)

    aggregates: list[DailyAggregate] = []
    excluded: list[ExcludedDay] = []
    for day in sorted(by_day):
        records = by_day[day]
        peak = [r for r in records
                if PEAK_START_HOUR <= r.timestamp.astimezone(tz).hour < PEAK_END_HOUR]
        if len(peak) < 8:
            excluded.append(ExcludedDay(day, "insufficient_solar_records"))
            continue
        if day not in cloud:
            excluded.append(ExcludedDay(day, "no_cloud_data"))
            continue

        t0 = datetime(day.year, day.month, day.day, PEAK_START_HOUR,
                      tzinfo=tz).astimezone(UTC)
        t1 = datetime(day.year, day.month, day.day, PEAK_END_HOUR,
                      tzinfo=tz).astimezone(UTC)
        try:
            series = sample_series(archive, t0, t1, lat, lon, mode)
        except Exception as e:
            excluded.append(ExcludedDay(day, f"pm25_unavailable: {e}"))
            continue
        if series.gaps:
            excluded.append(ExcludedDay(day, "pm25_gap"))
            continue

        clear, score = classify_clear_sky(records, clear_threshold,
                                          utc_offset_hours)
        avg_output = 4.0 * sum(r.energy_kwh for r in peak) / len(peak)
        avg_pm25 = sum(v for _, v in series.entries) / len(series.entries)
        aggregates.append(DailyAggregate(
            day, avg_output, avg_pm25, cloud[day], clear,
            smoky_flags.get(day, False), score))

    if not aggregates and not excluded:
        raise EmptyJoinError("no overlapping dates between inputs")
    return aggregates, excluded


def output_ratio(smoky_day: DailyAggregate,
                 reference_clear_day: DailyAggregate) -> float:
    """Smoky-day mean output over a paired clear-sky day's mean output."""
    if not reference_clear_day.clear_sky:
        raise ValueError(f"reference day {reference_clear_day.day} is not clear-sky")
    if reference_clear_day.avg_output <= 0:
        raise ValueError(f"reference day {reference_clear_day.day} has "
                         "non-positive output")
    apart = abs((smoky_day.day - reference_clear_day.day).days)
    if apart > PAIRING_WINDOW_DAYS:
        raise PairingError(f"days {apart} apart exceed the "
                           f"{PAIRING_WINDOW_DAYS}-day pairing window")
    return smoky_day.avg_output / reference_clear_day.avg_output


def pair_reference(aggregates: list[DailyAggregate],
                   smoky_day: DailyAggregate) -> DailyAggregate | None:
    """Nearest prior non-smoky clear-sky day within the pairing window."""
    best = None
    for agg in aggregates:
        if agg.day >= smoky_day.day or not agg.clear_sky or agg.smoky:
            continue
        if (smoky_day.day - agg.day).days > PAIRING_WINDOW_DAYS:
            continue
        if best is None or agg.day > best.day:
            best = agg
    return best


def fit_regression(points: Sequence[tuple],
                   cloud_filter: float = DEFAULT_CLOUD_MAX_PCT) -> RegressionFit:
    """Closed-form OLS of ratio on PM2.5.

    Points are (pm25, ratio) or (pm25, ratio, avg_cloud); when cloud is
    present, days above the filter are dropped first.
    """
    kept = [(p[0], p[1]) for p in points
            if len(p) < 3 or p[2] <= cloud_filter]
    if len(kept) < 2:
        raise FitError(f"need >= 2 points after cloud filter, got {len(kept)}")
    xs = [x for x, _ in kept]
    ys = [y for _, y in kept]
    n = len(kept)
    xbar = sum(xs) / n
    ybar = sum(ys) / n
    sxx = sum((x - xbar) ** 2 for x in xs)
    if sxx == 0:
        raise FitError("zero variance in PM2.5")
    sxy = sum((x - xbar) * (y - ybar) for x, y in kept)
    slope = sxy / sxx
    intercept = ybar - slope * xbar
    ss_tot = sum((y - ybar) ** 2 for y in ys)
    ss_res = sum((y - (slope * x + intercept)) ** 2 for x, y in kept)
    r2 = 0.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return RegressionFit(slope, intercept, max(0.0, min(1.0, r2)), n)


@dataclass
class ReportRow:
    day: date
    avg_pm25: float
    avg_output: float
    ratio: float | None
    clear_sky: bool
    used_in_fit: bool


@dataclass
class AnalysisReport:
    rows: list[ReportRow]
    fit: RegressionFit | None
    excluded: list[ExcludedDay]

    def write_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["date", "avg_pm25", "avg_output", "ratio",
                        "clear_sky", "used_in_fit"])
            for r in self.rows:
                w.writerow([r.day.isoformat(), f"{r.avg_pm25:.6g}",
                            f"{r.avg_output:.6g}",
                            "" if r.ratio is None else f"{r.ratio:.6g}",
                            int(r.clear_sky), int(r.used_in_fit)])
            if self.fit is not None:
                w.writerow(["#fit", f"{self.fit.slope:.6g}",
                            f"{self.fit.intercept:.6g}",
                            f"{self.fit.r_squared:.6g}", self.fit.n_points, ""])


def run_analysis(archive: CuratedArchive,
                 solar: Iterable[SolarRecord],
                 cloud: dict[date, float],
                 smoky_flags: dict[date, bool],
                 site: tuple[float, float],
                 mode: SamplingMode = SamplingMode.BILINEAR,
                 cloud_max: float = DEFAULT_CLOUD_MAX_PCT,
                 utc_offset_hours: int = DEFAULT_UTC_OFFSET_HOURS,
                 clear_threshold: float = DEFAULT_CLEAR_SKY_THRESHOLD
                 ) -> AnalysisReport:
    """End-to-end: aggregate days, pair smoky days with clear references,
    filter by cloud cover, fit the trend."""
    aggregates, excluded = daily_aggregates(
        solar, cloud, archive, site, mode, smoky_flags,
        utc_offset_hours, clear_threshold)

    rows: list[ReportRow] = []
    fit_points: list[tuple[float, float, float]] = []
    for agg in aggregates:
        ratio = None
        used = False
        if agg.smoky:
            ref = pair_reference(aggregates, agg)
            if ref is not None:
                ratio = output_ratio(agg, ref)
                if agg.avg_cloud <= cloud_max:
                    fit_points.append((agg.avg_pm25, ratio, agg.avg_cloud))
                    used = True
        rows.append(ReportRow(agg.day, agg.avg_pm25, agg.avg_output, ratio,
                              agg.clear_sky, used))
    fit = None
    if len(fit_points) >= 2:
        try:
            fit = fit_regression(fit_points, cloud_max)
        except FitError:
            fit = None
    return AnalysisReport(rows, fit, excluded)


def read_solar_csv(path: Path | str,
                   utc_offset_hours: int = DEFAULT_UTC_OFFSET_HOURS
                   ) -> list[SolarRecord]:
    """CSV with columns timestamp_iso,energy_kwh; naive timestamps are taken
    as local time at the configured offset."""
    tz = timezone(timedelta(hours=utc_offset_hours))
    records = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            ts = datetime.fromisoformat(row["timestamp_iso"])
            if ts.tzinfo is None:
                ts = ts.replace(tzinfo=tz)
            records.append(SolarRecord(ts, float(row["energy_kwh"])))
    return records


def read_cloud_csv(path: Path | str) -> dict[date, float]:
    with open(path, newline="") as f:
        return {date.fromisoformat(r["date"]): float(r["avg_cloud_pct"])
                for r in csv.DictReader(f)}


def read_flags_csv(path: Path | str) -> dict[date, bool]:
    with open(path, newline="") as f:
        return {date.fromisoformat(r["date"]): r["smoky"].strip() in ("1", "true")
                for r in csv.DictReader(f)}
