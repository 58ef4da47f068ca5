"""Latest-forecast selection: one best frame per hourly timestep, gaps kept
as gaps.

Recency is the descending triple (smoke init, creation stamp, forecast id);
a candidate is only eligible for timesteps at or after its own smoke init.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from .granule import GridGeometry
from .indexer import CandidateFrame, CoverageIndex
from .timecal import UTC, hour_range

ISO_Z = "%Y-%m-%dT%H:%M:%SZ"


@dataclass
class SequencePlan:
    start: datetime
    end: datetime
    picks: dict[datetime, CandidateFrame]
    gaps: list[datetime]
    index: CoverageIndex = field(repr=False, default_factory=CoverageIndex)

    def timesteps(self) -> list[datetime]:
        return hour_range(self.start, self.end)


def plan_sequence(index: CoverageIndex, start: datetime,
                  end: datetime) -> SequencePlan:
    """For each timestep pick the newest eligible candidate; no candidate
    means a gap, never an error."""
    picks: dict[datetime, CandidateFrame] = {}
    gaps: list[datetime] = []
    for t in hour_range(start, end):
        pick = None
        for cand in index.candidates(t):  # already sorted newest-first
            if cand.smoke_init <= t:
                pick = cand
                break
        if pick is None:
            gaps.append(t)
        else:
            picks[t] = pick
    return SequencePlan(start, end, picks, gaps, index)


@dataclass(frozen=True)
class RankedCandidate:
    candidate: CandidateFrame
    selected: bool


def explain_pick(plan: SequencePlan, t: datetime) -> list[RankedCandidate]:
    """All candidates for a timestep in recency order, the pick marked."""
    if not plan.start <= t <= plan.end:
        raise ValueError(f"{t} outside plan range {plan.start}..{plan.end}")
    pick = plan.picks.get(t)
    return [RankedCandidate(c, c == pick) for c in plan.index.candidates(t)]


def write_plan_csv(plan: SequencePlan, path: Path | str,
                   canonical: GridGeometry | None = None) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestep_utc", "forecast_id", "path", "frame_index",
                    "smoke_init_utc", "resampled_needed"])
        for t in sorted(plan.picks):
            c = plan.picks[t]
            needs = canonical is not None and c.geometry != canonical
            w.writerow([t.strftime(ISO_Z), c.forecast_id, str(c.path),
                        c.frame_index, c.smoke_init.strftime(ISO_Z),
                        int(needs)])


def write_gaps_csv(plan: SequencePlan, path: Path | str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestep_utc"])
        for t in plan.gaps:
            w.writerow([t.strftime(ISO_Z)])


def read_plan_csv(path: Path | str) -> SequencePlan:
    """Rebuild a plan from its CSV; candidate metadata not present in the CSV
    (creation stamp, geometry) is filled in lazily by the archive builder."""
    picks: dict[datetime, CandidateFrame] = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            t = datetime.strptime(row["timestep_utc"], ISO_Z).replace(tzinfo=UTC)
            init = datetime.strptime(row["smoke_init_utc"], ISO_Z).replace(tzinfo=UTC)
            picks[t] = CandidateFrame(Path(row["path"]), row["forecast_id"],
                                      int(row["frame_index"]), init,
                                      created=init, geometry=None)
    if not picks:
        raise ValueError(f"plan {path} contains no picks")
    times = sorted(picks)
    start, end = times[0], times[-1]
    gaps = [t for t in hour_range(start, end) if t not in picks]
    return SequencePlan(start, end, picks, gaps)
