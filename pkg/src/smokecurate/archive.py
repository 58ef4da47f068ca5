"""Curated chronological store: hourly level-0 frames, a 2x box-average
resolution pyramid, per-timestep provenance, and progressive reads.

On-disk layout:
    manifest.json          geometry, time range, levels, gaps, tool version
    provenance.csv         one row per stored timestep (original stamps)
    L{level}/{index:08}.bin row-major little-endian float32 chunks
    originals/{index:08}.bin  pre-resample frames, when resampling occurred
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .granule import GranuleError, GridGeometry, parse_granule
from .regrid import Frame, identity_or_resample
from .sequencer import ISO_Z, SequencePlan
from .timecal import HOUR, UTC, hour_range, julian_to_calendar

PROVENANCE_COLUMNS = ["tflag_date", "tflag_time", "cdate", "ctime", "wdate",
                      "wtime", "sdate", "stime", "forecast_id", "resampled",
                      "wrf_arw_init_time"]


class ArchiveError(Exception):
    pass


class BuildError(ArchiveError):
    """A picked granule failed full parse during materialization."""


class GapError(ArchiveError):
    """The requested timestep is a known gap, not stored data."""

    def __init__(self, timestep: datetime, before: datetime | None,
                 after: datetime | None):
        self.timestep = timestep
        self.nearest_before = before
        self.nearest_after = after
        super().__init__(f"{timestep} is a gap "
                         f"(nearest covered: {before} / {after})")


@dataclass(frozen=True)
class ProvenanceRow:
    tflag_date: int
    tflag_time: int
    cdate: int
    ctime: int
    wdate: int
    wtime: int
    sdate: int
    stime: int
    forecast_id: str
    resampled: bool
    wrf_arw_init_time: str


def level_shape(geom: GridGeometry, level: int) -> tuple[int, int]:
    rows, cols = geom.nrows, geom.ncols
    for _ in range(level):
        rows = (rows + 1) // 2
        cols = (cols + 1) // 2
    return rows, cols


def level_geometry(geom: GridGeometry, level: int) -> GridGeometry:
    rows, cols = level_shape(geom, level)
    f = 2 ** level
    return GridGeometry(rows, cols, geom.lat0, geom.lon0,
                        geom.dlat * f, geom.dlon * f)


def box_downsample(values: np.ndarray) -> np.ndarray:
    """2x2 box average with edge-partial cells; accumulates in float64."""
    v = np.asarray(values, dtype=np.float64)
    rows, cols = v.shape
    pr, pc = rows % 2, cols % 2
    if pr or pc:
        v = np.pad(v, ((0, pr), (0, pc)), mode="edge") * 1.0
        counts = np.pad(np.ones((rows, cols)), ((0, pr), (0, pc)),
                        mode="constant")
        num = (v * counts).reshape(v.shape[0] // 2, 2, v.shape[1] // 2, 2).sum(axis=(1, 3))
        den = counts.reshape(v.shape[0] // 2, 2, v.shape[1] // 2, 2).sum(axis=(1, 3))
        return num / den
    return v.reshape(rows // 2, 2, cols // 2, 2).mean(axis=(1, 3))


def _chunk_name(index: int) -> str:
    return f"{index:08}.bin"


def build_archive(plan: SequencePlan, canonical: GridGeometry,
                  out: Path | str, levels: int = 1,
                  keep_originals: bool = True) -> "CuratedArchive":
    """Materialize a plan into the on-disk archive; the manifest is written
    last so an interrupted build leaves no readable archive behind."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    canonical.validate()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for lv in range(levels):
        (out / f"L{lv}").mkdir(exist_ok=True)

    granule_cache: dict[Path, object] = {}

    def load(path: Path):
        if path not in granule_cache:
            try:
                with open(path, "rb") as f:
                    granule_cache[path] = parse_granule(f)
            except GranuleError as e:
                raise BuildError(f"picked granule {path} failed to parse: {e}") from e
            if len(granule_cache) > 8:  # keep memory flat on long plans
                oldest = next(iter(granule_cache))
                if oldest != path:
                    del granule_cache[oldest]
        return granule_cache[path]

    rows: list[ProvenanceRow] = []
    any_resampled = False
    for t in sorted(plan.picks):
        pick = plan.picks[t]
        try:
            g = load(Path(pick.path))
        except BuildError as e:
            raise BuildError(f"timestep {t.strftime(ISO_Z)}: {e}") from e
        h = g.header
        stamp = g.tflag[pick.frame_index]
        if julian_to_calendar(stamp) != t:
            raise BuildError(f"timestep {t.strftime(ISO_Z)}: frame "
                             f"{pick.frame_index} of {pick.path} carries "
                             f"tflag {stamp}, not the planned timestep")
        src = Frame(h.geometry, g.pm25[pick.frame_index].astype(np.float64))
        frame = identity_or_resample(src, canonical)
        idx = int((t - plan.start) / HOUR)
        if frame.resampled:
            any_resampled = True
            if keep_originals:
                orig_dir = out / "originals"
                orig_dir.mkdir(exist_ok=True)
                _write_chunk(orig_dir / _chunk_name(idx), src.values)
        level_values = np.asarray(frame.values, dtype=np.float32)
        for lv in range(levels):
            _write_chunk(out / f"L{lv}" / _chunk_name(idx), level_values)
            if lv + 1 < levels:
                level_values = box_downsample(level_values).astype(np.float32)
        rows.append(ProvenanceRow(
            stamp.date, stamp.time,
            h.cdate.date, h.cdate.time, h.wdate.date, h.wdate.time,
            h.sdate.date, h.sdate.time, h.forecast_id, frame.resampled,
            h.weather_init.strftime(ISO_Z)))

    _write_provenance(out / "provenance.csv", rows)
    manifest = {
        "format_version": 1,
        "tool_version": __version__,
        "geometry": {"nrows": canonical.nrows, "ncols": canonical.ncols,
                     "lat0": canonical.lat0, "lon0": canonical.lon0,
                     "dlat": canonical.dlat, "dlon": canonical.dlon},
        "start": plan.start.strftime(ISO_Z),
        "end": plan.end.strftime(ISO_Z),
        "levels": levels,
        "gaps": [t.strftime(ISO_Z) for t in plan.gaps],
        "originals": any_resampled and keep_originals,
    }
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1))
    os.replace(tmp, out / "manifest.json")
    return CuratedArchive.open(out)


def _write_chunk(path: Path, values: np.ndarray) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_bytes(np.ascontiguousarray(values, dtype="<f4").tobytes())
    os.replace(tmp, path)


def _write_provenance(path: Path, rows: list[ProvenanceRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(PROVENANCE_COLUMNS)
        for r in rows:
            w.writerow([r.tflag_date, r.tflag_time, r.cdate, r.ctime,
                        r.wdate, r.wtime, r.sdate, r.stime, r.forecast_id,
                        "true" if r.resampled else "false",
                        r.wrf_arw_init_time])


@dataclass
class WindowResult:
    times: list[datetime]
    values: np.ndarray          # (ntimes, nrows, ncols) for covered steps
    latitudes: np.ndarray
    longitudes: np.ndarray
    gaps: list[datetime]


@dataclass
class CuratedArchive:
    root: Path
    geometry: GridGeometry
    start: datetime
    end: datetime
    levels: int
    gaps: set[datetime]
    provenance: dict[datetime, ProvenanceRow]
    bytes_read: int = 0  # instrumentation for progressive-cost checks
    has_originals: bool = False

    @classmethod
    def open(cls, root: Path | str) -> "CuratedArchive":
        root = Path(root)
        manifest = json.loads((root / "manifest.json").read_text())
        if manifest.get("format_version") != 1:
            raise ArchiveError(f"unsupported archive format: "
                               f"{manifest.get('format_version')}")
        g = manifest["geometry"]
        geometry = GridGeometry(g["nrows"], g["ncols"], g["lat0"], g["lon0"],
                                g["dlat"], g["dlon"])
        start = datetime.strptime(manifest["start"], ISO_Z).replace(tzinfo=UTC)
        end = datetime.strptime(manifest["end"], ISO_Z).replace(tzinfo=UTC)
        gaps = {datetime.strptime(s, ISO_Z).replace(tzinfo=UTC)
                for s in manifest["gaps"]}
        provenance = {}
        with open(root / "provenance.csv", newline="") as f:
            for row in csv.DictReader(f):
                pr = ProvenanceRow(
                    int(row["tflag_date"]), int(row["tflag_time"]),
                    int(row["cdate"]), int(row["ctime"]),
                    int(row["wdate"]), int(row["wtime"]),
                    int(row["sdate"]), int(row["stime"]),
                    row["forecast_id"], row["resampled"] == "true",
                    row["wrf_arw_init_time"])
                from .granule import JulianStamp  # local to avoid cycle noise

                t = julian_to_calendar(JulianStamp(pr.tflag_date, pr.tflag_time))
                provenance[t] = pr
        return cls(root, geometry, start, end, manifest["levels"], gaps,
                   provenance, has_originals=manifest.get("originals", False))

    def _index_of(self, t: datetime) -> int:
        if not self.start <= t <= self.end:
            raise ArchiveError(f"{t} outside archive range "
                               f"{self.start}..{self.end}")
        return int((t - self.start) / HOUR)

    def _neighbors(self, t: datetime) -> tuple[datetime | None, datetime | None]:
        before = after = None
        step = t - HOUR
        while step >= self.start:
            if step not in self.gaps:
                before = step
                break
            step -= HOUR
        step = t + HOUR
        while step <= self.end:
            if step not in self.gaps:
                after = step
                break
            step += HOUR
        return before, after

    def _read_chunk(self, t: datetime, level: int) -> np.ndarray:
        idx = self._index_of(t)
        if t in self.gaps:
            raise GapError(t, *self._neighbors(t))
        path = self.root / f"L{level}" / _chunk_name(idx)
        data = path.read_bytes()
        self.bytes_read += len(data)
        rows, cols = level_shape(self.geometry, level)
        return np.frombuffer(data, dtype="<f4").reshape(rows, cols).copy()

    def read_frame(self, t: datetime,
                   level: int = 0) -> tuple[Frame, ProvenanceRow]:
        """One timestep at one level; byte cost is independent of archive
        duration. Gap timesteps raise GapError with the nearest neighbors."""
        if not 0 <= level < self.levels:
            raise ArchiveError(f"level {level} outside 0..{self.levels - 1}")
        values = self._read_chunk(t, level)
        row = self.provenance[t]
        return (Frame(level_geometry(self.geometry, level), values,
                      resampled=row.resampled), row)

    def read_original(self, t: datetime) -> np.ndarray | None:
        """Pre-resample frame, if one was stored for this timestep."""
        path = self.root / "originals" / _chunk_name(self._index_of(t))
        if not path.is_file():
            return None
        data = path.read_bytes()
        self.bytes_read += len(data)
        return np.frombuffer(data, dtype="<f4").copy()

    def read_window(self, t0: datetime, t1: datetime,
                    bbox: tuple[float, float, float, float],
                    level: int = 0) -> WindowResult:
        """Time-major subarray over [t0, t1] x bbox (lat_min, lat_max,
        lon_min, lon_max); gap slices are omitted and listed."""
        if t0 > t1:
            raise ValueError("t0 after t1")
        if not 0 <= level < self.levels:
            raise ArchiveError(f"level {level} outside 0..{self.levels - 1}")
        lat_min, lat_max, lon_min, lon_max = bbox
        geom = level_geometry(self.geometry, level)
        lats = geom.latitudes()
        lons = geom.longitudes()
        rsel = np.nonzero((lats >= lat_min) & (lats <= lat_max))[0]
        csel = np.nonzero((lons >= lon_min) & (lons <= lon_max))[0]
        if rsel.size == 0 or csel.size == 0:
            raise ArchiveError(f"bbox {bbox} selects no grid points")
        times, slabs, gaps = [], [], []
        for t in hour_range(t0, t1):
            try:
                values = self._read_chunk(t, level)
            except GapError:
                gaps.append(t)
                continue
            times.append(t)
            slabs.append(values[np.ix_(rsel, csel)])
        values = (np.stack(slabs) if slabs
                  else np.empty((0, rsel.size, csel.size), dtype=np.float32))
        return WindowResult(times, values, lats[rsel], lons[csel], gaps)
