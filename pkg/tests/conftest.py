"""Shared builders for small granules, corpora and archives."""

from __future__ import annotations

from datetime import date, datetime, timedelta

import numpy as np
import pytest

from smokecurate.archive import build_archive
from smokecurate.corpusgen import CorpusSpec, FaultProfile
from smokecurate.granule import GridGeometry, granule_to_bytes, make_granule
from smokecurate.indexer import build_coverage, scan_cache
from smokecurate.sequencer import plan_sequence
from smokecurate.timecal import UTC

SMALL_GEOM = GridGeometry(nrows=6, ncols=8, lat0=40.0, lon0=-120.0,
                          dlat=0.5, dlon=0.5)
T0 = datetime(2022, 3, 2, 0, tzinfo=UTC)


def simple_granule(ntimes=4, geometry=SMALL_GEOM, forecast_id="BSC00CA12-01",
                   init=T0, fill=None):
    """Granule with a deterministic, spatially varying payload."""
    rows, cols = geometry.nrows, geometry.ncols
    frames = []
    for k in range(ntimes):
        if fill is not None:
            frames.append(np.full((rows, cols), fill, dtype=np.float32))
        else:
            r = np.arange(rows, dtype=np.float32)[:, None]
            c = np.arange(cols, dtype=np.float32)[None, :]
            frames.append(1.0 + k + 0.5 * r + 0.25 * c)
    return make_granule(forecast_id, created=init + timedelta(hours=1),
                        weather_init=init - timedelta(hours=6),
                        smoke_init=init, geometry=geometry, frames=frames)


def simple_granule_bytes(**kwargs) -> bytes:
    return granule_to_bytes(simple_granule(**kwargs))


def archive_from_frames(tmp_path, frames, geometry=SMALL_GEOM, start=T0,
                        levels=2, forecast_id="BSC00CA12-01"):
    """Single-granule archive whose level-0 frames are exactly `frames`."""
    cache = tmp_path / "cache_single"
    cache.mkdir(parents=True, exist_ok=True)
    g = make_granule(forecast_id, created=start + timedelta(hours=1),
                     weather_init=start - timedelta(hours=6),
                     smoke_init=start, geometry=geometry, frames=frames)
    (cache / forecast_id).mkdir(exist_ok=True)
    (cache / forecast_id / "dispersion_20220302.gran").write_bytes(
        granule_to_bytes(g))
    records = scan_cache(cache)
    index = build_coverage(records)
    times = index.timesteps()
    plan = plan_sequence(index, times[0], times[-1])
    return build_archive(plan, geometry, tmp_path / "arch_single", levels=levels)


@pytest.fixture
def tiny_corpus_spec():
    return CorpusSpec(start_date=date(2022, 3, 2), end_date=date(2022, 3, 4),
                      forecast_ids=("BSC00CA12-01", "BSC06CA12-01",
                                    "BSC12CA12-01", "BSC18CA12-01"),
                      init_hours=(0, 6, 12, 18), horizon_hours=24,
                      geometry=SMALL_GEOM, seed=7)


@pytest.fixture
def faulty_corpus_spec():
    return CorpusSpec(start_date=date(2022, 3, 2), end_date=date(2022, 3, 5),
                      forecast_ids=("BSC00CA12-01", "BSC06CA12-01"),
                      init_hours=(0, 6), horizon_hours=12,
                      geometry=SMALL_GEOM,
                      fault_profile=FaultProfile(0.25, 0.2, 0.2), seed=11)
