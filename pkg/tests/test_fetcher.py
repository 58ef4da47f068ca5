import threading
from datetime import date
from functools import partial
from http.server import SimpleHTTPRequestHandler, ThreadingHTTPServer

import pytest

from smokecurate.corpusgen import CorpusSpec, FaultProfile, generate_corpus
from smokecurate.fetcher import (ConfigError, SourceEndpoint, build_url,
                                 embedded_init_hour, fetch_range,
                                 probe_earliest)
from smokecurate.granule import read_header_bytes

from conftest import SMALL_GEOM

IDS = ("BSC00CA12-01", "BSC06CA12-01")


def make_corpus(tmp_path, faults=FaultProfile(), days=(2, 5), seed=21,
                ids=IDS, init_hours=(0, 6)):
    spec = CorpusSpec(start_date=date(2022, 3, days[0]),
                      end_date=date(2022, 3, days[1]),
                      forecast_ids=ids, init_hours=init_hours,
                      horizon_hours=6, geometry=SMALL_GEOM,
                      fault_profile=faults, seed=seed)
    manifest = generate_corpus(spec, tmp_path / "corpus")
    return spec, manifest


def test_build_url_pattern():
    ep = SourceEndpoint("https://example.org/forecasts", ext="nc")
    url = build_url(ep, "BSC00CA12-01", date(2021, 3, 4), 0)
    assert url == ("https://example.org/forecasts/BSC00CA12-01/"
                   "2021030400/dispersion.nc")
    url = build_url(ep, "BSC18CA12-01", date(2022, 3, 2), 18)
    assert url.endswith("/2022030218/dispersion.nc")


def test_build_url_rejects_mismatched_init():
    ep = SourceEndpoint("https://example.org")
    with pytest.raises(ConfigError):
        build_url(ep, "BSC00CA12-01", date(2021, 3, 4), 6)


def test_template_placeholder_validation():
    with pytest.raises(ConfigError):
        SourceEndpoint("x", url_template="{forecast_id}/{yyyymmdd}/file.{ext}")


def test_embedded_init_hour():
    assert embedded_init_hour("BSC06CA12-01") == 6
    with pytest.raises(ConfigError):
        embedded_init_hour("nonsense")


def test_fetch_clean_corpus(tmp_path):
    spec, manifest = make_corpus(tmp_path)
    ep = SourceEndpoint(str(tmp_path / "corpus"))
    report = fetch_range(ep, list(IDS), spec.start_date, spec.end_date,
                         tmp_path / "cache", backoff=0.0)
    assert len(report.records) == 2 * 4
    assert all(r.outcome == "downloaded" for r in report.records)
    # every committed file is a valid granule
    for fid in IDS:
        files = list((tmp_path / "cache" / fid).glob("*.gran"))
        assert len(files) == 4
        for f in files:
            read_header_bytes(f.read_bytes())


def test_fetch_missing_reported_not_found(tmp_path):
    spec, manifest = make_corpus(tmp_path,
                                 faults=FaultProfile(missing_run_rate=0.5),
                                 seed=4)
    ep = SourceEndpoint(str(tmp_path / "corpus"))
    report = fetch_range(ep, list(IDS), spec.start_date, spec.end_date,
                         tmp_path / "cache", backoff=0.0)
    missing = {(e.forecast_id, e.init.date()) for e in manifest.entries
               if e.outcome == "missing"
               and e.init.hour == embedded_init_hour(e.forecast_id)}
    assert missing  # seed chosen so some fetchable runs are missing
    for rec in report.records:
        expect = "not_found" if (rec.forecast_id, rec.date) in missing \
            else "downloaded"
        assert rec.outcome == expect, (rec.forecast_id, rec.date)


def test_fetch_quarantines_invalid_content(tmp_path):
    spec, manifest = make_corpus(tmp_path,
                                 faults=FaultProfile(html_rate=0.5,
                                                     truncation_rate=0.4),
                                 seed=6)
    ep = SourceEndpoint(str(tmp_path / "corpus"))
    report = fetch_range(ep, list(IDS), spec.start_date, spec.end_date,
                         tmp_path / "cache", backoff=0.0)
    bad = {(e.forecast_id, e.init.date()) for e in manifest.entries
           if e.outcome in ("html", "truncated")
           and e.init.hour == embedded_init_hour(e.forecast_id)}
    assert bad
    for fid, day in bad:
        rec = next(r for r in report.records
                   if (r.forecast_id, r.date) == (fid, day))
        assert rec.outcome == "invalid_content"
        reject = tmp_path / "cache" / "rejects" / fid / \
            f"dispersion_{day:%Y%m%d}.bin"
        assert reject.is_file()
        assert not (tmp_path / "cache" / fid /
                    f"dispersion_{day:%Y%m%d}.gran").exists()


def test_fetch_idempotent_second_run(tmp_path):
    spec, _ = make_corpus(tmp_path)
    ep = SourceEndpoint(str(tmp_path / "corpus"))
    fetch_range(ep, list(IDS), spec.start_date, spec.end_date,
                tmp_path / "cache", backoff=0.0)
    again = fetch_range(ep, list(IDS), spec.start_date, spec.end_date,
                        tmp_path / "cache", backoff=0.0)
    assert all(r.outcome == "downloaded" for r in again.records)
    assert sum(r.bytes for r in again.records) == 0
    assert all(r.attempts == 0 for r in again.records)


def test_fetch_accounting_partitions_requests(tmp_path):
    spec, _ = make_corpus(tmp_path, faults=FaultProfile(0.3, 0.2, 0.2), seed=8)
    ep = SourceEndpoint(str(tmp_path / "corpus"))
    report = fetch_range(ep, list(IDS), spec.start_date, spec.end_date,
                         tmp_path / "cache", backoff=0.0)
    days = (spec.end_date - spec.start_date).days + 1
    assert len(report.records) == len(IDS) * days
    keys = {(r.forecast_id, r.date) for r in report.records}
    assert len(keys) == len(report.records)
    assert {r.outcome for r in report.records} <= \
        {"downloaded", "not_found", "invalid_content", "io_error"}


def test_fetch_report_csv(tmp_path):
    spec, _ = make_corpus(tmp_path)
    ep = SourceEndpoint(str(tmp_path / "corpus"))
    report = fetch_range(ep, list(IDS), spec.start_date, spec.end_date,
                         tmp_path / "cache", backoff=0.0)
    out = tmp_path / "fetch_report.csv"
    report.write_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "forecast_id,date,outcome,bytes,attempts"
    assert len(lines) == 1 + len(report.records)


def test_probe_earliest_finds_corpus_start(tmp_path):
    spec, _ = make_corpus(tmp_path)
    ep = SourceEndpoint(str(tmp_path / "corpus"))
    found = probe_earliest(ep, "BSC00CA12-01", date(2022, 2, 1),
                           date(2022, 3, 10))
    assert found == date(2022, 3, 2)


def test_probe_earliest_empty_corpus(tmp_path):
    (tmp_path / "corpus").mkdir()
    ep = SourceEndpoint(str(tmp_path / "corpus"))
    assert probe_earliest(ep, "BSC00CA12-01", date(2022, 2, 1),
                          date(2022, 3, 10)) is None


def test_probe_earliest_skips_leading_faults(tmp_path):
    spec, manifest = make_corpus(tmp_path, days=(2, 12),
                                 faults=FaultProfile(missing_run_rate=0.4),
                                 seed=43, ids=("BSC00CA12-01",),
                                 init_hours=(0,))
    ok_days = sorted(e.init.date() for e in manifest.entries
                     if e.outcome == "ok")
    assert ok_days and ok_days[0] > spec.start_date  # leading runs missing
    ep = SourceEndpoint(str(tmp_path / "corpus"))
    found = probe_earliest(ep, "BSC00CA12-01", date(2022, 2, 20),
                           date(2022, 3, 20))
    assert found == ok_days[0]


def test_fetch_over_http(tmp_path):
    spec, _ = make_corpus(tmp_path, days=(2, 3))
    handler = partial(SimpleHTTPRequestHandler,
                      directory=str(tmp_path / "corpus"))
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        base = f"http://127.0.0.1:{server.server_address[1]}"
        report = fetch_range(SourceEndpoint(base), list(IDS),
                             spec.start_date, spec.end_date,
                             tmp_path / "cache_http", backoff=0.0)
        assert all(r.outcome == "downloaded" for r in report.records)
        # a day with no run on the portal comes back as not_found
        miss = fetch_range(SourceEndpoint(base), ["BSC00CA12-01"],
                           date(2022, 4, 1), date(2022, 4, 1),
                           tmp_path / "cache_http", backoff=0.0)
        assert miss.records[0].outcome == "not_found"
    finally:
        server.shutdown()
        server.server_close()
