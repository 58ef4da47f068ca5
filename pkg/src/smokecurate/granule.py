"""Binary container for one forecast run: header, per-frame timestamps, PM2.5 frames.

GRANULE v1 layout (little-endian):
    magic           8 bytes  "SMOKGRAN"
    version         u32 = 1
    forecast_id     16 bytes ASCII, right-padded with spaces
    cdate..stime    6 x u32  (YYYYDDD / HHMMSS creation, weather init, smoke init)
    nrows,ncols,ntimes  3 x u32
    lat0,lon0,dlat,dlon 4 x f64
    tflag           ntimes x (u32 date, u32 time)
    payload         ntimes*nrows*ncols f32, time-major then row-major

Parsing must be safe on arbitrary bytes; every failure carries the byte
offset of the first inconsistency.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import BinaryIO, Sequence

import numpy as np

from .timecal import HOUR, EncodingError, JulianStamp, julian_to_calendar

MAGIC = b"SMOKGRAN"
VERSION = 1

_PREAMBLE = struct.Struct("<8sI")                 # magic + version
_HEADER = struct.Struct("<16s6I3I4d")             # id, stamps, dims, geometry
_TFLAG_ENTRY = struct.Struct("<II")
HEADER_END = _PREAMBLE.size + _HEADER.size        # 96 bytes


class GranuleError(Exception):
    """Base for granule format errors; carries the offending byte offset."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte {offset})")


class NotAGranuleError(GranuleError):
    """Leading bytes are not the granule magic (e.g. an HTML error page)."""


class TruncatedError(GranuleError):
    """Stream ended before the declared content length."""


class InvalidHeaderError(GranuleError):
    """Header or tflag fields violate the format invariants."""


@dataclass(frozen=True)
class GridGeometry:
    """Regular lat/lon grid; (lat0, lon0) is the south-west corner."""

    nrows: int
    ncols: int
    lat0: float
    lon0: float
    dlat: float
    dlon: float

    def validate(self) -> "GridGeometry":
        if self.nrows < 2 or self.ncols < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.nrows}x{self.ncols}")
        if self.dlat <= 0 or self.dlon <= 0:
            raise ValueError("grid spacing must be positive")
        if self.lat0 + (self.nrows - 1) * self.dlat > 90.0:
            raise ValueError("grid extends past 90 degrees latitude")
        if not -180.0 <= self.lon0 < 180.0:
            raise ValueError(f"origin longitude {self.lon0} outside [-180, 180)")
        return self

    @property
    def lat_max(self) -> float:
        return self.lat0 + (self.nrows - 1) * self.dlat

    @property
    def lon_max(self) -> float:
        return self.lon0 + (self.ncols - 1) * self.dlon

    def latitudes(self) -> np.ndarray:
        return self.lat0 + np.arange(self.nrows) * self.dlat

    def longitudes(self) -> np.ndarray:
        return self.lon0 + np.arange(self.ncols) * self.dlon


def grid_coordinates(geom: GridGeometry, row: int, col: int) -> tuple[float, float]:
    """(latitude, longitude) of a grid point."""
    if not 0 <= row < geom.nrows:
        raise IndexError(f"row {row} outside 0..{geom.nrows - 1}")
    if not 0 <= col < geom.ncols:
        raise IndexError(f"col {col} outside 0..{geom.ncols - 1}")
    return geom.lat0 + row * geom.dlat, geom.lon0 + col * geom.dlon


@dataclass(frozen=True)
class GranuleHeader:
    forecast_id: str
    cdate: JulianStamp   # file creation
    wdate: JulianStamp   # weather-forecast initialization
    sdate: JulianStamp   # smoke-forecast initialization
    geometry: GridGeometry
    ntimes: int

    @property
    def created(self) -> datetime:
        return julian_to_calendar(self.cdate)

    @property
    def weather_init(self) -> datetime:
        return julian_to_calendar(self.wdate)

    @property
    def smoke_init(self) -> datetime:
        return julian_to_calendar(self.sdate)


@dataclass
class ForecastGranule:
    header: GranuleHeader
    tflag: list[JulianStamp]
    pm25: np.ndarray  # (ntimes, nrows, ncols) float32

    def validate(self) -> "ForecastGranule":
        h = self.header
        h.geometry.validate()
        if h.ntimes < 1:
            raise ValueError("ntimes must be >= 1")
        for stamp in (h.cdate, h.wdate, h.sdate, *self.tflag):
            stamp.validate()
        if len(self.tflag) != h.ntimes:
            raise ValueError(f"tflag length {len(self.tflag)} != ntimes {h.ntimes}")
        times = [julian_to_calendar(s) for s in self.tflag]
        for a, b in zip(times, times[1:]):
            if b - a != HOUR:
                raise ValueError(f"tflag not hourly-contiguous at {a} -> {b}")
        expect = (h.ntimes, h.geometry.nrows, h.geometry.ncols)
        if self.pm25.shape != expect:
            raise ValueError(f"payload shape {self.pm25.shape} != {expect}")
        if not np.isfinite(self.pm25).all():
            raise ValueError("payload contains non-finite values")
        if (self.pm25 < 0).any():
            raise ValueError("payload contains negative concentrations")
        return self

    def frame_times(self) -> list[datetime]:
        return [julian_to_calendar(s) for s in self.tflag]


@dataclass(frozen=True)
class HeaderInfo:
    """Result of a metadata-only read: header, tflag, and the payload extent
    declared by the header (unverified; the payload is never touched)."""

    header: GranuleHeader
    tflag: tuple[JulianStamp, ...]
    header_bytes: int
    expected_payload_bytes: int

    @property
    def expected_total_bytes(self) -> int:
        return self.header_bytes + self.expected_payload_bytes


def write_granule(g: ForecastGranule, dest: BinaryIO) -> int:
    """Serialize a validated granule; returns the byte count written."""
    g.validate()
    h = g.header
    ident = h.forecast_id.encode("ascii")
    if len(ident) > 16:
        raise ValueError(f"forecast_id longer than 16 bytes: {h.forecast_id!r}")
    geom = h.geometry
    buf = bytearray()
    buf += _PREAMBLE.pack(MAGIC, VERSION)
    buf += _HEADER.pack(ident.ljust(16),
                        h.cdate.date, h.cdate.time,
                        h.wdate.date, h.wdate.time,
                        h.sdate.date, h.sdate.time,
                        geom.nrows, geom.ncols, h.ntimes,
                        geom.lat0, geom.lon0, geom.dlat, geom.dlon)
    for stamp in g.tflag:
        buf += _TFLAG_ENTRY.pack(stamp.date, stamp.time)
    buf += np.ascontiguousarray(g.pm25, dtype="<f4").tobytes()
    dest.write(bytes(buf))
    return len(buf)


def granule_to_bytes(g: ForecastGranule) -> bytes:
    sink = io.BytesIO()
    write_granule(g, sink)
    return sink.getvalue()


def _read_exact(source: BinaryIO, n: int, offset: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) < n:
        raise TruncatedError(f"stream ended inside {what}", offset + len(data))
    return data


def _parse_header_region(source: BinaryIO) -> HeaderInfo:
    head = source.read(_PREAMBLE.size)
    if len(head) < len(MAGIC) or head[: len(MAGIC)] != MAGIC:
        mismatch = next((i for i, (a, b) in enumerate(zip(head, MAGIC)) if a != b),
                        min(len(head), len(MAGIC)))
        raise NotAGranuleError("magic mismatch", mismatch)
    if len(head) < _PREAMBLE.size:
        raise TruncatedError("stream ended inside version field", len(head))
    _, version = _PREAMBLE.unpack(head)
    if version != VERSION:
        raise InvalidHeaderError(f"unsupported version {version}", len(MAGIC))

    raw = _read_exact(source, _HEADER.size, _PREAMBLE.size, "header")
    (ident, cd, ct, wd, wt, sd, st,
     nrows, ncols, ntimes, lat0, lon0, dlat, dlon) = _HEADER.unpack(raw)
    try:
        forecast_id = ident.decode("ascii").rstrip(" ")
    except UnicodeDecodeError:
        raise InvalidHeaderError("forecast_id is not ASCII", _PREAMBLE.size) from None
    if not forecast_id or not forecast_id.isprintable():
        raise InvalidHeaderError("forecast_id empty or unprintable", _PREAMBLE.size)

    try:
        stamps = [JulianStamp(cd, ct).validate(),
                  JulianStamp(wd, wt).validate(),
                  JulianStamp(sd, st).validate()]
    except EncodingError as e:
        raise InvalidHeaderError(f"bad header stamp: {e}", _PREAMBLE.size + 16) from None

    geometry = GridGeometry(nrows, ncols, lat0, lon0, dlat, dlon)
    try:
        geometry.validate()
    except ValueError as e:
        raise InvalidHeaderError(f"bad geometry: {e}", _PREAMBLE.size + 40) from None
    if ntimes < 1:
        raise InvalidHeaderError("ntimes must be >= 1", _PREAMBLE.size + 48)

    tflag = []
    prev = None
    for i in range(ntimes):
        off = HEADER_END + i * _TFLAG_ENTRY.size
        entry = _read_exact(source, _TFLAG_ENTRY.size, off, "tflag")
        d, t = _TFLAG_ENTRY.unpack(entry)
        try:
            stamp = JulianStamp(d, t).validate()
        except EncodingError as e:
            raise InvalidHeaderError(f"bad tflag[{i}]: {e}", off) from None
        instant = julian_to_calendar(stamp)
        if prev is not None and instant - prev != HOUR:
            raise InvalidHeaderError(f"tflag[{i}] breaks hourly contiguity", off)
        prev = instant
        tflag.append(stamp)

    header = GranuleHeader(forecast_id, stamps[0], stamps[1], stamps[2],
                           geometry, ntimes)
    header_bytes = HEADER_END + ntimes * _TFLAG_ENTRY.size
    payload_bytes = ntimes * nrows * ncols * 4
    return HeaderInfo(header, tuple(tflag), header_bytes, payload_bytes)


def read_header(source: BinaryIO) -> HeaderInfo:
    """Read magic + header + tflag only; the payload region is never touched.

    Payload truncation is not detectable here; the expected payload length is
    recorded in the result for later validation.
    """
    return _parse_header_region(source)


def parse_granule(source: BinaryIO) -> ForecastGranule:
    """Fully parse a granule, materializing the payload.

    Safe on arbitrary byte input: raises NotAGranuleError, TruncatedError or
    InvalidHeaderError instead of crashing.
    """
    info = _parse_header_region(source)
    raw = source.read(info.expected_payload_bytes)
    if len(raw) < info.expected_payload_bytes:
        raise TruncatedError("stream ended inside payload",
                             info.header_bytes + len(raw))
    geom = info.header.geometry
    pm25 = np.frombuffer(raw, dtype="<f4").reshape(
        info.header.ntimes, geom.nrows, geom.ncols).copy()
    if not np.isfinite(pm25).all() or (pm25 < 0).any():
        bad = int(np.argmax(~(np.isfinite(pm25) & (pm25 >= 0))))
        raise InvalidHeaderError("payload value non-finite or negative",
                                 info.header_bytes + bad * 4)
    g = ForecastGranule(info.header, list(info.tflag), pm25)
    g.validate()
    return g


def parse_granule_bytes(data: bytes) -> ForecastGranule:
    return parse_granule(io.BytesIO(data))


def read_header_bytes(data: bytes) -> HeaderInfo:
    return read_header(io.BytesIO(data))


def make_granule(forecast_id: str,
                 created: datetime,
                 weather_init: datetime,
                 smoke_init: datetime,
                 geometry: GridGeometry,
                 frames: Sequence[np.ndarray],
                 first_frame_time: datetime | None = None) -> ForecastGranule:
    """Assemble a granule with hourly tflags starting at the smoke init
    (or an explicit first frame time)."""
    from .timecal import calendar_to_julian

    t0 = first_frame_time if first_frame_time is not None else smoke_init
    tflag = [calendar_to_julian(t0 + timedelta(hours=i)) for i in range(len(frames))]
    pm25 = np.stack([np.asarray(f, dtype=np.float32) for f in frames])
    header = GranuleHeader(forecast_id,
                           calendar_to_julian(created),
                           calendar_to_julian(weather_init),
                           calendar_to_julian(smoke_init),
                           geometry, len(frames))
    return ForecastGranule(header, tflag, pm25).validate()
