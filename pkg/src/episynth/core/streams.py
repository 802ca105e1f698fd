"""Age structure, time grids, observation streams and their CSV/JSON formats."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from episynth.errors import ConfigurationError

DEFAULT_AGE_LABELS = ("<1", "1-4", "5-14", "15-24", "25-44", "45-64", "65+")


@dataclass(frozen=True)
class AgeStructure:
    labels: tuple[str, ...] = DEFAULT_AGE_LABELS

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) < 1:
            raise ConfigurationError("age structure needs at least one group")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigurationError(f"age labels must be unique: {self.labels}")

    @property
    def count(self) -> int:
        return len(self.labels)

    def check(self, vector, what: str = "vector") -> np.ndarray:
        v = np.asarray(vector, dtype=float)
        if v.shape[-1:] != (self.count,):
            raise ConfigurationError(f"{what} must have length {self.count}, got shape {v.shape}")
        return v


@dataclass(frozen=True)
class TimeGrid:
    t0: float = 0.0
    delta_t: float = 0.5
    K: int = 1

    def __post_init__(self):
        if not self.delta_t > 0:
            raise ConfigurationError("time grid step delta_t must be positive")
        if int(self.K) != self.K or self.K < 1:
            raise ConfigurationError("time grid needs K >= 1 steps")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.delta_t * np.arange(self.K + 1)

    @property
    def steps_per_day(self) -> int:
        spd = 1.0 / self.delta_t
        if abs(spd - round(spd)) > 1e-9:
            raise ConfigurationError("delta_t must divide one day for daily aggregation")
        return int(round(spd))


class StreamKind(str, Enum):
    ConfirmedCases = "ConfirmedCases"
    GPConsultations = "GPConsultations"
    ViroPositivity = "ViroPositivity"
    SeroPrevalence = "SeroPrevalence"
    HospAdmissions = "HospAdmissions"
    ICUAdmissions = "ICUAdmissions"
    Deaths = "Deaths"
    ICUPrevalence = "ICUPrevalence"
    PointEstimateLogScale = "PointEstimateLogScale"


_BINOMIAL_KINDS = {StreamKind.ViroPositivity, StreamKind.SeroPrevalence}


@dataclass(frozen=True, eq=False)
class DataStream:
    """One observation stream: rows of (time index, age index, value, denominator).

    ``denominator`` is NaN where it does not apply. For
    ``PointEstimateLogScale`` streams the value is a log-scale estimate and
    the denominator column carries its standard deviation.
    """

    name: str
    kind: StreamKind
    time_index: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    age_index: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    value: np.ndarray = field(default_factory=lambda: np.zeros(0))
    denominator: np.ndarray | None = None

    def __post_init__(self):
        kind = StreamKind(self.kind)
        object.__setattr__(self, "kind", kind)
        t = np.asarray(self.time_index, dtype=np.int64).ravel()
        a = np.asarray(self.age_index, dtype=np.int64).ravel()
        v = np.asarray(self.value, dtype=float).ravel()
        d = (np.full(v.shape, np.nan) if self.denominator is None
             else np.asarray(self.denominator, dtype=float).ravel())
        if not (len(t) == len(a) == len(v) == len(d)):
            raise ConfigurationError(f"stream {self.name!r}: column lengths differ")
        if np.any(t < 0) or np.any(a < 0):
            raise ConfigurationError(f"stream {self.name!r}: negative index")
        if kind is StreamKind.PointEstimateLogScale:
            if np.any(~(d > 0)):
                raise ConfigurationError(f"stream {self.name!r}: point estimates need sd > 0 in denominator")
        else:
            if np.any(v < 0):
                raise ConfigurationError(f"stream {self.name!r}: counts must be >= 0")
            has = ~np.isnan(d)
            if np.any(v[has] > d[has]):
                raise ConfigurationError(f"stream {self.name!r}: count exceeds denominator")
            if kind in _BINOMIAL_KINDS and not np.all(has):
                raise ConfigurationError(f"stream {self.name!r}: {kind.value} needs denominators")
        for arr in (t, a, v, d):
            arr.setflags(write=False)
        object.__setattr__(self, "time_index", t)
        object.__setattr__(self, "age_index", a)
        object.__setattr__(self, "value", v)
        object.__setattr__(self, "denominator", d)

    def __len__(self) -> int:
        return len(self.value)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DataStream):
            return NotImplemented
        return (
            self.name == other.name and self.kind == other.kind
            and np.array_equal(self.time_index, other.time_index)
            and np.array_equal(self.age_index, other.age_index)
            and np.array_equal(self.value, other.value)
            and np.array_equal(self.denominator, other.denominator, equal_nan=True)
        )

    __hash__ = None  # type: ignore[assignment]

    def validate(self, grid: TimeGrid | None = None, ages: AgeStructure | None = None,
                 n_times: int | None = None) -> None:
        limit = n_times if n_times is not None else (grid.K + 1 if grid is not None else None)
        if limit is not None and np.any(self.time_index >= limit):
            raise ConfigurationError(f"stream {self.name!r}: time index outside grid (limit {limit})")
        if ages is not None and np.any(self.age_index >= ages.count):
            raise ConfigurationError(f"stream {self.name!r}: age index outside {ages.count} groups")

    def select(self, mask) -> "DataStream":
        m = np.asarray(mask, dtype=bool)
        return DataStream(self.name, self.kind, self.time_index[m], self.age_index[m],
                          self.value[m], self.denominator[m])

    def window(self, start: int, stop: int) -> "DataStream":
        """Rows with ``start <= time_index < stop``."""
        return self.select((self.time_index >= start) & (self.time_index < stop))


def as_stream_map(data: Mapping[str, DataStream] | Iterable[DataStream] | None) -> dict[str, DataStream]:
    if data is None:
        return {}
    if isinstance(data, Mapping):
        return dict(data)
    out: dict[str, DataStream] = {}
    for s in data:
        if s.name in out:
            raise ConfigurationError(f"duplicate stream name {s.name!r}")
        out[s.name] = s
    return out


# --- CSV --------------------------------------------------------------------

_COLUMNS = ("time_index", "age_index", "value", "denominator")


def _fmt(x: float) -> str:
    if math.isnan(x):
        return ""
    if float(x).is_integer() and abs(x) < 2**53:
        return str(int(x))
    return repr(float(x))


def stream_to_csv(stream: DataStream) -> str:
    buf = io.StringIO()
    buf.write(f"# name: {stream.name}\n# kind: {stream.kind.value}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_COLUMNS)
    for t, a, v, d in zip(stream.time_index, stream.age_index, stream.value, stream.denominator):
        w.writerow((int(t), int(a), _fmt(v), _fmt(d)))
    return buf.getvalue()


def write_stream_csv(stream: DataStream, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(stream_to_csv(stream))
    return path


def read_stream_csv(path: str | Path, kind: str | StreamKind | None = None,
                    name: str | None = None) -> DataStream:
    """Read a stream CSV; ``kind``/``name`` override the file-level header."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"stream file not found: {path}")
    header: dict[str, str] = {}
    rows: list[str] = []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            header[key.strip()] = val.strip()
        elif line.strip():
            rows.append(line)
    kind = kind or header.get("kind")
    if kind is None:
        raise ConfigurationError(f"{path}: stream kind missing from header and manifest")
    name = name or header.get("name") or path.stem
    reader = csv.DictReader(rows)
    if reader.fieldnames is None or tuple(reader.fieldnames) != _COLUMNS:
        raise ConfigurationError(f"{path}: expected columns {_COLUMNS}, got {reader.fieldnames}")
    t, a, v, d = [], [], [], []
    for r in reader:
        t.append(int(r["time_index"]))
        a.append(int(r["age_index"]))
        v.append(float(r["value"]))
        d.append(float(r["denominator"]) if r["denominator"] not in ("", None) else np.nan)
    try:
        return DataStream(name, StreamKind(kind), np.array(t, dtype=np.int64), np.array(a, dtype=np.int64),
                          np.array(v), np.array(d))
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


# --- manifests ----------------------------------------------------------------

@dataclass
class Manifest:
    ages: AgeStructure
    grid: TimeGrid | None
    streams: dict[str, DataStream]
    raw: dict[str, Any]


def _require(d: Mapping[str, Any], key: str, where: str):
    if key not in d:
        raise ConfigurationError(f"manifest field missing: {where}{key}")
    return d[key]


def load_manifest(path: str | Path) -> Manifest:
    """Load a JSON manifest listing the age structure, grid and stream files.

    Stream paths are resolved relative to the manifest's directory.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: manifest must be a JSON object")
    ages = AgeStructure(tuple(raw.get("ages", {}).get("labels", DEFAULT_AGE_LABELS)))
    grid = None
    if "grid" in raw:
        g = raw["grid"]
        grid = TimeGrid(float(g.get("t0", 0.0)), float(_require(g, "delta_t", "grid.")),
                        int(_require(g, "K", "grid.")))
    streams: dict[str, DataStream] = {}
    for i, entry in enumerate(raw.get("streams", [])):
        file = _require(entry, "path", f"streams[{i}].")
        s = read_stream_csv(path.parent / file, kind=entry.get("kind"), name=entry.get("name"))
        s.validate(grid=grid, ages=ages)
        streams[s.name] = s
    return Manifest(ages, grid, streams, raw)
