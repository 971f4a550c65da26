"""Epidemic data schemas, CSV ingestion and preprocessing.

CSV files are UTF-8 with a header row:

    regions.csv        region_id,population
    cases.csv          date,region_id,daily_confirmed,cum_removed
    movement.csv       date,region_id,movement_change,stay_put_ratio
    flows_static.csv   origin,destination,flow
    flows_dynamic.csv  date,origin,destination,flow
    nuid.csv           date,region_id,unique_users
    distances.csv      origin,destination,km

Dates are ISO-8601.  Arrays use day-major layout: ``(T, N)`` for per-region
daily series and ``(T, N, N)`` for daily origin-destination flows.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

N_CHANNELS = 4
CHANNELS = ("daily_cases", "movement_change", "case_ratio", "day_of_week")


class SchemaError(ValueError):
    """A CSV input does not match its schema.  The message names file, line and column."""

    def __init__(self, path, line: int, column: str | None, message: str):
        loc = f"{path}:{line}" + (f": column '{column}'" if column else "")
        super().__init__(f"{loc}: {message}")
        self.path, self.line, self.column = str(path), line, column


class DataIntegrityError(ValueError):
    pass


@dataclass(frozen=True)
class RegionTable:
    region_ids: tuple[str, ...]
    population: np.ndarray

    def __post_init__(self):
        if len(set(self.region_ids)) != len(self.region_ids):
            raise DataIntegrityError("region ids are not unique")
        pop = np.asarray(self.population, dtype=np.float64)
        if pop.shape != (len(self.region_ids),):
            raise DataIntegrityError("one population per region required")
        if np.any(pop <= 0):
            bad = self.region_ids[int(np.argmin(pop))]
            raise DataIntegrityError(f"population of region {bad} is not positive")
        object.__setattr__(self, "population", pop)

    def __len__(self) -> int:
        return len(self.region_ids)

    def index(self, region_id: str) -> int:
        return self.region_ids.index(region_id)


@dataclass
class EpidemicSeries:
    dates: list[dt.date]
    daily_confirmed: np.ndarray  # (T, N)
    cum_removed: np.ndarray  # (T, N)

    @property
    def cum_confirmed(self) -> np.ndarray:
        return np.cumsum(self.daily_confirmed, axis=0)

    def __len__(self) -> int:
        return len(self.dates)


@dataclass
class EpidemicState:
    S: np.ndarray
    I: np.ndarray
    R: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        self.S, self.I, self.R, self.P = (np.asarray(v, dtype=np.float64) for v in (self.S, self.I, self.R, self.P))

    def conservation_error(self) -> np.ndarray:
        """|S + I + R - P| / P per region."""
        return np.abs(self.S + self.I + self.R - self.P) / self.P

    def copy(self) -> "EpidemicState":
        return EpidemicState(self.S.copy(), self.I.copy(), self.R.copy(), self.P.copy())


def state_arrays(series: EpidemicSeries, regions: RegionTable) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised compartments ``(S, I, R)`` each of shape ``(T, N)``."""
    R = np.asarray(series.cum_removed, dtype=np.float64)
    I = series.cum_confirmed - R
    neg = np.argwhere(I < 0)
    if neg.size:
        t, n = neg[0]
        raise DataIntegrityError(
            f"removed exceeds confirmed for region {regions.region_ids[n]} on {series.dates[t].isoformat()}"
            f" (cum_confirmed={series.cum_confirmed[t, n]:g}, cum_removed={R[t, n]:g})")
    S = regions.population[None, :] - I - R
    return S, I, R


def derive_states(series: EpidemicSeries, regions: RegionTable) -> list[EpidemicState]:
    """Daily S/I/R per region from confirmed and removed counts."""
    S, I, R = state_arrays(series, regions)
    return [EpidemicState(S[t], I[t], R[t], regions.population) for t in range(len(series))]


def weighted_movement(subregion_values: Sequence[tuple[float, float]],
                      groups: Mapping[str, Sequence[int]] | None = None):
    """Population-weighted mean of subregion values.

    With ``groups`` (region -> indices into ``subregion_values``) a dict of
    region values is returned; without it all subregions form one group.
    """
    if groups is None:
        groups = {"": range(len(subregion_values))}
        single = True
    else:
        single = False
    out = {}
    for region, members in groups.items():
        members = list(members)
        if not members:
            raise DataIntegrityError(f"region {region!r} has no subregions")
        vals = np.array([subregion_values[i][0] for i in members], dtype=np.float64)
        pops = np.array([subregion_values[i][1] for i in members], dtype=np.float64)
        if np.any(pops <= 0):
            raise DataIntegrityError(f"region {region!r} has a subregion with nonpositive population")
        out[region] = float(np.dot(vals, pops) / pops.sum())
    return out[""] if single else out


def sample_rates(stay: np.ndarray, nuid: np.ndarray, population: np.ndarray) -> np.ndarray:
    """GPS sample rate per region-day: unique users over the active population.

    Active population is ``(1 - stay) * P``.  Days without users get rate 0.
    """
    active = (1.0 - np.asarray(stay, dtype=np.float64)) * np.asarray(population, dtype=np.float64)[None, :]
    nuid = np.asarray(nuid, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        rate = np.where(nuid > 0, nuid / active, 0.0)
    return rate


def normalize_od(raw: np.ndarray, rates: np.ndarray, anchor: tuple[int, int] | None = None,
                 population: np.ndarray | None = None, dates: Sequence[dt.date] | None = None,
                 region_ids: Sequence[str] | None = None) -> np.ndarray:
    """Rescale raw daily OD flows to a common sampling rate.

    ``raw`` is ``(T, N, N)`` (origin row, destination column) and ``rates``
    is ``(T, N)``.  Flows leaving origin ``n`` on day ``t`` are multiplied by
    ``rates[anchor] / rates[t, n]``.  The default anchor is the most populous
    region on the first day.
    """
    raw = np.asarray(raw, dtype=np.float64)
    rates = np.asarray(rates, dtype=np.float64)
    if anchor is None:
        if population is None:
            raise ValueError("pass an anchor or the populations to choose one")
        anchor = (int(np.argmax(population)), 0)
    a_region, a_day = anchor
    a_rate = rates[a_day, a_region]
    if not a_rate > 0:
        raise DataIntegrityError(f"anchor sample rate at region {a_region}, day {a_day} is not positive")
    outflow = raw.sum(axis=2)
    bad = np.argwhere((rates <= 0) & (outflow > 0))
    if bad.size:
        t, n = bad[0]
        rname = region_ids[n] if region_ids else str(n)
        dname = dates[t].isoformat() if dates else str(t)
        raise DataIntegrityError(f"zero sample rate with nonzero outflow at region {rname}, day {dname}")
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(rates > 0, a_rate / rates, 0.0)
    return raw * factor[:, :, None]


# features and windows -------------------------------------------------------

def build_features(daily_confirmed: np.ndarray, active: np.ndarray, movement: np.ndarray,
                   dates: Sequence[dt.date]) -> np.ndarray:
    """Raw node features ``(T, N, 4)``: cases, movement change, cases/active, weekday (0-6)."""
    daily = np.asarray(daily_confirmed, dtype=np.float64)
    active = np.asarray(active, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(active > 0, daily / active, 0.0)
    dow = np.array([d.weekday() for d in dates], dtype=np.float64)
    dow = np.broadcast_to(dow[:, None], daily.shape)
    return np.stack([daily, np.asarray(movement, dtype=np.float64), ratio, dow], axis=-1)


@dataclass
class FeatureScaler:
    """Train-split statistics used to normalise the node features."""

    case_mean: float = 0.0
    case_std: float = 1.0
    ratio_mean: float = 0.0
    ratio_std: float = 1.0
    zscore: bool = True

    @classmethod
    def fit(cls, features: np.ndarray, train_days: slice, zscore: bool = True) -> "FeatureScaler":
        f = features[train_days]
        def stats(x):
            sd = float(x.std())
            return float(x.mean()), (sd if sd > 0 else 1.0)
        cm, cs = stats(f[..., 0])
        rm, rs = stats(f[..., 2])
        return cls(cm, cs, rm, rs, zscore)

    def transform(self, features: np.ndarray) -> np.ndarray:
        out = np.array(features, dtype=np.float64, copy=True)
        if self.zscore:
            out[..., 0] = (out[..., 0] - self.case_mean) / self.case_std
            out[..., 2] = (out[..., 2] - self.ratio_mean) / self.ratio_std
        out[..., 3] = out[..., 3] / 6.0
        return out

    def to_dict(self) -> dict:
        return {"case_mean": self.case_mean, "case_std": self.case_std,
                "ratio_mean": self.ratio_mean, "ratio_std": self.ratio_std, "zscore": self.zscore}


def split_boundaries(n_days: int, ratio: Sequence[int] = (6, 1, 1)) -> tuple[int, int]:
    total = sum(ratio)
    return n_days * ratio[0] // total, n_days * (ratio[0] + ratio[1]) // total


def window_indices(n_days: int, t_in: int, t_out: int,
                   ratio: Sequence[int] = (6, 1, 1)) -> dict[str, list[int]]:
    """Last-input-day indices of the windows in each split.

    A window ending its input on day ``t`` covers ``t - t_in + 1 .. t + t_out``
    and belongs to a split only if that whole range lies in the split's days.
    A series too short to split at all puts every window in ``train``.
    """
    need = t_in + t_out
    if n_days < need:
        raise DataIntegrityError(f"series has {n_days} days; at least {need} required (T_in + T_out)")
    b1, b2 = split_boundaries(n_days, ratio)
    ranges = {"train": (0, b1), "val": (b1, b2), "test": (b2, n_days)}
    out: dict[str, list[int]] = {k: [] for k in ranges}
    for name, (lo, hi) in ranges.items():
        out[name] = list(range(lo + t_in - 1, hi - t_out))
    if not any(out.values()):
        out["train"] = list(range(t_in - 1, n_days - t_out))
    return out


@dataclass
class WindowSet:
    """Stacked forecasting samples for one split."""

    t_index: np.ndarray  # (W,) last input day
    X: np.ndarray  # (W, N, T_in, C) normalised features
    S0: np.ndarray  # (W, N)
    I0: np.ndarray
    R0: np.ndarray
    Y: np.ndarray  # (W, N, T_out)
    O: np.ndarray | None = None  # (W, T_in, N, N) dynamic flows

    def __len__(self) -> int:
        return len(self.t_index)

    def subset(self, idx) -> "WindowSet":
        return WindowSet(self.t_index[idx], self.X[idx], self.S0[idx], self.I0[idx], self.R0[idx],
                         self.Y[idx], None if self.O is None else self.O[idx])


@dataclass
class Windows:
    train: WindowSet
    val: WindowSet
    test: WindowSet
    scaler: FeatureScaler
    t_in: int
    t_out: int

    def split(self, name: str) -> WindowSet:
        return getattr(self, name)


def build_windows(features: np.ndarray, flows: np.ndarray | None, states: tuple[np.ndarray, np.ndarray, np.ndarray],
                  daily_confirmed: np.ndarray, t_in: int, t_out: int,
                  ratio: Sequence[int] = (6, 1, 1), zscore: bool = True,
                  scaler: FeatureScaler | None = None) -> Windows:
    """Slice a full dataset into train/val/test forecasting windows.

    ``features`` holds raw channels ``(T, N, 4)``; they are normalised with
    statistics from the training date range only, unless a fitted ``scaler``
    (e.g. from a checkpoint) is passed.
    """
    n_days = features.shape[0]
    idx = window_indices(n_days, t_in, t_out, ratio)
    b1, _ = split_boundaries(n_days, ratio)
    train_days = slice(0, b1 if idx["train"] and idx["train"][-1] + t_out < b1 else n_days)
    if scaler is None:
        scaler = FeatureScaler.fit(features, train_days, zscore)
    feats = scaler.transform(features)
    S, I, R = states

    def make(ts: list[int]) -> WindowSet:
        ts = np.asarray(ts, dtype=np.int64)
        n = features.shape[1]
        if ts.size == 0:
            return WindowSet(ts, np.zeros((0, n, t_in, N_CHANNELS)), np.zeros((0, n)), np.zeros((0, n)),
                             np.zeros((0, n)), np.zeros((0, n, t_out)),
                             None if flows is None else np.zeros((0, t_in, n, n)))
        X = np.stack([feats[t - t_in + 1:t + 1].transpose(1, 0, 2) for t in ts])
        Y = np.stack([daily_confirmed[t + 1:t + t_out + 1].T for t in ts])
        O = None if flows is None else np.stack([flows[t - t_in + 1:t + 1] for t in ts])
        return WindowSet(ts, X, S[ts], I[ts], R[ts], Y, O)

    return Windows(make(idx["train"]), make(idx["val"]), make(idx["test"]), scaler, t_in, t_out)


# dataset container -----------------------------------------------------------

@dataclass
class EpiDataset:
    regions: RegionTable
    series: EpidemicSeries
    movement: np.ndarray  # (T, N)
    stay: np.ndarray | None = None  # (T, N)
    flows_static: np.ndarray | None = None  # (N, N)
    flows_dynamic: np.ndarray | None = None  # (T, N, N), normalised
    nuid: np.ndarray | None = None  # (T, N)
    distances: np.ndarray | None = None  # (N, N) km
    truth: dict = field(default_factory=dict)

    @property
    def dates(self) -> list[dt.date]:
        return self.series.dates

    def states(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return state_arrays(self.series, self.regions)

    def features(self) -> np.ndarray:
        _, I, _ = self.states()
        return build_features(self.series.daily_confirmed, I, self.movement, self.dates)

    def windows(self, t_in: int, t_out: int, need_flows: bool = False, zscore: bool = True,
                scaler: FeatureScaler | None = None) -> Windows:
        if need_flows and self.flows_dynamic is None:
            raise DataIntegrityError("dynamic graph mode needs flows_dynamic.csv")
        return build_windows(self.features(), self.flows_dynamic if need_flows else None, self.states(),
                             self.series.daily_confirmed, t_in, t_out, zscore=zscore, scaler=scaler)


# CSV I/O ---------------------------------------------------------------------

def _rows(path: Path, columns: Sequence[str]):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in columns if c not in header]
        if missing:
            raise SchemaError(path, 1, missing[0], f"missing header column (expected {','.join(columns)})")
        for row in reader:
            yield reader.line_num, row


def _parse_float(path, line, row, col, nonneg=True) -> float:
    raw = row.get(col)
    try:
        v = float(raw)
    except (TypeError, ValueError):
        raise SchemaError(path, line, col, f"not a number: {raw!r}") from None
    if not math.isfinite(v):
        raise SchemaError(path, line, col, f"not finite: {raw!r}")
    if nonneg and v < 0:
        raise SchemaError(path, line, col, f"negative value {v:g}")
    return v


def _parse_date(path, line, row, col="date") -> dt.date:
    raw = row.get(col)
    try:
        return dt.date.fromisoformat(raw)
    except (TypeError, ValueError):
        raise SchemaError(path, line, col, f"not an ISO-8601 date: {raw!r}") from None


def _region(path, line, row, col, regions: RegionTable) -> int:
    rid = row.get(col)
    try:
        return regions.index(rid)
    except ValueError:
        raise SchemaError(path, line, col, f"unknown region {rid!r}") from None


def read_regions(path) -> RegionTable:
    ids, pops = [], []
    for line, row in _rows(path, ("region_id", "population")):
        rid = (row["region_id"] or "").strip()
        if not rid:
            raise SchemaError(path, line, "region_id", "empty region id")
        if rid in ids:
            raise SchemaError(path, line, "region_id", f"duplicate region {rid!r}")
        p = _parse_float(path, line, row, "population")
        if p <= 0 or p != int(p):
            raise SchemaError(path, line, "population", f"population must be a positive integer, got {row['population']!r}")
        ids.append(rid)
        pops.append(p)
    return RegionTable(tuple(ids), np.array(pops))


def _daily_table(path, columns, regions: RegionTable):
    """Parse a (date, region_id, values...) file into contiguous (T, N) arrays."""
    records = {}
    for line, row in _rows(path, ("date", "region_id") + tuple(columns)):
        d = _parse_date(path, line, row)
        n = _region(path, line, row, "region_id", regions)
        if (d, n) in records:
            raise SchemaError(path, line, "date", f"duplicate row for {d} / {regions.region_ids[n]}")
        records[(d, n)] = tuple(_parse_float(path, line, row, c, nonneg=(c != "movement_change")) for c in columns)
    if not records:
        raise SchemaError(path, 2, None, "no data rows")
    days = sorted({d for d, _ in records})
    dates = [days[0] + dt.timedelta(days=i) for i in range((days[-1] - days[0]).days + 1)]
    out = np.full((len(columns), len(dates), len(regions)), np.nan)
    index = {d: i for i, d in enumerate(dates)}
    for (d, n), vals in records.items():
        out[:, index[d], n] = vals
    holes = np.argwhere(np.isnan(out[0]))
    if holes.size:
        t, n = holes[0]
        raise DataIntegrityError(f"{path}: no row for {dates[t]} / {regions.region_ids[n]}")
    return dates, out


def read_cases(path, regions: RegionTable) -> EpidemicSeries:
    dates, (daily, removed) = _daily_table(path, ("daily_confirmed", "cum_removed"), regions)
    if np.any(np.diff(removed, axis=0) < 0):
        t, n = np.argwhere(np.diff(removed, axis=0) < 0)[0]
        raise DataIntegrityError(f"{path}: cum_removed decreases for {regions.region_ids[n]} on {dates[t + 1]}")
    return EpidemicSeries(dates, daily, removed)


def read_movement(path, regions: RegionTable):
    dates, (move, stay) = _daily_table(path, ("movement_change", "stay_put_ratio"), regions)
    if np.any(stay > 1):
        raise DataIntegrityError(f"{path}: stay_put_ratio above 1")
    return dates, move, stay


def read_nuid(path, regions: RegionTable):
    dates, (nuid,) = _daily_table(path, ("unique_users",), regions)
    return dates, nuid


def _pair_matrix(path, value_col, regions: RegionTable, cols=("origin", "destination")) -> np.ndarray:
    n = len(regions)
    out = np.zeros((n, n))
    for line, row in _rows(path, cols + (value_col,)):
        i = _region(path, line, row, cols[0], regions)
        j = _region(path, line, row, cols[1], regions)
        out[i, j] = _parse_float(path, line, row, value_col)
    return out


def read_flows_static(path, regions: RegionTable) -> np.ndarray:
    return _pair_matrix(path, "flow", regions)


def read_distances(path, regions: RegionTable) -> np.ndarray:
    return _pair_matrix(path, "km", regions)


def read_flows_dynamic(path, regions: RegionTable, dates: Sequence[dt.date]) -> np.ndarray:
    n = len(regions)
    index = {d: i for i, d in enumerate(dates)}
    out = np.zeros((len(dates), n, n))
    seen = np.zeros(len(dates), dtype=bool)
    for line, row in _rows(path, ("date", "origin", "destination", "flow")):
        d = _parse_date(path, line, row)
        if d not in index:
            continue
        i = _region(path, line, row, "origin", regions)
        j = _region(path, line, row, "destination", regions)
        out[index[d], i, j] = _parse_float(path, line, row, "flow")
        seen[index[d]] = True
    if not seen.all():
        missing = dates[int(np.argmin(seen))]
        raise DataIntegrityError(f"{path}: no flows for {missing}")
    return out


def _write(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def fmt(x: float) -> str:
    """Shortest repr that round-trips a float64."""
    return repr(float(x))


def write_regions(path, regions: RegionTable) -> None:
    _write(path, ("region_id", "population"),
           ((r, int(p)) for r, p in zip(regions.region_ids, regions.population)))


def write_daily(path, columns, dates, regions: RegionTable, *arrays) -> None:
    _write(path, ("date", "region_id") + tuple(columns),
           ((d.isoformat(), r, *(fmt(a[t, n]) for a in arrays))
            for t, d in enumerate(dates) for n, r in enumerate(regions.region_ids)))


def write_matrix(path, regions: RegionTable, matrix: np.ndarray, value_col="flow") -> None:
    ids = regions.region_ids
    _write(path, ("origin", "destination", value_col),
           ((ids[i], ids[j], fmt(matrix[i, j])) for i in range(len(ids)) for j in range(len(ids))))


def write_flows_dynamic(path, dates, regions: RegionTable, flows: np.ndarray) -> None:
    ids = regions.region_ids
    _write(path, ("date", "origin", "destination", "flow"),
           ((d.isoformat(), ids[i], ids[j], fmt(flows[t, i, j]))
            for t, d in enumerate(dates) for i in range(len(ids)) for j in range(len(ids))))


DATA_FILES = {
    "regions": "regions.csv",
    "cases": "cases.csv",
    "movement": "movement.csv",
    "flows_static": "flows_static.csv",
    "flows_dynamic": "flows_dynamic.csv",
    "nuid": "nuid.csv",
    "distances": "distances.csv",
}


def write_dataset(directory, ds: EpiDataset, raw_flows: np.ndarray | None = None) -> dict[str, Path]:
    """Write every available table of ``ds`` in the CSV schemas above.

    ``raw_flows`` (unnormalised daily OD counts) replaces the normalised
    dynamic flows in ``flows_dynamic.csv`` when given.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = {}
    write_regions(d / DATA_FILES["regions"], ds.regions)
    out["regions"] = d / DATA_FILES["regions"]
    write_daily(d / DATA_FILES["cases"], ("daily_confirmed", "cum_removed"), ds.dates, ds.regions,
                ds.series.daily_confirmed, ds.series.cum_removed)
    out["cases"] = d / DATA_FILES["cases"]
    stay = ds.stay if ds.stay is not None else np.zeros_like(ds.movement)
    write_daily(d / DATA_FILES["movement"], ("movement_change", "stay_put_ratio"), ds.dates, ds.regions,
                ds.movement, stay)
    out["movement"] = d / DATA_FILES["movement"]
    if ds.flows_static is not None:
        write_matrix(d / DATA_FILES["flows_static"], ds.regions, ds.flows_static)
        out["flows_static"] = d / DATA_FILES["flows_static"]
    flows = raw_flows if raw_flows is not None else ds.flows_dynamic
    if flows is not None:
        write_flows_dynamic(d / DATA_FILES["flows_dynamic"], ds.dates, ds.regions, flows)
        out["flows_dynamic"] = d / DATA_FILES["flows_dynamic"]
    if ds.nuid is not None:
        write_daily(d / DATA_FILES["nuid"], ("unique_users",), ds.dates, ds.regions, ds.nuid)
        out["nuid"] = d / DATA_FILES["nuid"]
    if ds.distances is not None:
        write_matrix(d / DATA_FILES["distances"], ds.regions, ds.distances, "km")
        out["distances"] = d / DATA_FILES["distances"]
    return out


def load_dataset(paths: Mapping[str, str | Path | None], normalize_flows: bool = True) -> EpiDataset:
    """Read a dataset from CSV paths keyed like :data:`DATA_FILES`.

    Dynamic flows are normalised with the stay-put ratios and unique-user
    counts when ``nuid`` is present and ``normalize_flows`` is set.
    """
    regions = read_regions(paths["regions"])
    series = read_cases(paths["cases"], regions)
    dates = series.dates
    mdates, move, stay = read_movement(paths["movement"], regions)
    if mdates[0] > dates[0] or mdates[-1] < dates[-1]:
        raise DataIntegrityError("movement.csv does not cover the case date range")
    off = (dates[0] - mdates[0]).days
    move = move[off:off + len(dates)]
    stay = stay[off:off + len(dates)]
    ds = EpiDataset(regions, series, move, stay)
    if paths.get("flows_static"):
        ds.flows_static = read_flows_static(paths["flows_static"], regions)
    if paths.get("distances"):
        ds.distances = read_distances(paths["distances"], regions)
    if paths.get("nuid"):
        ndates, nuid = read_nuid(paths["nuid"], regions)
        off = (dates[0] - ndates[0]).days
        if off < 0 or off + len(dates) > len(ndates):
            raise DataIntegrityError("nuid.csv does not cover the case date range")
        ds.nuid = nuid[off:off + len(dates)]
    if paths.get("flows_dynamic"):
        raw = read_flows_dynamic(paths["flows_dynamic"], regions, dates)
        if normalize_flows and ds.nuid is not None:
            rates = sample_rates(stay, ds.nuid, regions.population)
            raw = normalize_od(raw, rates, population=regions.population, dates=dates,
                               region_ids=regions.region_ids)
        ds.flows_dynamic = raw
    return ds
