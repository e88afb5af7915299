"""Rating and interest-rate panels: data model, CSV ingestion, spreads.

Panels are stored country-major: ``ranks[c, t]`` is the rating of country
``c`` on ``dates[t]``. All panel types are immutable once built.
"""

from __future__ import annotations

import csv
import io
import json
import os
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

__all__ = [
    "RatingScale",
    "RatingPanel",
    "RatePanel",
    "SpreadPanel",
    "PanelError",
    "ingest_ratings",
    "ingest_rates",
    "compute_spreads",
    "align",
    "write_ratings_csv",
    "write_rates_csv",
    "write_panel_csv",
    "read_panel_csv",
]


class PanelError(ValueError):
    """Raised on malformed panel input."""


# Rank classes of the three major agencies (1 = best, 8 = default).
_DEFAULT_LABELS = {
    "moodys": ["Aaa", "Aa", "A", "Baa", "Ba", "B", ["Caa", "Ca"], "C"],
    "sp": ["AAA", "AA", "A", "BBB", "BB", "B", ["CCC", "CC", "C"], ["SD", "D"]],
    "fitch": ["AAA", "AA", "A", "BBB", "BB", "B", ["CCC", "CC", "C"], ["RD", "D"]],
}

_NOTCH = re.compile(r"^(.*?)(?:[+-]|[123])$")


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def _open_text(source):
    """Return a text stream for a path, bytes, or (binary/text) file object."""
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"), newline="")
    if isinstance(source, io.TextIOBase):
        return source
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return io.StringIO(data, newline="")
    raise TypeError(f"unsupported CSV source {type(source).__name__}")


def _parse_date(text, lineno):
    try:
        return np.datetime64(pd.Timestamp(text.strip()).date(), "D")
    except (ValueError, TypeError) as exc:
        raise PanelError(f"line {lineno}: unparseable date {text!r}") from exc


def _read_rows(source, header):
    stream = _open_text(source)
    try:
        reader = csv.reader(stream)
        try:
            first = next(reader)
        except StopIteration:
            raise PanelError("empty CSV input") from None
        got = [h.strip().lower() for h in first]
        if got != header:
            raise PanelError(f"expected header {','.join(header)!r}, got {','.join(first)!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise PanelError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append((lineno, [cell.strip() for cell in row]))
        return rows
    finally:
        if isinstance(source, (str, os.PathLike)):
            stream.close()


@dataclass(frozen=True)
class RatingScale:
    """Ordered rating classes per agency.

    ``labels_by_agency[agency][r - 1]`` holds the label (or list of alias
    labels) of rank ``r``. Rank 1 is the best grade and rank ``D`` is default.
    """

    labels_by_agency: dict

    def __post_init__(self):
        if not self.labels_by_agency:
            raise PanelError("rating scale has no agencies")
        sizes = {len(v) for v in self.labels_by_agency.values()}
        if len(sizes) != 1:
            raise PanelError("all agencies must use the same number of classes")
        if sizes.pop() < 2:
            raise PanelError("a rating scale needs at least 2 classes")
        lookup = {}
        for agency, labels in self.labels_by_agency.items():
            table = {}
            for rank, entry in enumerate(labels, start=1):
                for alias in [entry] if isinstance(entry, str) else entry:
                    table[alias.strip()] = rank
            lookup[self._key(agency)] = table
        object.__setattr__(self, "_lookup", lookup)

    @staticmethod
    def _key(agency):
        return re.sub(r"[^a-z0-9]", "", agency.lower())

    @property
    def D(self):
        return len(next(iter(self.labels_by_agency.values())))

    @property
    def agencies(self):
        return list(self.labels_by_agency)

    @classmethod
    def default(cls):
        """The 8-class grouping used for Moody's, S&P and Fitch."""
        return cls({k: [list(v) if isinstance(v, list) else v for v in labels]
                    for k, labels in _DEFAULT_LABELS.items()})

    @classmethod
    def from_json(cls, source):
        if isinstance(source, (str, os.PathLike)):
            with open(source, encoding="utf-8") as fh:
                data = json.load(fh)
        elif isinstance(source, dict):
            data = source
        else:
            data = json.load(source)
        if not isinstance(data, dict):
            raise PanelError("scale.json must map agency -> ordered label array")
        return cls(data)

    def to_json(self):
        return json.dumps(self.labels_by_agency, indent=2, sort_keys=True)

    def rank(self, agency, label):
        """Rank of ``label`` under ``agency``; notch modifiers (+, -, 1-3) are ignored.

        Returns ``None`` for unknown labels.
        """
        table = self._lookup.get(self._key(agency))
        if table is None:
            return None
        label = label.strip()
        while label:
            if label in table:
                return table[label]
            m = _NOTCH.match(label)
            if m is None or m.group(1) == label:
                return None
            label = m.group(1)
        return None

    def label(self, agency, rank):
        """Canonical label of ``rank`` (first alias)."""
        for name, labels in self.labels_by_agency.items():
            if self._key(name) == self._key(agency):
                entry = labels[rank - 1]
                return entry if isinstance(entry, str) else entry[0]
        raise KeyError(agency)


@dataclass(frozen=True)
class RatingPanel:
    countries: tuple
    dates: np.ndarray
    ranks: np.ndarray
    n_states: int
    agency: str | None = None

    def __post_init__(self):
        countries = tuple(self.countries)
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        ranks = np.asarray(self.ranks, dtype=np.int64)
        if ranks.shape != (len(countries), len(dates)):
            raise PanelError(f"ranks shape {ranks.shape} does not match "
                             f"{len(countries)} countries x {len(dates)} dates")
        if len(dates) > 1 and np.any(np.diff(dates) <= np.timedelta64(0, "D")):
            raise PanelError("dates must be strictly increasing")
        if ranks.size and (ranks.min() < 1 or ranks.max() > self.n_states):
            raise PanelError(f"ranks must lie in 1..{self.n_states}")
        object.__setattr__(self, "countries", countries)
        object.__setattr__(self, "dates", _readonly(dates))
        object.__setattr__(self, "ranks", _readonly(ranks))

    @property
    def shape(self):
        return self.ranks.shape

    def subset(self, countries=None, dates=None):
        ci = _index_of(self.countries, countries)
        ti = _date_index(self.dates, dates)
        return RatingPanel(tuple(self.countries[i] for i in ci), self.dates[ti],
                           self.ranks[np.ix_(ci, ti)], self.n_states, self.agency)


@dataclass(frozen=True)
class RatePanel:
    countries: tuple
    dates: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        countries = tuple(self.countries)
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        rates = np.asarray(self.rates, dtype=float)
        if rates.shape != (len(countries), len(dates)):
            raise PanelError(f"rates shape {rates.shape} does not match "
                             f"{len(countries)} countries x {len(dates)} dates")
        if not np.all(np.isfinite(rates)):
            raise PanelError("rates must be finite")
        if len(dates) > 1 and np.any(np.diff(dates) <= np.timedelta64(0, "D")):
            raise PanelError("dates must be strictly increasing")
        object.__setattr__(self, "countries", countries)
        object.__setattr__(self, "dates", _readonly(dates))
        object.__setattr__(self, "rates", _readonly(rates))


@dataclass(frozen=True)
class SpreadPanel:
    countries: tuple
    dates: np.ndarray
    spreads: np.ndarray
    unit: str = "percent"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        countries = tuple(self.countries)
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        spreads = np.asarray(self.spreads, dtype=float)
        if spreads.shape != (len(countries), len(dates)):
            raise PanelError(f"spreads shape {spreads.shape} does not match "
                             f"{len(countries)} countries x {len(dates)} dates")
        if not np.all(np.isfinite(spreads)) or np.any(spreads < 0):
            raise PanelError("spreads must be finite and nonnegative")
        if self.unit not in ("percent", "bp"):
            raise PanelError(f"unknown spread unit {self.unit!r}")
        object.__setattr__(self, "countries", countries)
        object.__setattr__(self, "dates", _readonly(dates))
        object.__setattr__(self, "spreads", _readonly(spreads))

    @property
    def total(self):
        """Total spread per date (column sums)."""
        return self.spreads.sum(axis=0)

    def to_basis_points(self):
        if self.unit == "bp":
            return self
        return SpreadPanel(self.countries, self.dates, self.spreads * 100.0, "bp", dict(self.metadata))

    def subset(self, countries=None, dates=None):
        ci = _index_of(self.countries, countries)
        ti = _date_index(self.dates, dates)
        return SpreadPanel(tuple(self.countries[i] for i in ci), self.dates[ti],
                           self.spreads[np.ix_(ci, ti)], self.unit, dict(self.metadata))


def _index_of(countries, wanted):
    if wanted is None:
        return np.arange(len(countries))
    pos = {c: i for i, c in enumerate(countries)}
    return np.array([pos[c] for c in wanted], dtype=int)


def _date_index(dates, wanted):
    if wanted is None:
        return np.arange(len(dates))
    wanted = np.asarray(wanted, dtype="datetime64[D]")
    idx = np.searchsorted(dates, wanted)
    if np.any(idx >= len(dates)) or np.any(dates[np.minimum(idx, len(dates) - 1)] != wanted):
        raise PanelError("requested dates are not on the panel axis")
    return idx


def ingest_ratings(source, scale, agency=None, *, countries=None, dates=None):
    """Read ``date,country,agency,label`` rows into a daily RatingPanel.

    Ratings persist until the next rating action, so each country's path is
    forward-filled along the date axis. The axis defaults to every calendar
    day between the first and last action in the file; pass ``dates`` to use
    another calendar. Dates preceding the first action of some country are
    dropped for all countries.

    Parameters
    ----------
    source : path, bytes or file object
    scale : RatingScale
    agency : str, optional
        Keep only rows of this agency. Required when the file mixes agencies.
    countries : sequence of str, optional
        Expected countries (output order). A listed country without rows is an error.
    dates : sequence of dates, optional
        Explicit date axis.
    """
    rows = _read_rows(source, ["date", "country", "agency", "label"])
    agencies = {r[2] for _, r in rows}
    if agency is None:
        if len(agencies) > 1:
            raise PanelError(f"file mixes agencies {sorted(agencies)}; pass agency=")
        agency = agencies.pop() if agencies else None
    key = RatingScale._key(agency) if agency else None

    seen = set()
    records = []
    for lineno, (d, c, a, label) in rows:
        if RatingScale._key(a) != key:
            continue
        date = _parse_date(d, lineno)
        if (date, c, a) in seen:
            raise PanelError(f"line {lineno}: duplicate rating for ({d}, {c}, {a})")
        seen.add((date, c, a))
        rank = scale.rank(a, label)
        if rank is None:
            raise PanelError(f"line {lineno}: unknown label {label!r} for agency {a!r}")
        records.append((date, c, rank))

    if countries is None:
        countries = sorted({c for _, c, _ in records})
    countries = list(countries)
    present = {c for _, c, _ in records}
    for c in countries:
        if c not in present:
            raise PanelError(f"country {c!r} has no rating records")
    if not countries:
        raise PanelError("no rating records")

    frame = pd.DataFrame(records, columns=["date", "country", "rank"])
    frame = frame[frame["country"].isin(countries)]
    wide = frame.pivot(index="date", columns="country", values="rank")
    if dates is None:
        axis = pd.date_range(wide.index.min(), wide.index.max(), freq="D")
    else:
        axis = pd.DatetimeIndex(np.asarray(dates, dtype="datetime64[D]"))
    wide.index = pd.DatetimeIndex(wide.index)
    full = wide.reindex(wide.index.union(axis)).sort_index().ffill().reindex(axis)
    full = full[countries].dropna(how="any")
    if full.empty:
        raise PanelError("no date on which every country is rated")
    return RatingPanel(
        countries=tuple(countries),
        dates=full.index.values.astype("datetime64[D]"),
        ranks=full.to_numpy(dtype=np.int64).T,
        n_states=scale.D,
        agency=agency,
    )


def ingest_rates(source, *, countries=None):
    """Read ``date,country,rate`` rows into a RatePanel.

    The date axis is every date present in the file. Interior gaps are filled
    with the last observation; dates before a country's first observation
    are dropped for all countries.
    """
    rows = _read_rows(source, ["date", "country", "rate"])
    records = []
    seen = set()
    for lineno, (d, c, r) in rows:
        date = _parse_date(d, lineno)
        try:
            value = float(r)
        except ValueError:
            raise PanelError(f"line {lineno}: non-numeric rate {r!r}") from None
        if not np.isfinite(value):
            raise PanelError(f"line {lineno}: non-finite rate {r!r}")
        if (date, c) in seen:
            raise PanelError(f"line {lineno}: duplicate rate for ({d}, {c})")
        seen.add((date, c))
        records.append((date, c, value))
    if not records:
        raise PanelError("no rate records")
    frame = pd.DataFrame(records, columns=["date", "country", "rate"])
    if countries is None:
        countries = sorted(frame["country"].unique())
    countries = list(countries)
    missing = set(countries) - set(frame["country"])
    if missing:
        raise PanelError(f"countries without rate records: {sorted(missing)}")
    wide = frame.pivot(index="date", columns="country", values="rate")[countries]
    wide = wide.sort_index().ffill().dropna(how="any")
    if wide.empty:
        raise PanelError("no date on which every country has a rate")
    return RatePanel(tuple(countries), wide.index.values.astype("datetime64[D]"),
                     wide.to_numpy(dtype=float).T)


def compute_spreads(rates, unit="percent"):
    """Spread of each country over the cheapest borrower at the same date.

    ``spreads[c, t] = rates[c, t] - min_d rates[d, t]``; rates are taken as
    percent, ``unit="bp"`` converts the result to basis points.
    """
    r = np.asarray(rates.rates, dtype=float)
    if r.size == 0:
        raise PanelError("empty rate panel")
    spreads = r - r.min(axis=0, keepdims=True)
    # exact zero for the benchmark, even with signed-zero/rounding quirks
    spreads[r == r.min(axis=0, keepdims=True)] = 0.0
    panel = SpreadPanel(rates.countries, rates.dates, spreads, "percent")
    return panel.to_basis_points() if unit == "bp" else panel


def align(ratings, spreads):
    """Restrict both panels to their common countries and dates.

    Countries keep the rating panel's order. Raises ``PanelError`` if either
    intersection is empty.
    """
    common_c = [c for c in ratings.countries if c in set(spreads.countries)]
    if not common_c:
        raise PanelError("rating and spread panels share no country")
    common_d = np.intersect1d(ratings.dates, spreads.dates)
    if common_d.size == 0:
        raise PanelError("rating and spread panels share no date")
    return ratings.subset(common_c, common_d), spreads.subset(common_c, common_d)


def _iso(d):
    return str(np.datetime64(d, "D"))


def write_ratings_csv(panel, scale, dest, agency=None):
    """Write rating actions in the ingestion format.

    One row per country on the first date, on every rating change, and on the
    last date, so re-ingesting over the daily calendar reproduces the panel.
    """
    agency = agency or panel.agency
    if agency is None:
        raise PanelError("agency is required to label ratings")
    lines = ["date,country,agency,label"]
    last = len(panel.dates) - 1
    for t, d in enumerate(panel.dates):
        for c, country in enumerate(panel.countries):
            r = int(panel.ranks[c, t])
            if t == 0 or t == last or r != panel.ranks[c, t - 1]:
                lines.append(f"{_iso(d)},{country},{agency},{scale.label(agency, r)}")
    _write_text(dest, "\n".join(lines) + "\n")


def write_rates_csv(panel, dest):
    lines = ["date,country,rate"]
    rates = panel.rates.tolist()
    for t, d in enumerate(panel.dates):
        for c, country in enumerate(panel.countries):
            lines.append(f"{_iso(d)},{country},{rates[c][t]!r}")
    _write_text(dest, "\n".join(lines) + "\n")


def write_panel_csv(panel, dest):
    """Write a panel in wide form: ``date`` column then one column per country."""
    values = _values(panel)
    lines = ["date," + ",".join(panel.countries)]
    fmt = (lambda v: str(int(v))) if values.dtype.kind == "i" else repr
    for t, d in enumerate(panel.dates):
        lines.append(_iso(d) + "," + ",".join(fmt(v) for v in values[:, t].tolist()))
    _write_text(dest, "\n".join(lines) + "\n")


def read_panel_csv(source, kind, **kwargs):
    """Inverse of :func:`write_panel_csv`; ``kind`` is ``ranks``, ``rates`` or ``spreads``."""
    stream = _open_text(source)
    try:
        frame = pd.read_csv(stream, dtype={"date": str}, float_precision="round_trip")
    finally:
        if isinstance(source, (str, os.PathLike)):
            stream.close()
    if frame.columns[0] != "date":
        raise PanelError("wide panel CSV must start with a date column")
    dates = pd.to_datetime(frame["date"]).values.astype("datetime64[D]")
    countries = tuple(frame.columns[1:])
    values = frame[list(countries)].to_numpy().T
    if kind == "ranks":
        return RatingPanel(countries, dates, values.astype(np.int64), **kwargs)
    if kind == "rates":
        return RatePanel(countries, dates, values.astype(float))
    if kind == "spreads":
        return SpreadPanel(countries, dates, values.astype(float), **kwargs)
    raise ValueError(f"unknown panel kind {kind!r}")


def _values(panel):
    for name in ("ranks", "rates", "spreads"):
        if hasattr(panel, name):
            return np.asarray(getattr(panel, name))
    raise TypeError(type(panel).__name__)


def _write_text(dest, text):
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        dest.write(text)
