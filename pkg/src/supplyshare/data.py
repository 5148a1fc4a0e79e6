"""Observation schema, CSV ingestion, logit transformation and splitting."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import DataError, RowValidationError, SchemaError

#: Proportions at or beyond these bounds are clamped before the logit transform.
CLAMP_LOW = 0.005
CLAMP_HIGH = 0.995
#: Lower bound applied to logit-scale standard errors when preparing model data.
LOGIT_SE_FLOOR = 0.01
DEFAULT_WINDOW = (1990, 2030)

CSV_COLUMNS = ("country_id", "region_id", "method", "year", "prop_public", "se_prop")


class Method(str, Enum):
    """The five modern contraceptive methods, in reporting order."""

    STERILIZATION = "sterilization"
    PILL = "pill"
    IMPLANT = "implant"
    IUD = "iud"
    INJECTABLE = "injectable"

    @classmethod
    def parse(cls, token) -> "Method":
        if isinstance(token, cls):
            return token
        try:
            return cls(str(token).strip().lower())
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise DataError(f"unknown method token {token!r}; expected one of: {valid}") from None


ALL_METHODS = tuple(Method)


@dataclass(frozen=True)
class Observation:
    country_id: str
    region_id: str
    method: Method
    year: int
    proportion_public: float
    se_proportion: float

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if not 0.0 <= self.proportion_public <= 1.0:
            raise DataError(f"proportion {self.proportion_public} outside [0, 1]")
        if not self.se_proportion > 0.0:
            raise DataError(f"standard error must be positive, got {self.se_proportion}")

    @property
    def key(self):
        return (self.region_id, self.method, self.year)


@dataclass(frozen=True)
class LogitObservation:
    logit_value: float
    logit_se: float


def clamp_proportion(p: float) -> float:
    return min(max(p, CLAMP_LOW), CLAMP_HIGH)


def to_logit(obs: Observation) -> LogitObservation:
    """Logit-transform a proportion, carrying its SE by the delta method.

    ``logit_se = se / (p (1 - p))``. Proportions outside
    ``[CLAMP_LOW, CLAMP_HIGH]`` are clamped first, with a warning.
    """
    p = obs.proportion_public
    if p <= CLAMP_LOW or p >= CLAMP_HIGH:
        clamped = clamp_proportion(p)
        if clamped != p:
            warnings.warn(
                f"proportion {p} for {obs.key} clamped to {clamped} before logit transform",
                stacklevel=2,
            )
            p = clamped
    return LogitObservation(math.log(p / (1.0 - p)), obs.se_proportion / (p * (1.0 - p)))


def inv_logit(x):
    """Inverse logit; accepts scalars or arrays."""
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of observations plus the derived region metadata.

    Build with :meth:`from_observations`, which validates keys and computes
    ``region_index`` and ``last_survey_year``.
    """

    observations: tuple[Observation, ...]
    region_index: Mapping[str, str]
    last_survey_year: Mapping[str, int]
    methods: tuple[Method, ...] = ALL_METHODS
    time_window: tuple[int, int] = DEFAULT_WINDOW

    @classmethod
    def from_observations(
        cls,
        observations: Iterable[Observation],
        region_index: Mapping[str, str] | None = None,
        methods: Iterable[Method] = ALL_METHODS,
        time_window: tuple[int, int] = DEFAULT_WINDOW,
        allow_empty: bool = False,
    ) -> "Dataset":
        obs = tuple(observations)
        if not obs and not allow_empty:
            raise DataError("empty dataset")
        methods = tuple(Method.parse(m) for m in methods)
        index = dict(region_index or {})
        seen = set()
        last = {}
        for i, o in enumerate(obs):
            if o.key in seen:
                raise RowValidationError(i, f"duplicate (region, method, year) key {o.key}")
            seen.add(o.key)
            if o.method not in methods:
                raise RowValidationError(i, f"method {o.method.value} not among dataset methods")
            country = index.setdefault(o.region_id, o.country_id)
            if country != o.country_id:
                raise RowValidationError(
                    i, f"region {o.region_id} mapped to countries {country} and {o.country_id}"
                )
            last[o.region_id] = max(last.get(o.region_id, o.year), o.year)
        start, end = time_window
        if end <= start:
            raise DataError(f"invalid time window {time_window}")
        return cls(
            observations=obs,
            region_index=MappingProxyType(dict(sorted(index.items()))),
            last_survey_year=MappingProxyType(last),
            methods=methods,
            time_window=(int(start), int(end)),
        )

    def __len__(self):
        return len(self.observations)

    @property
    def regions(self) -> tuple[str, ...]:
        return tuple(self.region_index)

    @property
    def countries(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.region_index.values())))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "country_id": [o.country_id for o in self.observations],
                "region_id": [o.region_id for o in self.observations],
                "method": [o.method.value for o in self.observations],
                "year": [o.year for o in self.observations],
                "prop_public": [o.proportion_public for o in self.observations],
                "se_prop": [o.se_proportion for o in self.observations],
            },
            columns=list(CSV_COLUMNS),
        )


def parse_dataset(path, schema_config: Mapping[str, str] | None = None, *,
                  time_window: tuple[int, int] = DEFAULT_WINDOW,
                  methods: Iterable[Method] = ALL_METHODS) -> Dataset:
    """Read the observation CSV into a validated :class:`Dataset`.

    Parameters
    ----------
    path : path-like
        UTF-8 comma-delimited file with a header row.
    schema_config : mapping, optional
        Maps the canonical column names (``CSV_COLUMNS``) to the names used in
        the file. Unmapped columns keep their canonical name.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    mapping = {c: c for c in CSV_COLUMNS}
    mapping.update(schema_config or {})
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    for canonical in CSV_COLUMNS:
        if mapping[canonical] not in frame.columns:
            raise SchemaError(f"missing required column {mapping[canonical]!r}")
    observations = []
    n_clamped = 0
    for i, row in enumerate(frame.itertuples(index=False)):
        rec = row._asdict()
        get = lambda name: rec[mapping[name]]
        try:
            year = int(float(get("year")))
            p = float(get("prop_public"))
            se = float(get("se_prop"))
        except ValueError as exc:
            raise RowValidationError(i, f"non-numeric field ({exc})") from None
        if not 0.0 <= p <= 1.0 or math.isnan(p):
            raise RowValidationError(i, f"proportion {p} outside [0, 1]")
        if not se > 0.0:
            raise RowValidationError(i, f"standard error must be positive, got {se}")
        try:
            method = Method.parse(get("method"))
        except DataError as exc:
            raise RowValidationError(i, str(exc)) from None
        clamped = clamp_proportion(p)
        if clamped != p:
            n_clamped += 1
        observations.append(
            Observation(str(get("country_id")), str(get("region_id")), method, year, clamped, se)
        )
    if n_clamped:
        warnings.warn(f"{n_clamped} boundary proportions clamped to [{CLAMP_LOW}, {CLAMP_HIGH}]",
                      stacklevel=2)
    return Dataset.from_observations(observations, methods=methods, time_window=time_window)


def write_dataset(ds: Dataset, path) -> None:
    ds.to_frame().to_csv(path, index=False, float_format="%.10g")


def split_train_test(ds: Dataset, cutoff_year: int) -> tuple[Dataset, Dataset]:
    """Split on calendar year: train ``year < cutoff_year``, test ``year >= cutoff_year``.

    Both halves keep the full region index so that held-out regions are still
    estimated through the hierarchy.
    """
    start, end = ds.time_window
    if not start <= cutoff_year <= end:
        raise DataError(f"cutoff {cutoff_year} outside time window {ds.time_window}")
    train = [o for o in ds.observations if o.year < cutoff_year]
    test = [o for o in ds.observations if o.year >= cutoff_year]
    if not train:
        raise DataError("empty training set")
    kw = dict(region_index=ds.region_index, methods=ds.methods, time_window=ds.time_window)
    return (Dataset.from_observations(train, **kw),
            Dataset.from_observations(test, allow_empty=True, **kw))


@dataclass(frozen=True)
class LogitData:
    """Model-ready observations on the logit scale, as parallel arrays.

    ``anchor_year`` gives every region (observed or not) the year its spline
    knot is aligned to.
    """

    region_index: Mapping[str, str]
    methods: tuple[Method, ...]
    time_window: tuple[int, int]
    anchor_year: Mapping[str, int]
    region: np.ndarray
    method: np.ndarray
    year: np.ndarray
    y: np.ndarray
    se: np.ndarray
    observed: frozenset = field(default_factory=frozenset)

    def __len__(self):
        return int(self.y.size)


def anchor_years(region_index: Mapping[str, str], last_survey_year: Mapping[str, int]):
    """Knot-anchor year for each region.

    Regions without observations borrow the latest survey year within their
    country, else the latest year overall.
    """
    by_country = {}
    for region, year in last_survey_year.items():
        c = region_index[region]
        by_country[c] = max(by_country.get(c, year), year)
    overall = max(last_survey_year.values()) if last_survey_year else None
    out = {}
    for region, country in region_index.items():
        year = last_survey_year.get(region, by_country.get(country, overall))
        if year is None:
            raise DataError("no observations to anchor the spline knots")
        out[region] = int(year)
    return MappingProxyType(out)


def prepare_logit_data(ds: Dataset, se_floor: float = LOGIT_SE_FLOOR) -> LogitData:
    """Convert a :class:`Dataset` into :class:`LogitData`, flooring logit SEs."""
    logits = [to_logit(o) for o in ds.observations]
    return LogitData(
        region_index=ds.region_index,
        methods=ds.methods,
        time_window=ds.time_window,
        anchor_year=anchor_years(ds.region_index, ds.last_survey_year),
        region=np.array([o.region_id for o in ds.observations], dtype=object),
        method=np.array([ds.methods.index(o.method) for o in ds.observations], dtype=int),
        year=np.array([o.year for o in ds.observations], dtype=int),
        y=np.array([lo.logit_value for lo in logits], dtype=float),
        se=np.maximum(np.array([lo.logit_se for lo in logits], dtype=float), se_floor),
        observed=frozenset(ds.last_survey_year),
    )
