"""
Plot Dataset
Plot records, the feature table built from them, CSV ingestion and the preprocessing rules
"""
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage

from core.errors import (
    DomainError,
    InputError,
    RowParseError,
    SchemaError,
    UnimputableError,
    UnknownColumnError,
)

logger = logging.getLogger(__name__)

SOIL_COLUMNS = ("Ca", "CEC", "K", "Mg", "OM", "P1", "Ph", "Clay", "Sand", "Silt")
CATEGORICAL_COLUMNS = ("population", "field_no", "timepoint")
UNKNOWN_LEVEL = "UNKNOWN"

MIN_WAVELENGTH_NM = 400.0
MAX_WAVELENGTH_NM = 1000.0
REFERENCE_MOISTURE_PCT = 13.0

# Canonical field -> CSV header
DEFAULT_SCHEMA: Dict[str, str] = {
    'plot_id': 'plot_id',
    'latitude': 'latitude',
    'longitude': 'longitude',
    'population': 'population',
    'field_no': 'field_no',
    'timepoint': 'timepoint',
    'yield': 'yield',
    'moisture_pct': 'moisture_pct',
}
REQUIRED_FIELDS = ('plot_id', 'latitude', 'longitude', 'population', 'yield')


class Timepoint(str, Enum):
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"


@dataclass(frozen=True)
class PlotRecord:
    """One trial plot as read from the field books"""
    plot_id: str
    latitude: float
    longitude: float
    population: Optional[str]
    spectrum: Tuple[Tuple[float, float], ...] = ()
    soil: Dict[str, float] = field(default_factory=dict)
    weather: Dict[str, float] = field(default_factory=dict)
    yield_raw: Optional[float] = None
    moisture_pct: Optional[float] = None
    timepoint: str = Timepoint.T3.value
    field_no: Optional[int] = None

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise InputError(f"Plot {self.plot_id}: latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise InputError(f"Plot {self.plot_id}: longitude {self.longitude} outside [-180, 180]")
        if self.timepoint not in Timepoint.__members__:
            raise InputError(f"Plot {self.plot_id}: unknown timepoint {self.timepoint!r}")

    @property
    def is_labeled(self) -> bool:
        return self.yield_raw is not None and not np.isnan(self.yield_raw)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered plot records plus the feature table (one row per record)"""
    records: Tuple[PlotRecord, ...]
    table: pd.DataFrame

    def __post_init__(self):
        if len(self.table) != len(self.records):
            raise InputError(
                f"Feature table has {len(self.table)} rows for {len(self.records)} records"
            )

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def from_records(cls, records: Sequence[PlotRecord]) -> "Dataset":
        """Build the raw feature table: soil, weather, then categorical columns"""
        records = tuple(records)
        soil_names = [c for c in SOIL_COLUMNS if any(c in r.soil for r in records)]
        weather_names = sorted({name for r in records for name in r.weather})

        columns: Dict[str, list] = {}
        for name in soil_names:
            columns[name] = [r.soil.get(name, np.nan) for r in records]
        for name in weather_names:
            columns[name] = [r.weather.get(name, np.nan) for r in records]
        columns['population'] = [r.population for r in records]
        columns['field_no'] = [None if r.field_no is None else str(r.field_no) for r in records]
        columns['timepoint'] = [r.timepoint for r in records]

        table = pd.DataFrame(columns, index=pd.RangeIndex(len(records)))
        for name in (*soil_names, *weather_names):
            table[name] = table[name].astype(float)
        return cls(records=records, table=table)

    # === Views ===
    @property
    def feature_names(self) -> List[str]:
        return list(self.table.columns)

    @property
    def feature_matrix(self) -> np.ndarray:
        """The n x p feature matrix; categorical columns must be encoded first"""
        remaining = [c for c in self.table.columns if not pd.api.types.is_numeric_dtype(self.table[c])]
        if remaining:
            raise InputError(f"Categorical columns not encoded yet: {', '.join(remaining)}")
        return self.table.to_numpy(dtype=np.float64)

    @property
    def target(self) -> np.ndarray:
        """Yield per record; NaN for prediction-only plots"""
        return np.array(
            [r.yield_raw if r.is_labeled else np.nan for r in self.records], dtype=np.float64
        )

    @property
    def labeled_indices(self) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.records) if r.is_labeled], dtype=np.int64)

    @property
    def coordinates(self) -> np.ndarray:
        return np.array([[r.latitude, r.longitude] for r in self.records], dtype=np.float64).reshape(-1, 2)

    @property
    def populations(self) -> List[Optional[str]]:
        return [r.population for r in self.records]

    @property
    def plot_ids(self) -> List[str]:
        return [r.plot_id for r in self.records]

    # === Row / column surgery ===
    def subset(self, indices: Sequence[int]) -> "Dataset":
        indices = list(indices)
        return Dataset(
            records=tuple(self.records[i] for i in indices),
            table=self.table.iloc[indices].reset_index(drop=True),
        )

    def with_records(self, records: Sequence[PlotRecord]) -> "Dataset":
        return replace(self, records=tuple(records))

    def with_table(self, table: pd.DataFrame) -> "Dataset":
        return replace(self, table=table.reset_index(drop=True))


@dataclass(frozen=True)
class SplitAssignment:
    """Disjoint train/test node indices over the labeled plots"""
    train_indices: Tuple[int, ...]
    test_indices: Tuple[int, ...]
    seed: int

    def __post_init__(self):
        if set(self.train_indices) & set(self.test_indices):
            raise InputError("Train and test indices overlap")


@dataclass
class PreprocessReport:
    rows_in: int = 0
    rows_dropped_negative_reflectance: int = 0
    rows_dropped_negative_yield: int = 0
    cells_imputed: int = 0
    empty_spectra: int = 0

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)

    def write(self, path: str):
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')


# ======================================================
# === CSV ingestion ===
# ======================================================
def _numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    """Parse a string column to floats; empty cells become NaN"""
    cells = frame[column].astype(str).str.strip().tolist()
    values = np.full(len(cells), np.nan)
    for row, cell in enumerate(cells):
        if not cell:
            continue
        try:
            values[row] = float(cell)
        except ValueError:
            raise RowParseError(row, column, cell) from None
    return values


def _text_column(frame: pd.DataFrame, column: Optional[str], n: int) -> List[Optional[str]]:
    if column is None or column not in frame.columns:
        return [None] * n
    return [value.strip() or None for value in frame[column].astype(str)]


def _is_band_column(name: str) -> bool:
    return name.strip().isdigit()


def _read_plot_frame(path: str) -> pd.DataFrame:
    """Raw string cells; unreadable or malformed files become InputError"""
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except UnicodeDecodeError as e:
        raise InputError(f"{path}: not valid UTF-8 at byte {e.start}") from e
    except pd.errors.EmptyDataError as e:
        raise InputError(f"{path}: file is empty") from e
    except pd.errors.ParserError as e:
        # pandas names the offending line, e.g. "Expected 5 fields in line 3, saw 7"
        raise InputError(f"{path}: malformed CSV: {str(e).strip()}") from e
    except OSError as e:
        raise InputError(f"{path}: cannot read file: {e.strerror or e}") from e


def load_plots_csv(path: str, schema: Optional[Mapping[str, str]] = None) -> Dataset:
    """Read the ingest CSV: identity columns, soil columns, weather columns and wide band columns"""
    mapping = dict(DEFAULT_SCHEMA)
    if schema:
        mapping.update(schema)

    logger.info(f"Loading plots from {path}")
    frame = _read_plot_frame(path)
    frame.columns = [c.strip() for c in frame.columns]

    for name in REQUIRED_FIELDS:
        if mapping[name] not in frame.columns:
            raise SchemaError(mapping[name])

    n = len(frame)
    identity_columns = {mapping[k] for k in mapping}
    band_columns = sorted((c for c in frame.columns if _is_band_column(c)), key=lambda c: float(c))
    soil_columns = [c for c in SOIL_COLUMNS if c in frame.columns]
    weather_columns = [
        c for c in frame.columns
        if c not in identity_columns and c not in soil_columns and not _is_band_column(c)
    ]

    latitude = _numeric_column(frame, mapping['latitude'])
    longitude = _numeric_column(frame, mapping['longitude'])
    for name, values in ((mapping['latitude'], latitude), (mapping['longitude'], longitude)):
        missing = np.flatnonzero(np.isnan(values))
        if missing.size:
            raise RowParseError(int(missing[0]), name, '')

    yields = _numeric_column(frame, mapping['yield'])
    moisture = (
        _numeric_column(frame, mapping['moisture_pct'])
        if mapping['moisture_pct'] in frame.columns else np.full(n, np.nan)
    )
    field_no = (
        _numeric_column(frame, mapping['field_no'])
        if mapping['field_no'] in frame.columns else np.full(n, np.nan)
    )
    soil = {c: _numeric_column(frame, c) for c in soil_columns}
    weather = {c: _numeric_column(frame, c) for c in weather_columns}
    bands = np.column_stack([_numeric_column(frame, c) for c in band_columns]) if band_columns else np.empty((n, 0))
    wavelengths = [float(c) for c in band_columns]

    plot_ids = _text_column(frame, mapping['plot_id'], n)
    populations = _text_column(frame, mapping['population'], n)
    timepoints = _text_column(frame, mapping['timepoint'], n)

    records = []
    for i in range(n):
        if not plot_ids[i]:
            raise RowParseError(i, mapping['plot_id'], '')
        spectrum = tuple(
            (wl, float(value)) for wl, value in zip(wavelengths, bands[i]) if not np.isnan(value)
        )
        timepoint = timepoints[i] or Timepoint.T3.value
        if timepoint not in Timepoint.__members__:
            raise RowParseError(i, mapping['timepoint'], timepoint)
        records.append(PlotRecord(
            plot_id=plot_ids[i],
            latitude=float(latitude[i]),
            longitude=float(longitude[i]),
            population=populations[i],
            spectrum=spectrum,
            soil={c: float(v[i]) for c, v in soil.items()},
            weather={c: float(v[i]) for c, v in weather.items()},
            yield_raw=None if np.isnan(yields[i]) else float(yields[i]),
            moisture_pct=None if np.isnan(moisture[i]) else float(moisture[i]),
            timepoint=timepoint,
            field_no=None if np.isnan(field_no[i]) else int(field_no[i]),
        ))

    ids = [r.plot_id for r in records]
    if len(set(ids)) != len(ids):
        raise InputError("plot_id values are not unique")

    logger.info(f"Loaded {n} plots with {len(band_columns)} bands, {len(soil_columns)} soil "
                f"and {len(weather_columns)} weather columns")
    return Dataset.from_records(records)


def _format_wavelength(wl: float) -> str:
    return str(int(wl)) if float(wl).is_integer() else repr(wl)


def write_plots_csv(ds: Dataset, path: str):
    """Write records back in the ingest schema"""
    wavelengths = sorted({wl for r in ds.records for wl, _ in r.spectrum})
    soil_names = [c for c in SOIL_COLUMNS if any(c in r.soil for r in ds.records)]
    weather_names = sorted({name for r in ds.records for name in r.weather})

    rows = []
    for r in ds.records:
        row = {
            'plot_id': r.plot_id,
            'latitude': r.latitude,
            'longitude': r.longitude,
            'population': r.population,
            'field_no': r.field_no,
            'timepoint': r.timepoint,
            'yield': r.yield_raw,
            'moisture_pct': r.moisture_pct,
        }
        for name in soil_names:
            row[name] = r.soil.get(name, np.nan)
        for name in weather_names:
            row[name] = r.weather.get(name, np.nan)
        spectrum = dict(r.spectrum)
        for wl in wavelengths:
            row[_format_wavelength(wl)] = spectrum.get(wl, np.nan)
        rows.append(row)

    columns = [*DEFAULT_SCHEMA.values(), *soil_names, *weather_names, *map(_format_wavelength, wavelengths)]
    frame = pd.DataFrame(rows, columns=columns)
    frame['field_no'] = frame['field_no'].astype('Int64')
    frame.to_csv(path, index=False, lineterminator='\n')
    logger.info(f"Wrote {len(frame)} plots to {path}")


# ======================================================
# === Preprocessing rules ===
# ======================================================
def normalize_yield(yield_raw: float, moisture_pct: float) -> float:
    """Dry-matter correction of a harvest yield to 13% moisture"""
    if not 0.0 <= moisture_pct < 100.0:
        raise DomainError(f"Moisture {moisture_pct}% outside [0, 100)")
    return yield_raw * ((100.0 - moisture_pct) / (100.0 - REFERENCE_MOISTURE_PCT))


def normalize_dataset_yield(ds: Dataset) -> Dataset:
    """Adjust every labeled record that carries a moisture reading"""
    records = []
    adjusted = 0
    for r in ds.records:
        if r.is_labeled and r.moisture_pct is not None:
            r = replace(r, yield_raw=normalize_yield(r.yield_raw, r.moisture_pct),
                        moisture_pct=REFERENCE_MOISTURE_PCT)
            adjusted += 1
        records.append(r)
    logger.info(f"Normalized {adjusted} yields to {REFERENCE_MOISTURE_PCT}% moisture")
    return ds.with_records(records)


def select_timepoint(ds: Dataset, timepoint: str) -> Dataset:
    if timepoint not in Timepoint.__members__:
        raise InputError(f"Unknown timepoint {timepoint!r}")
    keep = [i for i, r in enumerate(ds.records) if r.timepoint == timepoint]
    logger.info(f"Selected {len(keep)} of {len(ds)} plots at timepoint {timepoint}")
    return ds.subset(keep)


def count_empty_spectra(ds: Dataset) -> int:
    return sum(1 for r in ds.records if not r.spectrum)


def filter_bands(ds: Dataset,
                 min_nm: float = MIN_WAVELENGTH_NM,
                 max_nm: float = MAX_WAVELENGTH_NM) -> Dataset:
    """Drop spectral samples outside the trusted sensor range"""
    records = [
        replace(r, spectrum=tuple((wl, v) for wl, v in r.spectrum if min_nm <= wl <= max_nm))
        for r in ds.records
    ]
    filtered = ds.with_records(records)
    empty = count_empty_spectra(filtered)
    if empty:
        logger.warning(f"{empty} plots have no spectral samples left after band filtering")
    return filtered


@dataclass(frozen=True)
class DropCounts:
    negative_reflectance: int
    negative_yield: int


def drop_invalid(ds: Dataset) -> Tuple[Dataset, DropCounts]:
    """Remove plots with negative reflectance in 400-1000 nm or negative yield"""
    keep = []
    negative_reflectance = negative_yield = 0
    for i, r in enumerate(ds.records):
        if any(v < 0 for wl, v in r.spectrum if MIN_WAVELENGTH_NM <= wl <= MAX_WAVELENGTH_NM):
            negative_reflectance += 1
        elif r.is_labeled and r.yield_raw < 0:
            negative_yield += 1
        else:
            keep.append(i)

    if negative_reflectance or negative_yield:
        logger.info(f"Dropped {negative_reflectance} plots with negative reflectance "
                    f"and {negative_yield} with negative yield")
    return ds.subset(keep), DropCounts(negative_reflectance, negative_yield)


def _numeric_columns(table: pd.DataFrame) -> List[str]:
    return [c for c in table.columns if pd.api.types.is_numeric_dtype(table[c])]


def count_missing(ds: Dataset) -> int:
    cols = _numeric_columns(ds.table)
    return int(ds.table[cols].isna().sum().sum())


def impute_missing(ds: Dataset) -> Dataset:
    """Replace missing numeric cells with the column mean of observed values"""
    table = ds.table.copy()
    cols = _numeric_columns(table)
    missing = table[cols].isna().sum()
    to_fill = [c for c in cols if missing[c] > 0]
    if not to_fill:
        return ds

    means = table[to_fill].mean(skipna=True)
    for column in to_fill:
        if np.isnan(means[column]):
            raise UnimputableError(column)
    table[to_fill] = table[to_fill].fillna(means)

    logger.warning(f"Imputed {int(missing[to_fill].sum())} missing cells across {len(to_fill)} columns")
    return ds.with_table(table)


def one_hot(ds: Dataset, column: str) -> Dataset:
    """Replace a categorical column by indicator columns, levels in lexicographic order"""
    table = ds.table
    if column not in table.columns:
        raise UnknownColumnError(f"Unknown column: '{column}'")

    labels = table[column].map(lambda v: UNKNOWN_LEVEL if v is None or v != v else str(v))
    dummies = pd.get_dummies(labels, prefix=column, prefix_sep='=', dtype=np.float64)
    dummies = dummies[sorted(dummies.columns)]

    position = table.columns.get_loc(column)
    encoded = pd.concat(
        [table.iloc[:, :position], dummies, table.iloc[:, position + 1:]], axis=1
    )
    logger.debug(f"One-hot encoded '{column}' into {dummies.shape[1]} columns")
    return ds.with_table(encoded)


def smooth_soil_grid(grid) -> np.ndarray:
    """3x3 moving mean; border cells average their in-bounds neighbors only"""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
        raise InputError(f"Soil grid must be a non-empty 2-D raster, got shape {grid.shape}")
    kernel = np.ones((3, 3))
    sums = ndimage.convolve(grid, kernel, mode='constant', cval=0.0)
    counts = ndimage.convolve(np.ones_like(grid), kernel, mode='constant', cval=0.0)
    return sums / counts


def split_train_test(ds: Dataset, fraction: float = 0.8, seed: int = 0) -> SplitAssignment:
    """Uniformly random split of the labeled plots"""
    labeled = ds.labeled_indices
    n = labeled.size
    if n < 2:
        raise InputError(f"Need at least 2 labeled plots to split, got {n}")
    if not 0.0 < fraction < 1.0:
        raise InputError(f"Split fraction {fraction} outside (0, 1)")

    n_train = int(np.floor(fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)

    order = np.random.default_rng(seed).permutation(labeled)
    train = tuple(sorted(int(i) for i in order[:n_train]))
    test = tuple(sorted(int(i) for i in order[n_train:]))
    logger.info(f"Split {n} labeled plots into {len(train)} train / {len(test)} test (seed {seed})")
    return SplitAssignment(train_indices=train, test_indices=test, seed=seed)


def preprocess(ds: Dataset) -> Tuple[Dataset, PreprocessReport]:
    """Yield normalization, band filter, outlier removal, indices, imputation, encoding"""
    from core.vegindex import INDEX_NAMES, compute_all_indices

    report = PreprocessReport(rows_in=len(ds))
    ds = normalize_dataset_yield(ds)
    ds = filter_bands(ds)
    report.empty_spectra = count_empty_spectra(ds)

    ds, dropped = drop_invalid(ds)
    report.rows_dropped_negative_reflectance = dropped.negative_reflectance
    report.rows_dropped_negative_yield = dropped.negative_yield

    ds = compute_all_indices(ds)
    undefined = [c for c in INDEX_NAMES if ds.table[c].isna().all()]
    if undefined:
        logger.warning(f"Dropping indices undefined on every plot: {', '.join(undefined)}")
        ds = ds.with_table(ds.table.drop(columns=undefined))
    report.cells_imputed = count_missing(ds)
    ds = impute_missing(ds)
    for column in CATEGORICAL_COLUMNS:
        ds = one_hot(ds, column)

    logger.info(f"Preprocessing done: {len(ds)} plots x {len(ds.feature_names)} features")
    return ds, report
