"""
Vegetation Indices
Interpolated band access and the catalog of 52 hyperspectral vegetation indices
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.dataset import Dataset, MAX_WAVELENGTH_NM, MIN_WAVELENGTH_NM
from core.errors import ExtrapolationError, InputError, UnknownIndexError

logger = logging.getLogger(__name__)

Band = Callable[[float], float]


@dataclass(frozen=True)
class BandSpectrum:
    """Reflectance samples at strictly increasing wavelengths within 400-1000 nm"""
    wavelengths: np.ndarray
    reflectance: np.ndarray

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        refl = np.asarray(self.reflectance, dtype=np.float64)
        if wl.shape != refl.shape or wl.ndim != 1:
            raise InputError("Wavelength and reflectance arrays must be 1-D and equally long")
        if wl.size and (wl[0] < MIN_WAVELENGTH_NM or wl[-1] > MAX_WAVELENGTH_NM):
            raise InputError(f"Spectrum must lie within {MIN_WAVELENGTH_NM:g}-{MAX_WAVELENGTH_NM:g} nm")
        if np.any(np.diff(wl) <= 0):
            raise InputError("Spectrum wavelengths must be strictly increasing")
        object.__setattr__(self, 'wavelengths', wl)
        object.__setattr__(self, 'reflectance', refl)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[float, float]]) -> "BandSpectrum":
        pairs = sorted(pairs)
        return cls(
            wavelengths=np.array([wl for wl, _ in pairs], dtype=np.float64),
            reflectance=np.array([v for _, v in pairs], dtype=np.float64),
        )

    def __len__(self) -> int:
        return int(self.wavelengths.size)


def reflectance_at(spectrum: BandSpectrum, wavelength: float) -> float:
    """Linear interpolation between the two nearest samples; exact on a sample"""
    if len(spectrum) == 0:
        raise ExtrapolationError("Spectrum has no samples")
    lo, hi = spectrum.wavelengths[0], spectrum.wavelengths[-1]
    if wavelength < lo or wavelength > hi:
        raise ExtrapolationError(f"Wavelength {wavelength} nm outside sampled range [{lo:g}, {hi:g}]")
    return float(np.interp(wavelength, spectrum.wavelengths, spectrum.reflectance))


@dataclass(frozen=True)
class IndexDefinition:
    name: str
    formula: Callable[[Band], float]


def _nd(a: float, b: float) -> float:
    return (a - b) / (a + b)


# Catalog order is the column order of every index table
INDEX_CATALOG: Tuple[IndexDefinition, ...] = (
    IndexDefinition('CI', lambda T: T(675) * T(690) / T(683) ** 2),
    IndexDefinition('Clre', lambda T: T(750) / T(710) - 1),
    IndexDefinition('Datt1', lambda T: (T(850) - T(710)) / (T(850) - T(680))),
    IndexDefinition('Datt4', lambda T: T(672) / (T(550) * T(708))),
    IndexDefinition('Datt6', lambda T: T(860) / (T(550) * T(708))),
    IndexDefinition('DDI', lambda T: (T(749) - T(720)) - (T(701) - T(672))),
    IndexDefinition('DPI', lambda T: (T(688) + T(710)) / T(697) ** 2),
    IndexDefinition('Gitelson2', lambda T: (T(750) - T(800)) / (T(695) - T(740)) - 1),
    IndexDefinition('GNDVI', lambda T: _nd(T(750), T(550))),
    IndexDefinition('MCARI', lambda T: ((T(700) - T(670)) - 0.2 * (T(700) - T(550))) * (T(700) / T(670))),
    IndexDefinition('MCARI3', lambda T: ((T(750) - T(710)) - 0.2 * (T(750) - T(550))) * (T(750) / T(715))),
    IndexDefinition('MND1', lambda T: (T(800) - T(680)) / (T(800) + T(680) - 2 * T(445))),
    IndexDefinition('MND2', lambda T: (T(750) - T(705)) / (T(750) + T(705) - 2 * T(445))),
    IndexDefinition('mSR', lambda T: (T(800) - T(445)) / (T(680) - T(445))),
    IndexDefinition('mSR2', lambda T: (T(750) / T(705) - 1) / math.sqrt(T(750) / T(705) + 1)),
    IndexDefinition('MTCI', lambda T: (T(754) - T(709)) / (T(709) - T(681))),
    IndexDefinition('MTVI1', lambda T: 1.2 * (1.2 * (T(800) - T(550)) - 2.5 * (T(670) - T(550)))),
    IndexDefinition('ND1', lambda T: _nd(T(550), T(531))),
    IndexDefinition('ND2', lambda T: _nd(T(682), T(553))),
    IndexDefinition('NDchl', lambda T: _nd(T(925), T(710))),
    IndexDefinition('NDRE', lambda T: _nd(T(790), T(720))),
    IndexDefinition('NDVI1', lambda T: _nd(T(750), T(650))),
    IndexDefinition('NDVI2', lambda T: _nd(T(750), T(550))),
    IndexDefinition('NDVI3', lambda T: _nd(T(750), T(710))),
    IndexDefinition('NPCI', lambda T: _nd(T(680), T(430))),
    IndexDefinition('NPQI', lambda T: _nd(T(415), T(435))),
    # Literal product form, not the usual ratio
    IndexDefinition('OSAVI', lambda T: (1 + 0.16) * (T(800) - T(670)) * (T(800) + T(670) - 0.16)),
    IndexDefinition('PBI', lambda T: T(810) / T(560)),
    IndexDefinition('PPR', lambda T: _nd(T(550), T(450))),
    IndexDefinition('PRI', lambda T: _nd(T(550), T(530))),
    IndexDefinition('PSNDb1', lambda T: _nd(T(800), T(650))),
    IndexDefinition('PSNDc1', lambda T: _nd(T(800), T(500))),
    IndexDefinition('PSNDc2', lambda T: _nd(T(800), T(470))),
    IndexDefinition('PSRI', lambda T: (T(678) - T(500)) / T(750)),
    IndexDefinition('PSSRc1', lambda T: T(800) / T(500)),
    IndexDefinition('PSSRc2', lambda T: T(800) / T(740)),
    IndexDefinition('PVR', lambda T: _nd(T(550), T(650))),
    IndexDefinition('PWI', lambda T: T(970) / T(900)),
    IndexDefinition('RDVI', lambda T: (T(800) - T(670)) / math.sqrt(T(800) + T(670))),
    IndexDefinition('RVSI', lambda T: (T(718) + T(748)) / 2 - T(733)),
    IndexDefinition('SAVI', lambda T: 1.16 * (T(800) - T(670)) / (T(800) + T(670) + 0.16)),
    IndexDefinition('SIPI', lambda T: (T(800) - T(445)) / (T(800) + T(680))),
    IndexDefinition('SR1', lambda T: T(430) / T(680)),
    IndexDefinition('SR2', lambda T: T(440) / T(740)),
    IndexDefinition('SR3', lambda T: T(550) / T(672)),
    IndexDefinition('SR4', lambda T: T(550) / T(750)),
    IndexDefinition('DSWI-4', lambda T: T(550) / T(680)),
    IndexDefinition('SRPI', lambda T: T(430) / T(680)),
    IndexDefinition('TCARI', lambda T: 3 * ((T(700) - T(670)) - 0.2 * (T(700) - T(550)) * (T(700) / T(670)))),
    IndexDefinition('TCI', lambda T: 1.2 * (T(700) - T(550)) - 1.5 * (T(670) - T(550)) * math.sqrt(T(700) / T(670))),
    IndexDefinition('TVI', lambda T: 0.5 * (120 * (T(750) - T(550)) - 200 * (T(670) - T(550)))),
    IndexDefinition('WBI', lambda T: T(970) / T(902)),
)

INDEX_NAMES: Tuple[str, ...] = tuple(d.name for d in INDEX_CATALOG)
_BY_NAME: Dict[str, IndexDefinition] = {d.name: d for d in INDEX_CATALOG}


def _evaluate(definition: IndexDefinition, band: Band) -> float:
    try:
        value = definition.formula(band)
    except ZeroDivisionError:
        return float('nan')
    except ValueError:
        # math.sqrt of a negative argument
        return float('nan')
    return float(value) if math.isfinite(value) else float('nan')


def compute_index(name: str, spectrum: BandSpectrum) -> float:
    """Evaluate one catalog index; NaN when the formula is undefined"""
    definition = _BY_NAME.get(name)
    if definition is None:
        raise UnknownIndexError(f"Unknown vegetation index: '{name}'")
    return _evaluate(definition, lambda wl: reflectance_at(spectrum, wl))


class _CachedBands:
    """Band accessor that interpolates each wavelength once per spectrum"""

    def __init__(self, spectrum: BandSpectrum):
        self.spectrum = spectrum
        self._cache: Dict[float, float] = {}

    def __call__(self, wavelength: float) -> float:
        value = self._cache.get(wavelength)
        if value is None:
            value = reflectance_at(self.spectrum, wavelength)
            self._cache[wavelength] = value
        return value


def index_row(spectrum: Optional[BandSpectrum]) -> List[float]:
    """All 52 indices for one spectrum in catalog order"""
    if spectrum is None or len(spectrum) == 0:
        return [float('nan')] * len(INDEX_CATALOG)
    band = _CachedBands(spectrum)
    row = []
    for definition in INDEX_CATALOG:
        try:
            row.append(_evaluate(definition, band))
        except ExtrapolationError:
            row.append(float('nan'))
    return row


def compute_all_indices(ds: Dataset) -> Dataset:
    """Append the 52 index columns to the feature table"""
    rows = [
        index_row(BandSpectrum.from_pairs(r.spectrum) if r.spectrum else None)
        for r in ds.records
    ]
    indices = pd.DataFrame(rows, columns=list(INDEX_NAMES), dtype=np.float64)

    table = ds.table.drop(columns=[c for c in INDEX_NAMES if c in ds.table.columns])
    table = pd.concat([table.reset_index(drop=True), indices], axis=1)

    undefined = int(indices.isna().sum().sum())
    if undefined:
        logger.warning(f"{undefined} index values undefined (degenerate or uncovered bands)")
    logger.info(f"Computed {len(INDEX_NAMES)} vegetation indices for {len(ds)} plots")
    return ds.with_table(table)


def index_correlation_matrix(ds: Dataset, names: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Pairwise-complete Pearson correlation between index columns"""
    if names is None:
        # Indices undefined on every plot are dropped during preprocessing
        names = [n for n in INDEX_NAMES if n in ds.table.columns]
        if not names:
            raise UnknownIndexError("No vegetation index columns have been computed")
    names = list(names)
    missing = [n for n in names if n not in ds.table.columns]
    if missing:
        raise UnknownIndexError(f"Index columns not computed: {', '.join(missing)}")

    corr = ds.table[names].astype(np.float64).corr(method='pearson', min_periods=2)
    values = corr.to_numpy(copy=True)
    values = (values + values.T) / 2.0
    defined = ~np.isnan(np.diag(values))
    diag = np.where(defined, 1.0, np.nan)
    np.fill_diagonal(values, diag)
    return pd.DataFrame(values, index=names, columns=names)


def write_indices_csv(ds: Dataset, path: str):
    frame = ds.table[[n for n in INDEX_NAMES if n in ds.table.columns]].copy()
    frame.insert(0, 'plot_id', ds.plot_ids)
    frame.to_csv(path, index=False, lineterminator='\n')
    logger.info(f"Wrote index table to {path}")


def write_correlation_csv(corr: pd.DataFrame, path: str):
    corr.to_csv(path, index_label='index', lineterminator='\n')
    logger.info(f"Wrote index correlation matrix to {path}")
