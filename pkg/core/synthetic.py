"""
Synthetic Trial Generator
Seeded soybean-trial simulator: plot layout, spectra, soil rasters, weather and yields
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.dataset import Dataset, PlotRecord, REFERENCE_MOISTURE_PCT, SOIL_COLUMNS, Timepoint, smooth_soil_grid
from core.errors import ConfigError

logger = logging.getLogger(__name__)

# Plot dimensions (width, length) in metres per trial type
PLOT_SIZE_M = {'PYT': (1.52, 2.13), 'AYT': (1.52, 5.18)}
PLOT_SPACING_M = 0.91
METRES_PER_DEGREE_LAT = 111_320.0

# Table of plots per field for the four-field trial
DEFAULT_PLOTS_PER_FIELD = (770, 912, 800, 679)
DEFAULT_TRIAL_TYPES = ('PYT', 'PYT', 'AYT', 'AYT')

# name: (mean, sd, loading on the spatial fertility field)
SOIL_PROFILE: Dict[str, Tuple[float, float, float]] = {
    'Ca': (2500.0, 150.0, 300.0),
    'CEC': (20.0, 1.5, 3.0),
    'K': (180.0, 15.0, 30.0),
    'Mg': (450.0, 30.0, 60.0),
    'OM': (4.0, 0.3, 0.6),
    'P1': (25.0, 3.0, 6.0),
    'Ph': (6.5, 0.15, -0.3),
    'Clay': (28.0, 2.0, 4.0),
    'Sand': (20.0, 2.5, -5.0),
    'Silt': (52.0, 2.0, 1.0),
}

# Canopy development relative to the final flight
TIMEPOINT_DEVELOPMENT = {'T1': 0.4, 'T2': 0.7, 'T3': 1.0}


@dataclass(frozen=True)
class GeneratorConfig:
    plots_per_field: Tuple[int, ...] = DEFAULT_PLOTS_PER_FIELD
    trial_types: Optional[Tuple[str, ...]] = None
    populations_per_field: int = 40
    columns_per_field: int = 30
    noise: float = 1.0
    ndvi_weight: float = 1500.0
    timepoints: Tuple[str, ...] = (Timepoint.T3.value,)
    include_weather: bool = True
    band_min_nm: int = 350
    band_max_nm: int = 1000
    band_step_nm: int = 5
    anomaly_rate: float = 0.0
    origin_lat: float = 42.0308
    origin_lon: float = -93.6319
    field_gap_m: float = 40.0

    def __post_init__(self):
        if not self.plots_per_field or any(p < 1 for p in self.plots_per_field):
            raise ConfigError(f"Every field needs at least one plot, got {self.plots_per_field}")
        if self.populations_per_field < 1:
            raise ConfigError("populations_per_field must be >= 1")
        if self.columns_per_field < 1:
            raise ConfigError("columns_per_field must be >= 1")
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")
        if not 0.0 <= self.anomaly_rate < 1.0:
            raise ConfigError(f"anomaly_rate {self.anomaly_rate} outside [0, 1)")
        if not self.timepoints or any(t not in TIMEPOINT_DEVELOPMENT for t in self.timepoints):
            raise ConfigError(f"Unknown timepoints {self.timepoints}")
        if self.band_step_nm < 1 or self.band_min_nm > 400 or self.band_max_nm < 1000:
            raise ConfigError("Band grid must cover 400-1000 nm with a positive step")
        if self.trial_types is not None:
            if len(self.trial_types) != len(self.plots_per_field):
                raise ConfigError("trial_types must have one entry per field")
            if any(t not in PLOT_SIZE_M for t in self.trial_types):
                raise ConfigError(f"Unknown trial type in {self.trial_types}")

    @property
    def field_count(self) -> int:
        return len(self.plots_per_field)

    def trial_type(self, field_index: int) -> str:
        if self.trial_types is not None:
            return self.trial_types[field_index]
        return DEFAULT_TRIAL_TYPES[field_index % len(DEFAULT_TRIAL_TYPES)]

    @property
    def wavelengths(self) -> np.ndarray:
        return np.arange(self.band_min_nm, self.band_max_nm + 1, self.band_step_nm, dtype=np.float64)


def canopy_reflectance(wavelengths: np.ndarray, vigor: float) -> np.ndarray:
    """Noise-free canopy curve: green peak, red well, red edge, NIR plateau with a water dip"""
    wl = np.asarray(wavelengths, dtype=np.float64)
    red = 0.08 - 0.05 * vigor
    nir = 0.30 + 0.30 * vigor
    visible = red + (0.03 + 0.04 * vigor) * np.exp(-((wl - 550.0) / 40.0) ** 2)
    edge = 1.0 / (1.0 + np.exp(-(wl - 715.0) / 12.0))
    water = 1.0 - 0.12 * np.exp(-((wl - 970.0) / 20.0) ** 2)
    return (visible + (nir - red) * edge) * water


def _ndvi(vigor: float) -> float:
    t = canopy_reflectance(np.array([650.0, 750.0]), vigor)
    return float((t[1] - t[0]) / (t[1] + t[0]))


def _spatial_field(rng: np.random.Generator, x: np.ndarray, y: np.ndarray,
                   extent: Tuple[float, float], bumps: int = 6) -> np.ndarray:
    """Sum of Gaussian bumps over the field, a smooth fertility surface"""
    width, height = extent
    scale = 0.25 * max(width, height, 1.0)
    surface = np.zeros_like(x)
    for _ in range(bumps):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        amplitude = rng.normal(0.0, 1.0)
        surface += amplitude * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * scale ** 2))
    return surface


def _weather(rng: np.random.Generator) -> Dict[str, float]:
    return {
        'temperature_c': float(rng.normal(22.0, 1.5)),
        'precipitation_mm': float(rng.normal(480.0, 40.0)),
        'humidity_pct': float(rng.normal(70.0, 4.0)),
        'solar_mj': float(rng.normal(19.0, 1.2)),
    }


def generate_synthetic_trial(config: GeneratorConfig = GeneratorConfig(), seed: int = 0) -> Dataset:
    """Deterministic for a given config and seed"""
    rng = np.random.default_rng(seed)
    wavelengths = config.wavelengths
    records: List[PlotRecord] = []

    # === Layout and latent yield per field ===
    fields = []
    offset_x = 0.0
    for f, count in enumerate(config.plots_per_field):
        width, length = PLOT_SIZE_M[config.trial_type(f)]
        cols = min(config.columns_per_field, count)
        rows = math.ceil(count / cols)
        grid_r, grid_c = np.divmod(np.arange(rows * cols), cols)
        x = offset_x + grid_c * (width + PLOT_SPACING_M) + width / 2.0
        y = grid_r * (length + PLOT_SPACING_M) + length / 2.0
        extent = (cols * (width + PLOT_SPACING_M), rows * (length + PLOT_SPACING_M))
        surface = _spatial_field(rng, x - offset_x, y, extent)

        baseline = 3400.0 + rng.normal(0.0, 200.0)
        population_effect = rng.normal(0.0, 350.0, size=config.populations_per_field)
        population = rng.integers(0, config.populations_per_field, size=count)
        latent = baseline + population_effect[population] + 250.0 * surface[:count]

        fields.append({
            'rows': rows, 'cols': cols, 'x': x[:count], 'y': y[:count],
            'grid_r': grid_r[:count], 'grid_c': grid_c[:count],
            'surface_grid': surface.reshape(rows, cols),
            'population': population, 'latent': latent,
        })
        offset_x += extent[0] + config.field_gap_m

    all_latent = np.concatenate([f['latent'] for f in fields])
    center, spread = all_latent.mean(), all_latent.std() or 1.0

    for f, info in enumerate(fields):
        field_no = f + 1
        count = info['latent'].size

        # Soil rasters share the fertility surface and are smoothed like field samples
        soil_grids = {}
        for name in SOIL_COLUMNS:
            mean, sd, loading = SOIL_PROFILE[name]
            raw = mean + loading * info['surface_grid'] + rng.normal(0.0, sd, size=info['surface_grid'].shape)
            soil_grids[name] = smooth_soil_grid(raw)
        weather = _weather(rng) if config.include_weather else {}

        latitude = config.origin_lat + info['y'] / METRES_PER_DEGREE_LAT
        longitude = config.origin_lon + info['x'] / (
            METRES_PER_DEGREE_LAT * math.cos(math.radians(config.origin_lat))
        )
        vigor = np.clip(0.5 + 0.15 * (info['latent'] - center) / spread, 0.05, 0.95)

        for k in range(count):
            r, c = int(info['grid_r'][k]), int(info['grid_c'][k])
            soil = {name: float(grid[r, c]) for name, grid in soil_grids.items()}
            population = f"F{field_no}-G{int(info['population'][k]):03d}"
            final_ndvi = _ndvi(float(vigor[k]))
            yield_13 = info['latent'][k] + config.ndvi_weight * final_ndvi + rng.normal(0.0, 150.0 * config.noise)
            moisture = float(np.clip(REFERENCE_MOISTURE_PCT + rng.normal(0.0, 1.5 * config.noise), 8.0, 20.0))
            yield_raw = float(yield_13 * (100.0 - REFERENCE_MOISTURE_PCT) / (100.0 - moisture))
            if config.anomaly_rate and rng.random() < config.anomaly_rate:
                yield_raw = -abs(yield_raw)

            for timepoint in config.timepoints:
                development = TIMEPOINT_DEVELOPMENT[timepoint]
                stage_vigor = 0.5 + development * (float(vigor[k]) - 0.5)
                curve = canopy_reflectance(wavelengths, stage_vigor)
                curve = curve * (1.0 + rng.normal(0.0, 0.01 * config.noise, size=curve.size))
                # Detector noise below 400 nm can go negative
                low = wavelengths < 400.0
                curve[low] = 0.02 + rng.normal(0.0, 0.03, size=int(low.sum()))
                if config.anomaly_rate and rng.random() < config.anomaly_rate:
                    band = rng.integers(int(np.argmax(~low)), curve.size)
                    curve[band] = -abs(curve[band]) - 0.01

                plot_id = f"F{field_no}-R{r:02d}-C{c:02d}"
                if len(config.timepoints) > 1:
                    plot_id = f"{plot_id}-{timepoint}"
                records.append(PlotRecord(
                    plot_id=plot_id,
                    latitude=float(latitude[k]),
                    longitude=float(longitude[k]),
                    population=population,
                    spectrum=tuple(zip(wavelengths.tolist(), curve.tolist())),
                    soil=soil,
                    weather=dict(weather),
                    yield_raw=yield_raw,
                    moisture_pct=moisture,
                    timepoint=timepoint,
                    field_no=field_no,
                ))

    logger.info(f"Generated {len(records)} synthetic plots across {config.field_count} fields (seed {seed})")
    return Dataset.from_records(records)
