"""Gridded datasets: grid geometry, regridding, cropping, averaging, normalization.

Fields live on regular latitude/longitude grids.  Latitudes are cell-center
values inside [-90, 90]; longitudes are equispaced in [0, 360) and may wrap
(a region cut across the dateline keeps its eastward column order).  A
dataset is an immutable stack of time-ordered snapshots, each of shape
V x H x W with variables in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np


class GridError(ValueError):
    pass


_LON_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Regular lat/lon grid geometry; owns the row latitudes used for weighting."""

    lats: np.ndarray  # H values, strictly monotonic, degrees in [-90, 90]
    lons: np.ndarray  # W values, degrees in [0, 360), equispaced modulo wrap

    def __post_init__(self):
        lats = np.asarray(self.lats, dtype=np.float64)
        lons = np.asarray(self.lons, dtype=np.float64)
        object.__setattr__(self, "lats", lats)
        object.__setattr__(self, "lons", lons)
        if lats.ndim != 1 or lats.size < 1 or lons.ndim != 1 or lons.size < 1:
            raise GridError("grid needs at least one latitude and one longitude")
        if np.any(np.abs(lats) > 90.0):
            raise GridError(f"latitudes must lie in [-90, 90], got range "
                            f"[{lats.min()}, {lats.max()}]")
        d = np.diff(lats)
        if lats.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise GridError("latitudes must be strictly increasing or decreasing")
        if np.any(lons < 0.0) or np.any(lons >= 360.0):
            raise GridError("longitudes must lie in [0, 360)")
        if lons.size > 1:
            steps = np.diff(lons) % 360.0
            if not np.all(np.abs(steps - steps[0]) <= _LON_TOL):
                raise GridError("longitude spacing must be uniform")

    @property
    def n_lat(self) -> int:
        return self.lats.size

    @property
    def n_lon(self) -> int:
        return self.lons.size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_lat, self.n_lon)

    @property
    def lon_step(self) -> float:
        if self.lons.size < 2:
            return 360.0
        return float(np.diff(self.lons)[0] % 360.0)

    @property
    def is_global_lon(self) -> bool:
        """True when the columns tile the full circle (periodic wrap is valid)."""
        return abs(self.lons.size * self.lon_step - 360.0) <= 1e-6

    def __eq__(self, other) -> bool:
        return (isinstance(other, GridSpec)
                and np.array_equal(self.lats, other.lats)
                and np.array_equal(self.lons, other.lons))

    @staticmethod
    def global_grid(n_lat: int, n_lon: int) -> "GridSpec":
        """Cell-centered global grid, equator-symmetric, longitudes from 0."""
        lats = -90.0 + (np.arange(n_lat) + 0.5) * (180.0 / n_lat)
        lons = np.arange(n_lon) * (360.0 / n_lon)
        return GridSpec(lats=lats, lons=lons)


@dataclass(frozen=True)
class VariableVocabulary:
    """Ordered, immutable set of variable names a model can ever see."""

    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        if len(set(names)) != len(names):
            raise GridError("variable names must be unique")
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"variable {name!r} is not in the vocabulary {self.names}") from None


@dataclass(frozen=True)
class GriddedSample:
    """A single snapshot: V x H x W values at one timestamp."""

    time: int                 # hours since epoch
    values: np.ndarray        # (V, H, W)
    variables: tuple[str, ...]
    grid: GridSpec

    def __post_init__(self):
        values = np.asarray(self.values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "variables", tuple(self.variables))
        if values.ndim != 3:
            raise GridError(f"sample values must be V x H x W, got shape {values.shape}")
        if values.shape[0] != len(self.variables):
            raise GridError(f"{values.shape[0]} fields but {len(self.variables)} variable names")
        if values.shape[1:] != self.grid.shape:
            raise GridError(f"field shape {values.shape[1:]} does not match grid {self.grid.shape}")
        if not np.isfinite(values).all():
            raise GridError("sample contains non-finite values")


@dataclass
class Dataset:
    """Time-ordered stack of snapshots sharing one grid and variable list."""

    grid: GridSpec
    variables: tuple[str, ...]
    times: np.ndarray          # (N,) int64 hours
    values: np.ndarray         # (N, V, H, W) float32
    norm_stats: dict[str, tuple[float, float]] | None = None
    generator: dict | None = None

    def __post_init__(self):
        self.variables = tuple(self.variables)
        self.times = np.asarray(self.times, dtype=np.int64)
        self.values = np.asarray(self.values)
        n, v = self.values.shape[:2]
        if n != self.times.size:
            raise GridError(f"{n} snapshots but {self.times.size} timestamps")
        if v != len(self.variables):
            raise GridError(f"{v} fields but {len(self.variables)} variable names")
        if self.values.shape[2:] != self.grid.shape:
            raise GridError(f"field shape {self.values.shape[2:]} does not match grid {self.grid.shape}")

    def __len__(self) -> int:
        return self.times.size

    @property
    def step_hours(self) -> int:
        if len(self) < 2:
            raise GridError("step is undefined for a dataset with fewer than 2 snapshots")
        steps = np.diff(self.times)
        if not np.all(steps == steps[0]):
            raise GridError("timestamps are not equispaced")
        return int(steps[0])

    def sample(self, i: int) -> GriddedSample:
        return GriddedSample(time=int(self.times[i]), values=self.values[i],
                             variables=self.variables, grid=self.grid)

    def var_index(self, name: str) -> int:
        try:
            return self.variables.index(name)
        except ValueError:
            raise KeyError(f"variable {name!r} not in dataset {self.variables}") from None

    def select_variables(self, names: Sequence[str]) -> "Dataset":
        idx = [self.var_index(n) for n in names]
        stats = None
        if self.norm_stats is not None:
            stats = {n: self.norm_stats[n] for n in names if n in self.norm_stats}
        return Dataset(grid=self.grid, variables=tuple(names), times=self.times,
                       values=self.values[:, idx], norm_stats=stats, generator=self.generator)

    def slice_time(self, start: int, stop: int) -> "Dataset":
        return Dataset(grid=self.grid, variables=self.variables,
                       times=self.times[start:stop], values=self.values[start:stop],
                       norm_stats=self.norm_stats, generator=self.generator)


# -- bilinear regridding -------------------------------------------------------

def _axis_weights(src: np.ndarray, dst: np.ndarray, step_hint: float):
    """Bracketing indices and blend weights of dst coords within ascending src."""
    i1 = np.searchsorted(src, dst, side="right")
    i0 = i1 - 1
    i0c = np.clip(i0, 0, src.size - 1)
    i1c = np.clip(i1, 0, src.size - 1)
    span = src[i1c] - src[i0c]
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(span > 0, (dst - src[i0c]) / np.where(span == 0, 1.0, span), 0.0)
    # outside the hull: clamp, but only within half a source cell (pole rows)
    over = np.maximum(dst - src[-1], src[0] - dst)
    if np.any(over > 0.5 * step_hint + 1e-9):
        j = int(np.argmax(over))
        raise GridError(f"target latitude {dst[j]} lies outside the source grid "
                        f"[{src[0]}, {src[-1]}] by more than half a cell")
    return i0c, i1c, np.clip(w, 0.0, 1.0)


def regrid_bilinear(values: np.ndarray, src: GridSpec, dst: GridSpec) -> np.ndarray:
    """Bilinear interpolation of (..., H, W) fields from src onto dst.

    Longitude wraps periodically when the source tiles the full circle;
    latitudes beyond the source's outermost rows are clamped (pole rows only).
    """
    values = np.asarray(values)
    if values.shape[-2:] != src.shape:
        raise GridError(f"field shape {values.shape[-2:]} does not match source grid {src.shape}")

    lats = src.lats
    flip = lats.size > 1 and lats[0] > lats[-1]
    if flip:
        lats = lats[::-1]
        values = values[..., ::-1, :]
    lat_step = float(np.abs(np.diff(lats)).mean()) if lats.size > 1 else 180.0
    li0, li1, lw = _axis_weights(lats, dst.lats, lat_step)

    lons = src.lons
    dlon = dst.lons
    if src.is_global_lon:
        step = src.lon_step
        pos = (dlon - lons[0]) % 360.0 / step
        j0 = np.floor(pos).astype(np.int64) % src.n_lon
        j1 = (j0 + 1) % src.n_lon
        wl = pos - np.floor(pos)
    else:
        base = lons[0]
        src_rel = (lons - base) % 360.0
        dst_rel = (dlon - base) % 360.0
        order = np.argsort(src_rel)
        if np.any(dst_rel > src_rel[order][-1] + _LON_TOL) :
            raise GridError("target longitudes extend beyond a non-periodic source grid")
        j0s, j1s, wl = _axis_weights(src_rel[order], np.minimum(dst_rel, src_rel[order][-1]),
                                     src.lon_step)
        j0, j1 = order[j0s], order[j1s]

    top = values[..., li0, :]
    bot = values[..., li1, :]
    lw_col = lw[:, None]
    row0 = top[..., :, j0] * (1.0 - wl) + top[..., :, j1] * wl
    row1 = bot[..., :, j0] * (1.0 - wl) + bot[..., :, j1] * wl
    out = row0 * (1.0 - lw_col) + row1 * lw_col
    return np.ascontiguousarray(out, dtype=values.dtype)


def regrid_dataset(ds: Dataset, dst: GridSpec) -> Dataset:
    out = regrid_bilinear(ds.values, ds.grid, dst)
    return Dataset(grid=dst, variables=ds.variables, times=ds.times, values=out,
                   norm_stats=None, generator=ds.generator)


# -- regional crops --------------------------------------------------------------

def crop_indices(grid: GridSpec, lat_min: float, lat_max: float,
                 lon_min: float, lon_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices whose coordinates fall inside the closed box.

    Longitude bounds may wrap (lon_min > lon_max selects across 0 degrees);
    wrapped selections keep eastward order starting from lon_min.
    """
    if lat_min > lat_max:
        raise GridError(f"lat_min {lat_min} exceeds lat_max {lat_max}")
    rows = np.nonzero((grid.lats >= lat_min) & (grid.lats <= lat_max))[0]

    lon_min = lon_min % 360.0
    lon_max = lon_max % 360.0
    if lon_min <= lon_max:
        cols = np.nonzero((grid.lons >= lon_min) & (grid.lons <= lon_max))[0]
        cols = cols[np.argsort((grid.lons[cols] - lon_min) % 360.0, kind="stable")]
    else:
        east = np.nonzero(grid.lons >= lon_min)[0]
        west = np.nonzero(grid.lons <= lon_max)[0]
        east = east[np.argsort(grid.lons[east], kind="stable")]
        west = west[np.argsort(grid.lons[west], kind="stable")]
        cols = np.concatenate([east, west])
    if rows.size == 0 or cols.size == 0:
        raise GridError(f"crop box lat [{lat_min}, {lat_max}] lon [{lon_min}, {lon_max}] "
                        "does not intersect the grid")
    return rows, cols


def crop_region(sample_or_ds, lat_min: float, lat_max: float,
                lon_min: float, lon_max: float):
    """Crop a sample or dataset to the closed lat/lon box; grid spec follows."""
    rows, cols = crop_indices(sample_or_ds.grid, lat_min, lat_max, lon_min, lon_max)
    sub = GridSpec(lats=sample_or_ds.grid.lats[rows], lons=sample_or_ds.grid.lons[cols])
    if isinstance(sample_or_ds, GriddedSample):
        vals = sample_or_ds.values[:, rows][:, :, cols]
        return GriddedSample(time=sample_or_ds.time, values=vals,
                             variables=sample_or_ds.variables, grid=sub)
    ds = sample_or_ds
    vals = ds.values[:, :, rows][:, :, :, cols]
    return Dataset(grid=sub, variables=ds.variables, times=ds.times,
                   values=np.ascontiguousarray(vals), norm_stats=ds.norm_stats,
                   generator=ds.generator)


# -- sub-seasonal averaged targets -----------------------------------------------

@dataclass
class S2SPairs:
    """Input snapshots paired with window-averaged future targets."""

    inputs: Dataset
    targets: Dataset              # target[i] averages [t_i + lead, t_i + lead + window)
    lead_hours: int
    window_hours: int
    skipped: int                  # pairs dropped for missing future coverage


def build_s2s_targets(series: Dataset, lead_hours: int, window_hours: int = 336) -> S2SPairs:
    """Average the series over [t + lead, t + lead + window) for each usable t."""
    step = series.step_hours
    if window_hours % step != 0:
        raise GridError(f"window {window_hours} h is not a multiple of the series step {step} h")
    if lead_hours % step != 0:
        raise GridError(f"lead {lead_hours} h is not a multiple of the series step {step} h")
    k_lead = lead_hours // step
    k_win = window_hours // step
    n = len(series)
    usable = n - k_lead - k_win + 1
    skipped = n - max(usable, 0)
    if usable <= 0:
        raise GridError(f"series of {n} steps cannot cover lead {lead_hours} h "
                        f"plus window {window_hours} h")

    # mean over the half-open window via cumulative sums
    csum = np.cumsum(series.values, axis=0, dtype=np.float64)
    csum = np.concatenate([np.zeros_like(csum[:1]), csum], axis=0)
    lo = np.arange(usable) + k_lead
    hi = lo + k_win
    averaged = (csum[hi] - csum[lo]) / k_win

    inputs = series.slice_time(0, usable)
    targets = Dataset(grid=series.grid, variables=series.variables,
                      times=series.times[:usable] + lead_hours,
                      values=averaged.astype(series.values.dtype),
                      norm_stats=series.norm_stats, generator=series.generator)
    return S2SPairs(inputs=inputs, targets=targets, lead_hours=lead_hours,
                    window_hours=window_hours, skipped=skipped)


# -- normalization ----------------------------------------------------------------

class NormError(ValueError):
    pass


def compute_norm_stats(ds: Dataset) -> dict[str, tuple[float, float]]:
    """Per-variable mean and population std over every snapshot and grid point."""
    if len(ds) == 0:
        raise NormError("cannot compute statistics of an empty dataset")
    stats: dict[str, tuple[float, float]] = {}
    for i, name in enumerate(ds.variables):
        x = ds.values[:, i].astype(np.float64)
        mean = float(x.mean())
        std = float(x.std())  # population convention: divide by N
        if std == 0.0:
            raise NormError(f"variable {name!r} has zero standard deviation")
        stats[name] = (mean, std)
    return stats


def normalize(ds: Dataset, stats: dict[str, tuple[float, float]]) -> Dataset:
    out = np.empty_like(ds.values)
    for i, name in enumerate(ds.variables):
        mean, std = stats[name]
        if std <= 0.0:
            raise NormError(f"variable {name!r} has non-positive std {std}")
        out[:, i] = (ds.values[:, i] - mean) / std
    return Dataset(grid=ds.grid, variables=ds.variables, times=ds.times, values=out,
                   norm_stats=stats, generator=ds.generator)


def denormalize(ds: Dataset, stats: dict[str, tuple[float, float]]) -> Dataset:
    out = np.empty_like(ds.values)
    for i, name in enumerate(ds.variables):
        mean, std = stats[name]
        out[:, i] = ds.values[:, i] * std + mean
    return Dataset(grid=ds.grid, variables=ds.variables, times=ds.times, values=out,
                   norm_stats=None, generator=ds.generator)


def normalize_array(values: np.ndarray, variables: Sequence[str],
                    stats: dict[str, tuple[float, float]]) -> np.ndarray:
    """Normalize (..., V, H, W) values in variable order."""
    out = np.empty_like(values)
    for i, name in enumerate(variables):
        mean, std = stats[name]
        out[..., i, :, :] = (values[..., i, :, :] - mean) / std
    return out


def denormalize_array(values: np.ndarray, variables: Sequence[str],
                      stats: dict[str, tuple[float, float]]) -> np.ndarray:
    out = np.empty_like(values)
    for i, name in enumerate(variables):
        mean, std = stats[name]
        out[..., i, :, :] = values[..., i, :, :] * std + mean
    return out
