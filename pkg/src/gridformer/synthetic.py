"""Synthetic climate-like field generator.

Each dynamic variable is a superposition of traveling waves over the sphere,
A_k * sin(a_k*lat + b_k*lon - omega_k*t + phi_k), optionally coupled to the
previous step of the other variables and perturbed by Gaussian noise.  A
"family" parameter draw stands in for one climate-model source: different
families share the functional form but differ in wave counts, speeds,
amplitudes, and coupling, so several families make a heterogeneous
pretraining corpus and a held-out family plays the reanalysis target.

Static variables (terrain-mask analogs) are fixed random smooth fields,
constant in time; they are inputs, never forecast targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import Dataset, GridSpec


@dataclass(frozen=True)
class SynthSpec:
    """Shape and knobs of a synthetic dataset; the family draw fills in theta."""

    grid: GridSpec
    variables: tuple[str, ...]                 # dynamic variables
    static_variables: tuple[str, ...] = ()
    step_hours: int = 6
    n_steps: int = 200
    n_waves: int = 3                            # waves per variable
    amp_range: tuple[float, float] = (0.5, 1.5)
    wavenumber_range: tuple[int, int] = (1, 4)  # lat/lon integer wavenumbers
    speed_range: tuple[float, float] = (0.005, 0.05)  # rad per hour
    coupling: float = 0.0                       # total cross-variable feedback weight
    noise_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "static_variables", tuple(self.static_variables))
        if not self.variables:
            raise ValueError("at least one dynamic variable is required")
        if set(self.variables) & set(self.static_variables):
            raise ValueError("dynamic and static variable names overlap")
        if self.n_steps < 1 or self.n_waves < 1:
            raise ValueError("n_steps and n_waves must be positive")
        if not 0.0 <= self.coupling < 1.0:
            raise ValueError("coupling must be in [0, 1) to keep the recursion stable")

    @property
    def all_variables(self) -> tuple[str, ...]:
        return self.static_variables + self.variables

    def to_manifest(self) -> dict:
        return {
            "variables": list(self.variables),
            "static_variables": list(self.static_variables),
            "step_hours": self.step_hours,
            "n_steps": self.n_steps,
            "n_waves": self.n_waves,
            "amp_range": list(self.amp_range),
            "wavenumber_range": list(self.wavenumber_range),
            "speed_range": list(self.speed_range),
            "coupling": self.coupling,
            "noise_sigma": self.noise_sigma,
        }


@dataclass(frozen=True)
class FamilyParams:
    """One family's wave table theta: per variable, K rows of (A, a, b, omega, phi)."""

    waves: np.ndarray          # (V, K, 5)
    coupling: np.ndarray       # (V, V) feedback weights, zero diagonal
    static_waves: np.ndarray   # (S, K, 4): (A, a, b, phi), time-constant
    family_seed: int

    @property
    def n_vars(self) -> int:
        return self.waves.shape[0]


def sample_family(spec: SynthSpec, family_seed: int) -> FamilyParams:
    """Draw theta for one synthetic source; fully determined by the seed."""
    rng = np.random.default_rng(family_seed)
    v, k = len(spec.variables), spec.n_waves
    lo_n, hi_n = spec.wavenumber_range

    def wave_rows(count: int, with_speed: bool) -> np.ndarray:
        amps = rng.uniform(*spec.amp_range, size=(count, k))
        a = rng.integers(lo_n, hi_n + 1, size=(count, k)).astype(np.float64)
        b = rng.integers(lo_n, hi_n + 1, size=(count, k)).astype(np.float64)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=(count, k))
        if with_speed:
            omega = rng.uniform(*spec.speed_range, size=(count, k))
            omega *= rng.choice([-1.0, 1.0], size=(count, k))
            return np.stack([amps, a, b, omega, phi], axis=-1)
        return np.stack([amps, a, b, phi], axis=-1)

    waves = wave_rows(v, with_speed=True)
    statics = wave_rows(len(spec.static_variables), with_speed=False) \
        if spec.static_variables else np.zeros((0, k, 4))

    coupling = np.zeros((v, v))
    if spec.coupling > 0.0 and v > 1:
        raw = rng.uniform(-1.0, 1.0, size=(v, v))
        np.fill_diagonal(raw, 0.0)
        row_norm = np.abs(raw).sum(axis=1, keepdims=True)
        row_norm[row_norm == 0.0] = 1.0
        coupling = spec.coupling * raw / row_norm

    return FamilyParams(waves=waves, coupling=coupling, static_waves=statics,
                        family_seed=family_seed)


def _wave_field(rows: np.ndarray, lat_r: np.ndarray, lon_r: np.ndarray,
                t_hours: float) -> np.ndarray:
    """Superpose the K waves of one variable at one time; rows are (K, 5)."""
    out = np.zeros((lat_r.size, lon_r.size))
    for amp, a, b, omega, phi in rows:
        out += amp * np.sin(a * lat_r[:, None] + b * lon_r[None, :]
                            - omega * t_hours + phi)
    return out


def generate(spec: SynthSpec, family: FamilyParams, seed: int) -> Dataset:
    """Materialize the dataset; bit-identical for identical (spec, theta, seed)."""
    rng = np.random.default_rng(seed)
    grid = spec.grid
    lat_r = np.deg2rad(grid.lats)
    lon_r = np.deg2rad(grid.lons)
    n, v, s = spec.n_steps, len(spec.variables), len(spec.static_variables)
    h, w = grid.shape

    static = np.zeros((s, h, w))
    for i in range(s):
        rows = family.static_waves[i]
        for amp, a, b, phi in rows:
            static[i] += amp * np.sin(a * lat_r[:, None] + b * lon_r[None, :] + phi)

    dynamic = np.zeros((n, v, h, w))
    prev = None
    couple = family.coupling
    for step in range(n):
        t = step * spec.step_hours
        base = np.stack([_wave_field(family.waves[j], lat_r, lon_r, t) for j in range(v)])
        if prev is not None and spec.coupling > 0.0:
            base += np.einsum("uv,vhw->uhw", couple, prev)
        if spec.noise_sigma > 0.0:
            base += spec.noise_sigma * rng.standard_normal((v, h, w))
        dynamic[step] = base
        prev = dynamic[step]

    values = np.concatenate(
        [np.broadcast_to(static, (n, s, h, w)), dynamic], axis=1) if s else dynamic
    times = np.arange(n, dtype=np.int64) * spec.step_hours
    manifest = dict(spec.to_manifest(), family_seed=family.family_seed, noise_seed=seed)
    return Dataset(grid=grid, variables=spec.all_variables, times=times,
                   values=values.astype(np.float32), generator=manifest)


def generate_synthetic(spec: SynthSpec, family_seed: int, noise_seed: int | None = None) -> Dataset:
    """Convenience wrapper: draw theta from family_seed, then materialize."""
    family = sample_family(spec, family_seed)
    return generate(spec, family, noise_seed if noise_seed is not None else family_seed)
