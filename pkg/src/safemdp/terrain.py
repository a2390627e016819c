"""Terrain grids and the slope-safety environment built on them.

A rover on a height map fails when it climbs too steep a slope, so safety is
a property of transitions rather than cells: moving from cell ``s`` to cell
``s'`` has safety feature ``H(s) - H(s')`` and is safe when that drop stays
above ``-cell_size * tan(conservative_slope)``.  The grid MDP is therefore
augmented with one action-state per transition and the GP models height
*differences* directly, via the covariance that a GP over heights induces on
them.  Stay actions and original cells have a height difference of exactly
zero, so they are always safe and never constrain exploration.

The module also reads and writes ESRI ASCII grids and synthesizes test
terrain, either as an exact draw from a kernel or as a parametric
crater-and-hill surface.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .explorer import Environment, GpBandModel
from .gp import (
    ConfidenceBands,
    GpModel,
    Kernel,
    StationaryCovariance,
    beta as beta_value,
    kernel_eval,
    update_bands,
)
from .mdp import AugmentedMdp, augment, grid_mdp

#: Exact GP draws factorize a dense covariance over all cells; refuse grids
#: where that stops being a desk-scale operation.
GP_SAMPLE_MAX_CELLS = 2500

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


class EsriAsciiError(ValueError):
    """Malformed ESRI ASCII grid; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass
class TerrainGrid:
    """Row-major height map; row 0 is the northernmost row.

    ``nodata_mask`` flags cells without a height; they get no MDP state.
    """

    rows: int
    cols: int
    cell_size: float
    heights: np.ndarray
    nodata_mask: np.ndarray
    xllcorner: float = 0.0
    yllcorner: float = 0.0
    nodata_value: float = -9999.0

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=float).reshape(self.rows * self.cols)
        self.nodata_mask = np.asarray(self.nodata_mask, dtype=bool).reshape(self.rows * self.cols)
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")

    def height_at(self, row: int, col: int) -> float:
        return float(self.heights[row * self.cols + col])


def load_esri_ascii(source) -> TerrainGrid:
    """Parse an ESRI ASCII grid from a string, bytes or text stream.

    The header keys are matched case-insensitively and ``NODATA_value`` may
    be omitted (defaulting to -9999).  Parse problems raise
    :class:`EsriAsciiError` with the line number.
    """
    if isinstance(source, bytes):
        source = source.decode()
    if isinstance(source, str):
        source = io.StringIO(source)
    header: dict[str, float] = {}
    data: list[float] = []
    data_line_of: list[int] = []
    for lineno, raw in enumerate(source, start=1):
        tokens = raw.split()
        if not tokens:
            continue
        key = tokens[0].lower()
        if not data and key in _HEADER_KEYS:
            if len(tokens) != 2:
                raise EsriAsciiError(f"header key {tokens[0]!r} needs exactly one value", lineno)
            if key in header:
                raise EsriAsciiError(f"duplicate header key {tokens[0]!r}", lineno)
            try:
                header[key] = float(tokens[1])
            except ValueError:
                raise EsriAsciiError(f"header value {tokens[1]!r} is not a number", lineno) from None
            continue
        for tok in tokens:
            try:
                data.append(float(tok))
            except ValueError:
                raise EsriAsciiError(f"grid value {tok!r} is not a number", lineno) from None
            data_line_of.append(lineno)

    for key in ("ncols", "nrows", "cellsize"):
        if key not in header:
            raise EsriAsciiError(f"missing header key {key!r}")
    cols = int(header["ncols"])
    rows = int(header["nrows"])
    if cols < 1 or rows < 1 or cols != header["ncols"] or rows != header["nrows"]:
        raise EsriAsciiError("ncols and nrows must be positive integers")
    if len(data) != rows * cols:
        line = data_line_of[-1] if data_line_of else None
        raise EsriAsciiError(
            f"expected {rows * cols} grid values ({rows} rows x {cols} cols), got {len(data)}",
            line,
        )
    nodata = header.get("nodata_value", -9999.0)
    heights = np.asarray(data)
    mask = heights == nodata
    return TerrainGrid(rows, cols, float(header["cellsize"]), heights, mask,
                       xllcorner=header.get("xllcorner", 0.0),
                       yllcorner=header.get("yllcorner", 0.0),
                       nodata_value=nodata)


def dump_esri_ascii(grid: TerrainGrid) -> str:
    """Serialize ``grid`` so that :func:`load_esri_ascii` round-trips it."""
    heights = grid.heights.copy()
    heights[grid.nodata_mask] = grid.nodata_value
    lines = [
        f"ncols {grid.cols}",
        f"nrows {grid.rows}",
        f"xllcorner {grid.xllcorner:.6f}",
        f"yllcorner {grid.yllcorner:.6f}",
        f"cellsize {grid.cell_size!r}",
        f"NODATA_value {grid.nodata_value!r}",
    ]
    for r in range(grid.rows):
        row = heights[r * grid.cols:(r + 1) * grid.cols]
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class GpSample:
    """Synthesize terrain as one exact draw from ``kernel``'s prior."""

    kernel: Kernel
    seed: int = 0


@dataclass(frozen=True)
class CraterHillParams:
    """Parametric surface: tilted plane + Gaussian hill - Gaussian crater.

    Centers and radii are in cell units, heights and depths in meters.
    ``roughness`` adds seeded i.i.d. Gaussian noise to every cell, which
    gives fixture variety across seeds without changing the large shapes.
    """

    base_height: float = 0.0
    tilt_row: float = 0.0
    tilt_col: float = 0.0
    hill_row: float = 0.0
    hill_col: float = 0.0
    hill_height: float = 0.0
    hill_radius: float = 1.0
    crater_row: float = 0.0
    crater_col: float = 0.0
    crater_depth: float = 0.0
    crater_radius: float = 1.0
    roughness: float = 0.0


@dataclass(frozen=True)
class CraterHill:
    params: CraterHillParams = field(default_factory=CraterHillParams)
    seed: int = 0


SynthKind = Union[GpSample, CraterHill]


def synth_terrain(kind: SynthKind, rows: int, cols: int, cell_size: float) -> TerrainGrid:
    """Deterministically synthesize a ``rows`` x ``cols`` height map."""
    if rows < 1 or cols < 1:
        raise ValueError("terrain must have at least one row and one column")
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    rr, cc = np.divmod(np.arange(rows * cols), cols)
    if isinstance(kind, GpSample):
        if rows * cols > GP_SAMPLE_MAX_CELLS:
            raise ValueError(
                f"GpSample terrain is limited to {GP_SAMPLE_MAX_CELLS} cells, got {rows * cols}"
            )
        coords = np.stack([rr, cc], axis=1) * cell_size
        diff = coords[:, None, :] - coords[None, :, :]
        cov = kernel_eval(kind.kernel, np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)))
        chol = np.linalg.cholesky(cov + 1e-10 * np.eye(rows * cols))
        rng = np.random.default_rng(kind.seed)
        heights = chol @ rng.standard_normal(rows * cols)
    elif isinstance(kind, CraterHill):
        p = kind.params
        heights = (p.base_height
                   + p.tilt_row * rr * cell_size
                   + p.tilt_col * cc * cell_size)
        if p.hill_height:
            d2 = (rr - p.hill_row) ** 2 + (cc - p.hill_col) ** 2
            heights = heights + p.hill_height * np.exp(-0.5 * d2 / p.hill_radius**2)
        if p.crater_depth:
            d2 = (rr - p.crater_row) ** 2 + (cc - p.crater_col) ** 2
            heights = heights - p.crater_depth * np.exp(-0.5 * d2 / p.crater_radius**2)
        if p.roughness:
            rng = np.random.default_rng(kind.seed)
            heights = heights + p.roughness * rng.standard_normal(rows * cols)
    else:
        raise TypeError(f"unknown terrain kind {type(kind).__name__}")
    return TerrainGrid(rows, cols, cell_size, heights, np.zeros(rows * cols, dtype=bool))


@dataclass(frozen=True)
class TerrainSafetySpec:
    """Slope limits of the rover.

    The rover physically fails above ``max_slope_deg``; classification uses
    the stricter ``conservative_slope_deg``, giving the safety threshold
    ``-cell_size * tan(conservative_slope_deg)`` on height differences.
    """

    max_slope_deg: float = 30.0
    conservative_slope_deg: float = 25.0

    def __post_init__(self):
        if not 0 < self.conservative_slope_deg <= self.max_slope_deg < 90:
            raise ValueError("need 0 < conservative_slope_deg <= max_slope_deg < 90")

    def safety_threshold(self, cell_size: float) -> float:
        return -cell_size * math.tan(math.radians(self.conservative_slope_deg))


class TerrainEnvironment(Environment):
    """Environment over an augmented terrain MDP that can also serve noisy
    height measurements (used by the measured-heights observation model)."""

    def __init__(self, true_safety, threshold, noise_std, rng_seed, base_heights):
        super().__init__(true_safety, threshold, noise_std, rng_seed)
        self.base_heights = np.asarray(base_heights, dtype=float)

    def observe_height(self, base_state: int) -> float:
        return float(self.base_heights[base_state] + self.noise_std * self._rng.standard_normal())


def build_terrain_environment(grid: TerrainGrid, spec: TerrainSafetySpec, noise_std: float,
                              rng_seed: int) -> tuple[AugmentedMdp, TerrainEnvironment]:
    """Augmented MDP plus simulated environment for a terrain grid.

    Cells flagged as missing data are dropped from the state space.  The
    safety feature of every augmented state is the height drop of its
    transition — zero for original cells and stay actions, which therefore
    never violate nor constrain the safe set.
    """
    valid = ~grid.nodata_mask
    base = grid_mdp(grid.rows, grid.cols, grid.cell_size, valid=valid)
    aug = augment(base, half_step=grid.cell_size / 2.0)
    base_heights = grid.heights[valid]
    pairs = aug.pairs()
    true_safety = base_heights[pairs[:, 0]] - base_heights[pairs[:, 1]]
    threshold = spec.safety_threshold(grid.cell_size)
    env = TerrainEnvironment(true_safety, threshold, noise_std, rng_seed, base_heights)
    return aug, env


def height_covariance(aug: AugmentedMdp, kernel: Kernel, cell_size: float) -> StationaryCovariance:
    """Kernel covariance between base cells, at metric (not cell) scale."""
    return StationaryCovariance(kernel, aug.base.coords * cell_size)


class DifferenceCovariance:
    """Covariance that a GP over cell heights induces on height differences.

    Points are augmented state ids; each maps to its ``(owner, landing)``
    cell pair and covariances expand to the four-term combination
    ``k(s,u) - k(s,u') - k(s',u) + k(s',u')``.  Original states map to the
    degenerate pair ``(s, s)`` and so have zero variance — their "height
    difference" is identically zero.
    """

    def __init__(self, height_cov: StationaryCovariance, pairs):
        self.height_cov = height_cov
        self.pairs = np.asarray(pairs, dtype=int)

    def matrix(self, a, b) -> np.ndarray:
        pa = self.pairs[np.asarray(a, dtype=int)]
        pb = self.pairs[np.asarray(b, dtype=int)]
        hc = self.height_cov.matrix
        return (hc(pa[:, 0], pb[:, 0]) - hc(pa[:, 0], pb[:, 1])
                - hc(pa[:, 1], pb[:, 0]) + hc(pa[:, 1], pb[:, 1]))

    def pairwise(self, a, b) -> np.ndarray:
        pa = self.pairs[np.asarray(a, dtype=int)]
        pb = self.pairs[np.asarray(b, dtype=int)]
        hc = self.height_cov.pairwise
        return (hc(pa[:, 0], pb[:, 0]) - hc(pa[:, 0], pb[:, 1])
                - hc(pa[:, 1], pb[:, 0]) + hc(pa[:, 1], pb[:, 1]))

    def diag(self, a) -> np.ndarray:
        return self.pairwise(a, a)


def difference_gp(aug: AugmentedMdp, kernel: Kernel, noise_std: float,
                  cell_size: float) -> GpModel:
    """Empty GP over augmented states with the induced difference kernel."""
    cov = DifferenceCovariance(height_covariance(aug, kernel, cell_size), aug.pairs())
    return GpModel(cov, noise_std)


def height_gp(aug: AugmentedMdp, kernel: Kernel, noise_std: float,
              cell_size: float) -> GpModel:
    """Empty GP over base cells, for the measured-heights observation model."""
    return GpModel(height_covariance(aug, kernel, cell_size), noise_std)


def height_gp_to_difference_bands(height_model: GpModel, aug: AugmentedMdp, beta_t: float,
                                  prev: ConfidenceBands) -> ConfidenceBands:
    """Difference bands derived from a GP over cell heights.

    For the action-state of ``s -> s'`` the interval is centered on
    ``mean(s) - mean(s')`` with variance
    ``var(s) + var(s') - 2 cov(s, s')`` (clamped at zero), scaled by
    ``sqrt(beta_t)`` and intersected into ``prev``.
    """
    cells = np.arange(aug.num_base_states)
    means, variances = height_model.posterior(cells)
    pairs = aug.pairs()
    cross = height_model.posterior_cov_pairs(pairs[:, 0], pairs[:, 1])
    diff_mean = means[pairs[:, 0]] - means[pairs[:, 1]]
    diff_var = variances[pairs[:, 0]] + variances[pairs[:, 1]] - 2.0 * cross
    if diff_var.min(initial=0.0) < -1e-8:
        raise ValueError(f"difference variance {diff_var.min():g} fell below the numerical floor")
    diff_var = np.maximum(diff_var, 0.0)
    return update_bands(prev, diff_mean, diff_var, beta_t)


class HeightGpBandModel(GpBandModel):
    """Band model that measures cell heights instead of differences.

    Visiting an action-state yields two noisy height measurements (of the
    transition's two cells); bands over augmented states are derived from
    the height posterior via :func:`height_gp_to_difference_bands`.
    """

    def __init__(self, height_model: GpModel, aug: AugmentedMdp, schedule, seed_set,
                 threshold: float):
        super().__init__(height_model, schedule, aug.num_states, seed_set, threshold)
        self.aug = aug

    def advance(self, t: int) -> ConfidenceBands:
        self.bands = height_gp_to_difference_bands(self.gp, self.aug,
                                                   beta_value(self.schedule, t), self.bands)
        return self.bands

    def measure(self, env: TerrainEnvironment, state: int) -> float:
        owner = int(self.aug.owner[state])
        landing = int(self.aug.landing[state])
        y_owner = env.observe_height(owner)
        self.gp = self.gp.add_observation(owner, y_owner)
        if landing == owner:
            return 0.0
        y_landing = env.observe_height(landing)
        self.gp = self.gp.add_observation(landing, y_landing)
        return y_owner - y_landing


def difference_band_model(aug: AugmentedMdp, kernel: Kernel, noise_std: float,
                          cell_size: float, schedule, seed_set,
                          threshold: float) -> GpBandModel:
    """Default observation model: a GP directly over height differences."""
    return GpBandModel(difference_gp(aug, kernel, noise_std, cell_size), schedule,
                       aug.num_states, seed_set, threshold)
