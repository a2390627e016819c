"""Command-line interface: run experiments, compute oracles, make terrain.

``safemdp explore CONFIG`` runs one exploration strategy on a terrain
environment for one or more seeds and writes, per seed, ``trace.csv``,
``snapshots.csv``, ``metrics.txt`` and ``manifest.txt``.  ``safemdp oracle
CONFIG`` writes the exact safely-explorable sets for the same environment,
and ``safemdp synth`` writes a synthetic terrain grid as an ESRI ASCII file.

Configs are flat INI files; every section and key is schema-checked and
unknown ones are rejected.  Exit codes: 0 on success (a safety violation is
a reported result, not a failure), 1 on runtime errors, 2 on config errors.
Relative output directories resolve against ``$SAFEMDP_OUT`` when that
variable is set.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .explorer import (
    BASELINES,
    ConfigError,
    ExplorationTrace,
    ExplorerConfig,
    GpBandModel,
    STRATEGY_SAFEMDP,
    run_baseline,
    run_safemdp,
)
from .gp import ConstantBeta, Kernel, MATERN52, SQUARED_EXPONENTIAL
from .mdp import GRID_STAY
from .reach import r_eps_fixpoint
from .safeset import GpDirectMode, LipschitzMode
from .terrain import (
    CraterHill,
    CraterHillParams,
    GpSample,
    HeightGpBandModel,
    TerrainGrid,
    TerrainSafetySpec,
    build_terrain_environment,
    difference_band_model,
    dump_esri_ascii,
    height_gp,
    load_esri_ascii,
    synth_terrain,
)

OUTPUT_ROOT_ENV = "SAFEMDP_OUT"

TRACE_HEADER = "t,target,width,path_length,observation,safe_size,ergodic_size,expander_size"
SNAPSHOT_HEADER = "t,safe,ergodic,expanders"
ORACLE_HEADER = "state,in_r_eps,in_r_zero"

_STRATEGIES = {
    "safemdp": STRATEGY_SAFEMDP,
    "no-expanders": "no_expanders",
    "non-ergodic": "non_ergodic",
    "unsafe": "unsafe",
    "random": "random",
}
_KERNELS = {"matern52": MATERN52, "squared-exponential": SQUARED_EXPONENTIAL}

_CRATER_KEYS = ("base_height", "tilt_row", "tilt_col", "hill_row", "hill_col",
                "hill_height", "hill_radius", "crater_row", "crater_col",
                "crater_depth", "crater_radius", "roughness")


@dataclass
class Metrics:
    """Per-run summary written to ``metrics.txt``."""

    coverage_fraction: float
    violation_step: int | None
    iterations: int
    agent_steps: int
    terminal_reason: str
    band_collapses: int
    oracle_eps_size: int
    oracle_zero_size: int


@dataclass
class ExperimentConfig:
    """Fully resolved experiment description."""

    source: str
    dem_path: str | None
    synth_kind: str | None
    rows: int | None
    cols: int | None
    cell_size: float | None
    terrain_seed: int
    crater: CraterHillParams
    safety: TerrainSafetySpec
    kernel: Kernel
    noise_std: float
    strategy: str
    observation_model: str
    beta: float
    mode: str
    lipschitz: float
    epsilon: float
    max_iterations: int
    max_steps: int | None
    measure_along_path: bool
    seed_row: int
    seed_col: int
    seeds: tuple[int, ...]
    out_dir: str


def _parse_int(field, raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{field}: expected an integer, got {raw!r}") from None


def _parse_float(field, raw):
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{field}: expected a number, got {raw!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{field}: must be finite, got {raw!r}")
    return value


def _parse_bool(field, raw):
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{field}: expected a boolean, got {raw!r}")


def _parse_choice(field, raw, choices):
    if raw not in choices:
        raise ConfigError(f"{field}: expected one of {sorted(choices)}, got {raw!r}")
    return raw


def _section(parser: configparser.ConfigParser, name: str) -> dict:
    return dict(parser[name]) if parser.has_section(name) else {}


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Read and validate an experiment config file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path) as handle:
            parser.read_file(handle)
    except configparser.Error as exc:
        raise ConfigError(f"config file {path} is not valid INI: {exc}") from None

    known_sections = {"terrain", "safety", "gp", "explorer", "output"}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigError(f"unknown config section [{section}]")

    used: dict[str, set] = {name: set() for name in known_sections}
    raw = {name: _section(parser, name) for name in known_sections}

    def take(section, key, parse, default=None, required=False):
        used[section].add(key)
        if key not in raw[section]:
            if required:
                raise ConfigError(f"missing required config field {section}.{key}")
            return default
        return parse(f"{section}.{key}", raw[section][key])

    source = take("terrain", "source", lambda f, v: _parse_choice(f, v, {"synth", "dem"}),
                  required=True)
    dem_path = None
    synth_kind = rows = cols = cell_size = None
    terrain_seed = take("terrain", "terrain_seed", _parse_int, default=0)
    crater_kwargs = {}
    if source == "dem":
        dem_path = take("terrain", "dem_path", lambda f, v: v, required=True)
    else:
        synth_kind = take("terrain", "kind",
                          lambda f, v: _parse_choice(f, v, {"crater-hill", "gp-sample"}),
                          required=True)
        rows = take("terrain", "rows", _parse_int, required=True)
        cols = take("terrain", "cols", _parse_int, required=True)
        cell_size = take("terrain", "cell_size", _parse_float, required=True)
        if synth_kind == "crater-hill":
            for key in _CRATER_KEYS:
                value = take("terrain", key, _parse_float)
                if value is not None:
                    crater_kwargs[key] = value
    for key in raw["terrain"]:
        if key not in used["terrain"]:
            raise ConfigError(f"unknown config field terrain.{key}")

    safety = TerrainSafetySpec(
        max_slope_deg=take("safety", "max_slope_deg", _parse_float, default=30.0),
        conservative_slope_deg=take("safety", "conservative_slope_deg", _parse_float,
                                    default=25.0),
    )
    for key in raw["safety"]:
        if key not in used["safety"]:
            raise ConfigError(f"unknown config field safety.{key}")

    kernel_kind = take("gp", "kernel", lambda f, v: _parse_choice(f, v, set(_KERNELS)),
                       default="matern52")
    kernel = Kernel(_KERNELS[kernel_kind],
                    lengthscale=take("gp", "lengthscale", _parse_float, default=14.5),
                    prior_std=take("gp", "prior_std", _parse_float, default=10.0))
    noise_std = take("gp", "noise_std", _parse_float, default=0.075)
    if noise_std < 0:
        raise ConfigError("gp.noise_std: must be non-negative")
    for key in raw["gp"]:
        if key not in used["gp"]:
            raise ConfigError(f"unknown config field gp.{key}")

    strategy = take("explorer", "strategy",
                    lambda f, v: _parse_choice(f, v, set(_STRATEGIES)), default="safemdp")
    observation_model = take("explorer", "observation_model",
                             lambda f, v: _parse_choice(f, v, {"difference", "heights"}),
                             default="difference")
    beta = take("explorer", "beta", _parse_float, default=2.0)
    if beta <= 0:
        raise ConfigError("explorer.beta: must be positive")
    mode = take("explorer", "mode",
                lambda f, v: _parse_choice(f, v, {"gp-direct", "lipschitz"}),
                default="gp-direct")
    lipschitz = take("explorer", "lipschitz", _parse_float, default=1.0)
    epsilon = take("explorer", "epsilon", _parse_float, default=0.15)
    max_iterations = take("explorer", "max_iterations", _parse_int, default=525)
    max_steps = take("explorer", "max_steps", _parse_int)
    measure_along_path = take("explorer", "measure_along_path", _parse_bool, default=False)
    seed_row = take("explorer", "seed_row", _parse_int, required=True)
    seed_col = take("explorer", "seed_col", _parse_int, required=True)

    def parse_seeds(field, value):
        try:
            seeds = tuple(int(tok) for tok in value.replace(",", " ").split())
        except ValueError:
            raise ConfigError(f"{field}: expected whitespace-separated integers") from None
        if not seeds:
            raise ConfigError(f"{field}: needs at least one seed")
        return seeds

    seeds = take("explorer", "seeds", parse_seeds, default=(0,))
    for key in raw["explorer"]:
        if key not in used["explorer"]:
            raise ConfigError(f"unknown config field explorer.{key}")

    out_dir = take("output", "directory", lambda f, v: v, required=True)
    for key in raw["output"]:
        if key not in used["output"]:
            raise ConfigError(f"unknown config field output.{key}")

    return ExperimentConfig(
        source=source, dem_path=dem_path, synth_kind=synth_kind, rows=rows, cols=cols,
        cell_size=cell_size, terrain_seed=terrain_seed,
        crater=CraterHillParams(**crater_kwargs), safety=safety, kernel=kernel,
        noise_std=noise_std, strategy=strategy, observation_model=observation_model,
        beta=beta, mode=mode, lipschitz=lipschitz, epsilon=epsilon,
        max_iterations=max_iterations, max_steps=max_steps,
        measure_along_path=measure_along_path, seed_row=seed_row, seed_col=seed_col,
        seeds=seeds, out_dir=out_dir,
    )


def build_grid(cfg: ExperimentConfig) -> TerrainGrid:
    if cfg.source == "dem":
        try:
            with open(cfg.dem_path) as handle:
                return load_esri_ascii(handle)
        except FileNotFoundError:
            raise ConfigError(f"terrain.dem_path: file {cfg.dem_path!r} does not exist") from None
    if cfg.synth_kind == "gp-sample":
        kind = GpSample(cfg.kernel, cfg.terrain_seed)
    else:
        kind = CraterHill(cfg.crater, cfg.terrain_seed)
    return synth_terrain(kind, cfg.rows, cfg.cols, cfg.cell_size)


def _seed_mask(aug, grid, cfg):
    valid = ~grid.nodata_mask
    cell = cfg.seed_row * grid.cols + cfg.seed_col
    if not (0 <= cfg.seed_row < grid.rows and 0 <= cfg.seed_col < grid.cols):
        raise ConfigError(
            f"explorer.seed_row/seed_col: cell ({cfg.seed_row}, {cfg.seed_col}) "
            f"is outside the {grid.rows}x{grid.cols} grid")
    if not valid[cell]:
        raise ConfigError(
            f"explorer.seed_row/seed_col: cell ({cfg.seed_row}, {cfg.seed_col}) has no data")
    base_state = int(np.searchsorted(np.flatnonzero(valid), cell))
    # Seed the smallest mutually-returnable pocket around the start cell
    # that contains measurable transitions: the cell itself, its outgoing
    # moves, the landing neighbours, and their moves straight back.  A bare
    # cell would leave the difference model with nothing of nonzero width
    # to target, so exploration could never leave the gate.
    seed = np.zeros(aug.num_states, dtype=bool)
    seed[base_state] = True
    seed[aug.action_state_of[(base_state, GRID_STAY)]] = True
    for label, neighbour in aug.base.actions_of(base_state):
        seed[aug.action_state_of[(base_state, label)]] = True
        if neighbour == base_state:
            continue
        seed[neighbour] = True
        for back_label, back_succ in aug.base.actions_of(neighbour):
            if back_succ == base_state:
                seed[aug.action_state_of[(neighbour, back_label)]] = True
    return seed


def _band_model(cfg, aug, seed, threshold):
    schedule = ConstantBeta(cfg.beta)
    if cfg.observation_model == "heights":
        return HeightGpBandModel(
            height_gp(aug, cfg.kernel, cfg.noise_std, aug.base.metric.cell_size),
            aug, schedule, seed, threshold)
    return difference_band_model(aug, cfg.kernel, cfg.noise_std,
                                 aug.base.metric.cell_size, schedule, seed, threshold)


def _explorer_config(cfg: ExperimentConfig, seed_mask) -> ExplorerConfig:
    mode = GpDirectMode() if cfg.mode == "gp-direct" else LipschitzMode(cfg.lipschitz)
    return ExplorerConfig(
        beta=ConstantBeta(cfg.beta), mode=mode, lipschitz_for_expanders=cfg.lipschitz,
        epsilon=cfg.epsilon, max_iterations=cfg.max_iterations, seed_set=seed_mask,
        measure_along_path=cfg.measure_along_path, max_steps=cfg.max_steps)


def resolve_output_dir(out_dir: str) -> Path:
    path = Path(out_dir)
    if not path.is_absolute():
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root:
            path = Path(root) / path
    return path


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def write_trace_csv(trace: ExplorationTrace, path: Path) -> None:
    lines = [TRACE_HEADER]
    for rec in trace.records:
        lines.append(",".join([
            str(rec.t), str(rec.target), _fmt(rec.width_at_target),
            str(len(rec.path)), _fmt(rec.observation),
            str(int(rec.sets.safe.sum())), str(int(rec.sets.ergodic.sum())),
            str(int(rec.sets.expanders.sum())),
        ]))
    path.write_text("\n".join(lines) + "\n")


def _bits(mask) -> str:
    return "".join("1" if b else "0" for b in mask)


def write_snapshots_csv(trace: ExplorationTrace, path: Path) -> None:
    lines = [SNAPSHOT_HEADER]
    for rec in trace.records:
        lines.append(",".join([str(rec.t), _bits(rec.sets.safe), _bits(rec.sets.ergodic),
                               _bits(rec.sets.expanders)]))
    path.write_text("\n".join(lines) + "\n")


def compute_metrics(trace: ExplorationTrace, oracle_eps, oracle_zero) -> Metrics:
    eps_size = int(oracle_eps.sum())
    covered = int((trace.final_sets.ergodic & oracle_eps).sum())
    return Metrics(
        coverage_fraction=covered / eps_size if eps_size else 0.0,
        violation_step=trace.violation_step,
        iterations=trace.iterations,
        agent_steps=trace.agent_steps,
        terminal_reason=trace.terminal_reason,
        band_collapses=trace.band_collapses,
        oracle_eps_size=eps_size,
        oracle_zero_size=int(oracle_zero.sum()),
    )


def write_metrics(metrics: Metrics, path: Path) -> None:
    lines = []
    for f in fields(Metrics):
        value = getattr(metrics, f.name)
        lines.append(f"{f.name}: {'' if value is None else _fmt(value)}")
    path.write_text("\n".join(lines) + "\n")


def write_manifest(cfg: ExperimentConfig, seed: int, path: Path) -> None:
    out = configparser.ConfigParser()
    out["terrain"] = {"source": cfg.source, "terrain_seed": str(cfg.terrain_seed)}
    if cfg.source == "dem":
        out["terrain"]["dem_path"] = str(cfg.dem_path)
    else:
        out["terrain"].update({"kind": cfg.synth_kind, "rows": str(cfg.rows),
                               "cols": str(cfg.cols), "cell_size": _fmt(cfg.cell_size)})
        if cfg.synth_kind == "crater-hill":
            for key in _CRATER_KEYS:
                out["terrain"][key] = _fmt(getattr(cfg.crater, key))
    out["safety"] = {"max_slope_deg": _fmt(cfg.safety.max_slope_deg),
                     "conservative_slope_deg": _fmt(cfg.safety.conservative_slope_deg)}
    kernel_name = {v: k for k, v in _KERNELS.items()}[cfg.kernel.kind]
    out["gp"] = {"kernel": kernel_name, "lengthscale": _fmt(cfg.kernel.lengthscale),
                 "prior_std": _fmt(cfg.kernel.prior_std), "noise_std": _fmt(cfg.noise_std)}
    out["explorer"] = {
        "strategy": cfg.strategy, "observation_model": cfg.observation_model,
        "beta": _fmt(cfg.beta), "mode": cfg.mode, "lipschitz": _fmt(cfg.lipschitz),
        "epsilon": _fmt(cfg.epsilon), "max_iterations": str(cfg.max_iterations),
        "measure_along_path": str(cfg.measure_along_path).lower(),
        "seed_row": str(cfg.seed_row), "seed_col": str(cfg.seed_col),
        "seed": str(seed),
    }
    if cfg.max_steps is not None:
        out["explorer"]["max_steps"] = str(cfg.max_steps)
    out["output"] = {"directory": cfg.out_dir}
    with open(path, "w") as handle:
        out.write(handle)


def cmd_explore(config_path: str) -> int:
    """Run the configured strategy for every seed and write its artifacts."""
    cfg = load_experiment_config(config_path)
    grid = build_grid(cfg)
    aug, probe_env = build_terrain_environment(grid, cfg.safety, cfg.noise_std, 0)
    seed_mask = _seed_mask(aug, grid, cfg)
    threshold = cfg.safety.safety_threshold(grid.cell_size)
    oracle_eps = r_eps_fixpoint(aug, seed_mask, probe_env.true_safety, cfg.epsilon,
                                cfg.lipschitz, threshold)
    oracle_zero = r_eps_fixpoint(aug, seed_mask, probe_env.true_safety, 0.0,
                                 cfg.lipschitz, threshold)
    out_root = resolve_output_dir(cfg.out_dir)
    for seed in cfg.seeds:
        _, env = build_terrain_environment(grid, cfg.safety, cfg.noise_std, seed)
        band_model = _band_model(cfg, aug, seed_mask, threshold)
        run_cfg = _explorer_config(cfg, seed_mask)
        strategy = _STRATEGIES[cfg.strategy]
        if strategy == STRATEGY_SAFEMDP:
            trace = run_safemdp(aug, env, run_cfg, band_model)
        else:
            trace = run_baseline(strategy, aug, env, run_cfg, band_model)
        run_dir = out_root / f"seed_{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        write_trace_csv(trace, run_dir / "trace.csv")
        write_snapshots_csv(trace, run_dir / "snapshots.csv")
        write_metrics(compute_metrics(trace, oracle_eps, oracle_zero),
                      run_dir / "metrics.txt")
        write_manifest(cfg, seed, run_dir / "manifest.txt")
        print(f"wrote {run_dir}")
    return 0


def cmd_oracle(config_path: str) -> int:
    """Write exact safely-explorable sets for the configured environment."""
    cfg = load_experiment_config(config_path)
    grid = build_grid(cfg)
    aug, env = build_terrain_environment(grid, cfg.safety, cfg.noise_std, 0)
    seed_mask = _seed_mask(aug, grid, cfg)
    threshold = cfg.safety.safety_threshold(grid.cell_size)
    oracle_eps = r_eps_fixpoint(aug, seed_mask, env.true_safety, cfg.epsilon,
                                cfg.lipschitz, threshold)
    oracle_zero = r_eps_fixpoint(aug, seed_mask, env.true_safety, 0.0,
                                 cfg.lipschitz, threshold)
    out_root = resolve_output_dir(cfg.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    lines = [ORACLE_HEADER]
    for s in range(aug.num_states):
        lines.append(f"{s},{int(oracle_eps[s])},{int(oracle_zero[s])}")
    path = out_root / "oracle.csv"
    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {path}")
    return 0


def cmd_synth(args) -> int:
    """Synthesize terrain from command-line flags and write an .asc file."""
    if args.kind == "gp-sample":
        kernel = Kernel(_KERNELS[args.kernel], args.lengthscale, args.prior_std)
        kind = GpSample(kernel, args.seed)
    else:
        kind = CraterHill(CraterHillParams(
            base_height=args.base_height, tilt_row=args.tilt_row, tilt_col=args.tilt_col,
            hill_row=args.hill_row, hill_col=args.hill_col, hill_height=args.hill_height,
            hill_radius=args.hill_radius, crater_row=args.crater_row,
            crater_col=args.crater_col, crater_depth=args.crater_depth,
            crater_radius=args.crater_radius, roughness=args.roughness), args.seed)
    grid = synth_terrain(kind, args.rows, args.cols, args.cell_size)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dump_esri_ascii(grid))
    print(f"wrote {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safemdp",
                                     description="Safe exploration of terrain MDPs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_explore = sub.add_parser("explore", help="run an exploration experiment")
    p_explore.add_argument("config", help="path to an INI experiment config")

    p_oracle = sub.add_parser("oracle", help="compute exact safely-explorable sets")
    p_oracle.add_argument("config", help="path to an INI experiment config")

    p_synth = sub.add_parser("synth", help="write synthetic terrain as ESRI ASCII")
    p_synth.add_argument("--kind", choices=("crater-hill", "gp-sample"),
                         default="crater-hill")
    p_synth.add_argument("--rows", type=int, required=True)
    p_synth.add_argument("--cols", type=int, required=True)
    p_synth.add_argument("--cell-size", type=float, default=1.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True, help="output .asc path")
    p_synth.add_argument("--kernel", choices=sorted(_KERNELS), default="matern52")
    p_synth.add_argument("--lengthscale", type=float, default=14.5)
    p_synth.add_argument("--prior-std", type=float, default=10.0)
    for key in _CRATER_KEYS:
        default = getattr(CraterHillParams(), key)
        p_synth.add_argument(f"--{key.replace('_', '-')}", type=float, default=default,
                             dest=key)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "explore":
            return cmd_explore(args.config)
        if args.command == "oracle":
            return cmd_oracle(args.config)
        return cmd_synth(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
