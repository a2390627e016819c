"""Safe-exploration loop and baseline strategies.

The explorer repeatedly tightens GP confidence bands, classifies the safe /
ergodic / expander sets, walks to the most uncertain expander along a path
inside the ergodic set, and measures the safety feature there.  It stops
when the expanders run out, when their uncertainty falls below ``epsilon``,
or when iteration limits are hit.  A simulated :class:`Environment` supplies
noisy measurements and checks — independently of what the agent believes —
that no truly unsafe state is ever visited.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gp import BetaSchedule, ConfidenceBands, GpModel, beta, initial_bands, update_bands
from .mdp import Mdp
from .planner import NoPathError, PathPlan, shortest_safe_path
from .reach import r_reach, r_ret_fixpoint
from .safeset import (
    ClassifierMode,
    SafeSets,
    acquisition_target,
    classify_safe,
    compute_safe_sets,
    expanders,
)

STRATEGY_SAFEMDP = "safemdp"
STRATEGY_NO_EXPANDERS = "no_expanders"
STRATEGY_NON_ERGODIC = "non_ergodic"
STRATEGY_UNSAFE = "unsafe"
STRATEGY_RANDOM = "random"
BASELINES = (STRATEGY_NO_EXPANDERS, STRATEGY_NON_ERGODIC, STRATEGY_UNSAFE, STRATEGY_RANDOM)

REASON_CONVERGED = "converged"
REASON_EXPANDERS_EMPTY = "expanders_empty"
REASON_MAX_ITERATIONS = "max_iterations"
REASON_VIOLATION = "violation"
REASON_STUCK = "stuck"

#: Seed-stream offset separating the random baseline's action draws from the
#: environment's observation noise.
_ACTION_STREAM = 7919


class ConfigError(ValueError):
    """Invalid exploration configuration."""


class Environment:
    """Simulated safety feature with seeded Gaussian observation noise.

    Parameters
    ----------
    true_safety : array_like
        The hidden feature value of every state.
    threshold : float
        Safety threshold; a visit to a state with ``true_safety < threshold``
        is a violation.
    noise_std : float
        Standard deviation of the observation noise.
    rng_seed : int
        Seed of the observation stream; equal seeds give identical runs.
    """

    def __init__(self, true_safety, threshold: float, noise_std: float, rng_seed: int):
        self.true_safety = np.asarray(true_safety, dtype=float)
        self.threshold = float(threshold)
        if noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        self.noise_std = float(noise_std)
        self.rng_seed = int(rng_seed)
        self._rng = np.random.default_rng(self.rng_seed)

    @property
    def num_states(self) -> int:
        return len(self.true_safety)

    def observe(self, state: int) -> float:
        """Noisy measurement of the safety feature at ``state``."""
        return float(self.true_safety[state] + self.noise_std * self._rng.standard_normal())

    def is_safe(self, state: int) -> bool:
        return bool(self.true_safety[state] >= self.threshold)


@dataclass
class ExplorerConfig:
    """Parameters of one exploration run.

    ``seed_set`` is the boolean mask of states known safe a priori; the
    agent starts on its lowest id.  ``epsilon`` is the accuracy at which an
    expander counts as resolved, and ``lipschitz_for_expanders`` is the
    Lipschitz constant used by the expander test (and by the classifier in
    Lipschitz mode).
    """

    beta: BetaSchedule
    mode: ClassifierMode
    lipschitz_for_expanders: float
    epsilon: float
    max_iterations: int
    seed_set: np.ndarray
    measure_along_path: bool = False
    max_steps: int | None = None


class GpBandModel:
    """Keeps a GP over the working states and the intersected bands.

    The model owns the running :class:`~safemdp.gp.ConfidenceBands`; each
    ``advance`` recomputes the posterior over all states and intersects the
    new intervals into the bands.
    """

    def __init__(self, gp: GpModel, schedule: BetaSchedule, num_states: int,
                 seed_set, threshold: float):
        self.gp = gp
        self.schedule = schedule
        self.num_states = int(num_states)
        self.bands = initial_bands(self.num_states, seed_set, threshold)
        self._all_states = np.arange(self.num_states)

    def advance(self, t: int) -> ConfidenceBands:
        means, variances = self.gp.posterior(self._all_states)
        self.bands = update_bands(self.bands, means, variances, beta(self.schedule, t))
        return self.bands

    def measure(self, env: Environment, state: int) -> float:
        """Take one measurement at ``state`` and fold it into the GP."""
        value = env.observe(state)
        self.gp = self.gp.add_observation(state, value)
        return value


@dataclass
class IterationRecord:
    """What happened in one iteration: which state was targeted at which
    band width, the path walked, the measurement taken, and the safe-set
    snapshot used for the decision."""

    t: int
    target: int
    width_at_target: float
    path: PathPlan
    observation: float
    sets: SafeSets
    bands_digest: str


@dataclass
class ExplorationTrace:
    """Complete record of a run."""

    strategy: str
    records: list[IterationRecord]
    terminal_reason: str
    violation_step: int | None
    agent_steps: int
    start_state: int
    final_sets: SafeSets
    band_collapses: int = 0

    @property
    def iterations(self) -> int:
        return len(self.records)


def validate_config(mdp: Mdp, cfg: ExplorerConfig) -> None:
    """Raise :class:`ConfigError` unless ``cfg`` is usable on ``mdp``.

    Besides range checks this verifies that the seed states are mutually
    returnable inside the seed set — without that the agent could strand
    itself on its very first move.
    """
    seed = np.asarray(cfg.seed_set, dtype=bool)
    if seed.shape != (mdp.num_states,):
        raise ConfigError(f"seed_set must be a mask over {mdp.num_states} states")
    if not seed.any():
        raise ConfigError("seed_set must contain at least one state")
    if not cfg.epsilon > 0:
        raise ConfigError("epsilon must be positive")
    if cfg.max_iterations < 1:
        raise ConfigError("max_iterations must be at least 1")
    if cfg.lipschitz_for_expanders < 0:
        raise ConfigError("lipschitz_for_expanders must be non-negative")
    if cfg.max_steps is not None and cfg.max_steps < 0:
        raise ConfigError("max_steps must be non-negative")
    for s in np.flatnonzero(seed):
        target = np.zeros(mdp.num_states, dtype=bool)
        target[s] = True
        returnable = r_ret_fixpoint(mdp, seed, target)
        if not returnable[seed].all():
            raise ConfigError(
                f"seed states are not mutually returnable within the seed set "
                f"(state {int(s)} is unreachable from part of the seed)"
            )


def run_safemdp(mdp: Mdp, env: Environment, cfg: ExplorerConfig,
                band_model: GpBandModel) -> ExplorationTrace:
    """Run the full safe-exploration algorithm and return its trace."""
    return _run(mdp, env, cfg, band_model, STRATEGY_SAFEMDP)


def run_baseline(strategy: str, mdp: Mdp, env: Environment, cfg: ExplorerConfig,
                 band_model: GpBandModel) -> ExplorationTrace:
    """Run one of the baseline strategies.

    ``no_expanders`` targets the most uncertain ergodic state instead of an
    expander; ``non_ergodic`` drops the returnability requirement and may
    get stuck; ``unsafe`` targets the most uncertain state anywhere and
    plans over the full MDP; ``random`` takes uniformly random actions and
    measures every state it lands on.
    """
    if strategy not in BASELINES:
        raise ConfigError(f"unknown baseline {strategy!r}; expected one of {BASELINES}")
    return _run(mdp, env, cfg, band_model, strategy)


def _run(mdp, env, cfg, band_model, strategy):
    validate_config(mdp, cfg)
    if env.num_states != mdp.num_states:
        raise ConfigError("environment and MDP disagree on the number of states")
    seed = np.asarray(cfg.seed_set, dtype=bool)
    current = int(np.flatnonzero(seed)[0])
    action_rng = np.random.default_rng([env.rng_seed, _ACTION_STREAM])

    records: list[IterationRecord] = []
    prev_ergodic = seed.copy()
    steps = 0
    violation_step = None
    reason = REASON_MAX_ITERATIONS
    final_sets = None

    if not env.is_safe(current):
        # The claimed-safe start state is already a violation.
        bands = band_model.bands
        final_sets = SafeSets(seed.copy(), seed.copy(), np.zeros_like(seed),
                              np.zeros(mdp.num_states, dtype=int), bands.width())
        return ExplorationTrace(strategy, records, REASON_VIOLATION, 0, 0, current,
                                final_sets, bands.collapses)

    for t in range(1, cfg.max_iterations + 1):
        bands = band_model.advance(t)
        sets = _classify(mdp, bands, prev_ergodic, env.threshold, cfg, strategy)
        final_sets = sets
        prev_ergodic = sets.ergodic

        if strategy == STRATEGY_RANDOM:
            label, succ = _random_action(mdp, current, action_rng)
            plan = PathPlan([label], [current, succ])
            steps += 1
            current = succ
            observation = np.nan
            if not env.is_safe(current):
                violation_step = steps
            else:
                observation = band_model.measure(env, current)
            records.append(IterationRecord(t, current, float(bands.width()[current]),
                                           plan, observation, sets, bands.digest()))
            if violation_step is not None:
                reason = REASON_VIOLATION
                break
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                reason = REASON_MAX_ITERATIONS
                break
            continue

        target = _pick_target(sets, strategy)
        if target is None:
            reason = REASON_EXPANDERS_EMPTY
            break
        width_at_target = float(bands.width()[target])
        allowed = _allowed_set(mdp, sets, strategy)
        try:
            plan = shortest_safe_path(mdp, allowed, current, target)
        except NoPathError:
            reason = REASON_STUCK
            break

        observation = np.nan
        for state in plan.states[1:]:
            steps += 1
            current = int(state)
            if not env.is_safe(current):
                violation_step = steps
                break
            if cfg.measure_along_path and current != target:
                band_model.measure(env, current)
            if cfg.max_steps is not None and steps >= cfg.max_steps and current != target:
                break
        if violation_step is None and current == target:
            observation = band_model.measure(env, target)
        records.append(IterationRecord(t, target, width_at_target, plan, observation,
                                       sets, bands.digest()))

        if violation_step is not None:
            reason = REASON_VIOLATION
            break
        if current != target:
            # max_steps expired mid-path.
            reason = REASON_MAX_ITERATIONS
            break
        if width_at_target <= cfg.epsilon:
            reason = REASON_CONVERGED
            break
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            reason = REASON_MAX_ITERATIONS
            break

    bands = band_model.bands
    if reason != REASON_VIOLATION and final_sets is not None:
        # The ergodic set grows by at most one reachability step per
        # iteration, so it lags behind the classified-safe set whenever the
        # run stops early.  With measuring over, the set recursion is pure
        # computation; finish it so the reported sets are its fixpoint.
        while True:
            closed = _classify(mdp, bands, prev_ergodic, env.threshold, cfg, strategy)
            final_sets = closed
            if np.array_equal(closed.ergodic, prev_ergodic):
                break
            prev_ergodic = closed.ergodic
    return ExplorationTrace(strategy, records, reason, violation_step, steps,
                            int(np.flatnonzero(seed)[0]), final_sets, bands.collapses)


def _classify(mdp, bands, prev_ergodic, threshold, cfg, strategy):
    if strategy == STRATEGY_NON_ERGODIC:
        safe = classify_safe(mdp, bands, prev_ergodic, threshold, cfg.mode)
        pseudo = safe & r_reach(mdp, prev_ergodic)
        mask, counts = expanders(mdp, pseudo, safe, bands, cfg.lipschitz_for_expanders,
                                 threshold)
        return SafeSets(safe, pseudo, mask, counts, bands.width())
    return compute_safe_sets(mdp, bands, prev_ergodic, threshold, cfg.mode,
                             cfg.lipschitz_for_expanders)


def _pick_target(sets: SafeSets, strategy: str):
    if strategy == STRATEGY_NO_EXPANDERS:
        return acquisition_target(sets.ergodic, sets.widths)
    if strategy == STRATEGY_UNSAFE:
        return acquisition_target(np.ones_like(sets.safe), sets.widths)
    return acquisition_target(sets.expanders, sets.widths)


def _allowed_set(mdp, sets: SafeSets, strategy: str):
    if strategy == STRATEGY_UNSAFE:
        return np.ones(mdp.num_states, dtype=bool)
    # Walk through the full safe set.  The returnability guarantee promises
    # a route between any two ergodic states through safe states, not through
    # ergodic ones, and the frontier of the ergodic set routinely lacks an
    # ergodic continuation for one round.
    return sets.safe


def _random_action(mdp, state, rng):
    acts = mdp.actions_of(state)
    return acts[int(rng.integers(len(acts)))]
