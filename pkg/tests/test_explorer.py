"""End-to-end tests of the exploration loop and its baselines."""

import numpy as np
import pytest

from safemdp.explorer import (
    REASON_CONVERGED,
    REASON_EXPANDERS_EMPTY,
    REASON_MAX_ITERATIONS,
    REASON_STUCK,
    REASON_VIOLATION,
    ConfigError,
    Environment,
    ExplorerConfig,
    GpBandModel,
    run_baseline,
    run_safemdp,
)
from safemdp.gp import ConstantBeta, GpModel, Kernel, StationaryCovariance
from safemdp.mdp import ManhattanMetric, Mdp, grid_mdp
from safemdp.safeset import GpDirectMode, LipschitzMode


def band_model(coords, seed, h, *, noise=1e-3, ell=2.0, b=4.0):
    cov = StationaryCovariance(Kernel("matern52", ell, 1.0), coords)
    return GpBandModel(GpModel(cov, noise), ConstantBeta(b), len(np.asarray(coords)), seed, h)


def meadow():
    """3x3 grid, everything genuinely safe, seed at the centre."""
    mdp = grid_mdp(3, 3, 1.0)
    seed = np.zeros(9, bool)
    seed[4] = True
    cfg = ExplorerConfig(ConstantBeta(4.0), LipschitzMode(0.5), 0.5, 0.1, 50, seed)
    return mdp, seed, cfg


def wall():
    """3x3 grid, only the centre is safe."""
    mdp = grid_mdp(3, 3, 1.0)
    seed = np.zeros(9, bool)
    seed[4] = True
    r = np.where(np.arange(9) == 4, 1.0, -1.0)
    cfg = ExplorerConfig(ConstantBeta(4.0), GpDirectMode(), 1.0, 0.1, 30, seed)
    return mdp, seed, r, cfg


def trapdoor():
    """State 1 looks attractive but its only exit leads into unsafe ground.

    State 2 (the lure) is close enough to states 1 and 3 that their upper
    bands keep certifying it, yet too far from any witness to ever be
    classified safe itself.
    """
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 3.0], [-1.0, 0.0]])
    actions = [
        [(0, 0), (1, 1), (2, 3)],
        [(0, 2)],
        [(0, 2)],
        [(0, 3), (1, 0)],
    ]
    mdp = Mdp(actions, ManhattanMetric(coords, 1.0), coords=coords)
    seed = np.zeros(4, bool)
    seed[0] = True
    r = np.array([1.0, 1.0, -5.0, 1.0])
    cfg = ExplorerConfig(ConstantBeta(4.0), LipschitzMode(0.5), 0.5, 0.05, 30, seed)
    return mdp, coords, seed, r, cfg


# ---------------------------------------------------------------------------
# environment


def test_observation_noise_statistics():
    env = Environment([2.0, -1.0], 0.0, 0.3, 123)
    draws = np.array([env.observe(0) for _ in range(100_000)])
    assert abs(draws.mean() - 2.0) < 5e-3
    assert abs(draws.std() - 0.3) < 5e-3


def test_observations_are_reproducible_and_noiseless_when_asked():
    a = Environment([1.0], 0.0, 0.5, 9)
    b = Environment([1.0], 0.0, 0.5, 9)
    assert [a.observe(0) for _ in range(5)] == [b.observe(0) for _ in range(5)]
    exact = Environment([1.25], 0.0, 0.0, 9)
    assert exact.observe(0) == 1.25


def test_safety_check_is_inclusive_at_the_threshold():
    env = Environment([0.0, -1e-9], 0.0, 0.1, 1)
    assert env.is_safe(0)
    assert not env.is_safe(1)
    with pytest.raises(ValueError):
        Environment([0.0], 0.0, -0.1, 1)


# ---------------------------------------------------------------------------
# configuration validation


def test_config_validation_errors():
    mdp = grid_mdp(1, 3, 1.0)
    seed = np.array([True, False, False])
    good = ExplorerConfig(ConstantBeta(2.0), GpDirectMode(), 1.0, 0.1, 10, seed)
    env = Environment(np.ones(3), 0.0, 0.1, 1)

    def run_with(**changes):
        cfg = ExplorerConfig(**{**good.__dict__, **changes})
        run_safemdp(mdp, env, cfg, band_model(mdp.coords, seed, 0.0))

    with pytest.raises(ConfigError):
        run_with(seed_set=np.zeros(3, bool))
    with pytest.raises(ConfigError):
        run_with(seed_set=np.array([True, False]))
    with pytest.raises(ConfigError):
        run_with(epsilon=0.0)
    with pytest.raises(ConfigError):
        run_with(max_iterations=0)
    with pytest.raises(ConfigError):
        run_with(lipschitz_for_expanders=-1.0)
    with pytest.raises(ConfigError):
        run_with(max_steps=-1)
    # Seed states 0 and 2 cannot reach each other without crossing the
    # non-seed state in between.
    with pytest.raises(ConfigError):
        run_with(seed_set=np.array([True, False, True]))


def test_environment_size_must_match_the_mdp():
    mdp, seed, cfg = meadow()
    env = Environment(np.ones(4), 0.0, 0.1, 1)
    with pytest.raises(ConfigError):
        run_safemdp(mdp, env, cfg, band_model(mdp.coords, seed, 0.0))


def test_unknown_baseline_is_rejected():
    mdp, seed, cfg = meadow()
    env = Environment(np.ones(9), 0.0, 0.1, 1)
    with pytest.raises(ConfigError):
        run_baseline("greedy", mdp, env, cfg, band_model(mdp.coords, seed, 0.0))


# ---------------------------------------------------------------------------
# main algorithm behaviour


def test_meadow_is_fully_explored_without_violation():
    mdp, seed, cfg = meadow()
    env = Environment(np.ones(9), 0.0, 1e-3, 11)
    trace = run_safemdp(mdp, env, cfg, band_model(mdp.coords, seed, 0.0))
    assert trace.violation_step is None
    assert trace.terminal_reason == REASON_EXPANDERS_EMPTY
    assert trace.final_sets.ergodic.all()
    # Movement steps dominate measurement iterations on this walking run.
    assert trace.agent_steps >= trace.iterations > 0


def test_wall_keeps_the_agent_home():
    mdp, seed, r, cfg = wall()
    env = Environment(r, 0.0, 1e-3, 7)
    trace = run_safemdp(mdp, env, cfg, band_model(mdp.coords, seed, 0.0))
    assert trace.terminal_reason == REASON_CONVERGED
    assert trace.violation_step is None
    assert trace.agent_steps == 0
    assert set(np.flatnonzero(trace.final_sets.ergodic)) == {4}


def test_everything_already_safe_terminates_immediately():
    mdp = grid_mdp(2, 2, 1.0)
    seed = np.ones(4, bool)
    cfg = ExplorerConfig(ConstantBeta(4.0), GpDirectMode(), 1.0, 0.1, 10, seed)
    env = Environment(np.ones(4), 0.0, 1e-3, 5)
    trace = run_safemdp(mdp, env, cfg, band_model(mdp.coords, seed, 0.0))
    assert trace.terminal_reason == REASON_EXPANDERS_EMPTY
    assert trace.iterations == 0 and trace.agent_steps == 0


def test_wide_epsilon_converges_on_the_first_target():
    mdp, seed, cfg = meadow()
    cfg = ExplorerConfig(**{**cfg.__dict__, "epsilon": 10.0})
    env = Environment(np.ones(9), 0.0, 1e-3, 11)
    trace = run_safemdp(mdp, env, cfg, band_model(mdp.coords, seed, 0.0))
    assert trace.terminal_reason == REASON_CONVERGED
    assert trace.iterations == 1


def test_unsafe_start_state_is_an_immediate_violation():
    mdp, seed, cfg = meadow()
    r = np.ones(9)
    r[4] = -1.0
    env = Environment(r, 0.0, 1e-3, 2)
    trace = run_safemdp(mdp, env, cfg, band_model(mdp.coords, seed, 0.0))
    assert trace.terminal_reason == REASON_VIOLATION
    assert trace.violation_step == 0
    assert trace.iterations == 0 and trace.agent_steps == 0


def test_max_steps_cuts_the_run_short():
    # True value 1.2 keeps the Lipschitz certificate clear of the exact
    # d = 1 boundary, so the second target is a neighbour one hop away.
    mdp, seed, cfg = meadow()
    cfg = ExplorerConfig(**{**cfg.__dict__, "lipschitz_for_expanders": 1.0,
                            "mode": LipschitzMode(1.0), "max_steps": 1})
    env = Environment(np.full(9, 1.2), 0.0, 1e-3, 11)
    trace = run_safemdp(mdp, env, cfg, band_model(mdp.coords, seed, 0.0))
    assert trace.terminal_reason == REASON_MAX_ITERATIONS
    assert trace.agent_steps == 1


def test_identical_seeds_reproduce_the_trace_bitwise():
    mdp, seed, cfg = meadow()
    runs = []
    for _ in range(2):
        env = Environment(np.ones(9), 0.0, 1e-3, 42)
        runs.append(run_safemdp(mdp, env, cfg, band_model(mdp.coords, seed, 0.0)))
    a, b = runs
    assert a.terminal_reason == b.terminal_reason
    assert a.agent_steps == b.agent_steps
    assert [r.target for r in a.records] == [r.target for r in b.records]
    assert [r.observation for r in a.records] == [r.observation for r in b.records]
    assert [r.bands_digest for r in a.records] == [r.bands_digest for r in b.records]
    assert [r.path.actions for r in a.records] == [r.path.actions for r in b.records]


def test_measurements_happen_only_at_targets_by_default():
    mdp, seed, cfg = meadow()
    env = Environment(np.ones(9), 0.0, 1e-3, 11)
    bm = band_model(mdp.coords, seed, 0.0)
    trace = run_safemdp(mdp, env, cfg, bm)
    assert bm.gp.num_observations == trace.iterations

    cfg = ExplorerConfig(**{**cfg.__dict__, "measure_along_path": True})
    env = Environment(np.ones(9), 0.0, 1e-3, 11)
    bm = band_model(mdp.coords, seed, 0.0)
    trace = run_safemdp(mdp, env, cfg, bm)
    assert bm.gp.num_observations > trace.iterations


def test_snapshots_keep_growing_and_stay_nested():
    mdp, seed, cfg = meadow()
    env = Environment(np.ones(9), 0.0, 1e-3, 11)
    trace = run_safemdp(mdp, env, cfg, band_model(mdp.coords, seed, 0.0))
    prev_safe = seed
    prev_erg = seed
    for rec in trace.records:
        s = rec.sets
        assert not (s.expanders & ~s.ergodic).any()
        assert not (s.ergodic & ~s.safe).any()
        assert not (prev_safe & ~s.safe).any()
        assert not (prev_erg & ~s.ergodic).any()
        prev_safe, prev_erg = s.safe, s.ergodic


# ---------------------------------------------------------------------------
# baselines


def test_random_baseline_on_safe_ground_never_violates():
    mdp, seed, cfg = meadow()
    env = Environment(np.ones(9), 0.0, 1e-3, 13)
    cfg = ExplorerConfig(**{**cfg.__dict__, "max_iterations": 40})
    trace = run_baseline("random", mdp, env, cfg, band_model(mdp.coords, seed, 0.0))
    assert trace.terminal_reason == REASON_MAX_ITERATIONS
    assert trace.violation_step is None
    # One action per iteration: movement and measurement counts coincide.
    assert trace.agent_steps == trace.iterations == 40
    for rec in trace.records:
        assert len(rec.path.actions) == 1
        assert mdp.step(rec.path.states[0], rec.path.actions[0]) == rec.path.states[1]


def test_random_baseline_respects_max_steps_and_reproduces():
    mdp, seed, cfg = meadow()
    cfg = ExplorerConfig(**{**cfg.__dict__, "max_steps": 5})
    paths = []
    for _ in range(2):
        env = Environment(np.ones(9), 0.0, 1e-3, 29)
        trace = run_baseline("random", mdp, env, cfg, band_model(mdp.coords, seed, 0.0))
        assert trace.agent_steps == 5
        paths.append([tuple(r.path.states) for r in trace.records])
    assert paths[0] == paths[1]


def test_no_expanders_baseline_keeps_sampling_when_nothing_is_outside():
    # With the whole space already safe the main algorithm stops at once,
    # while the width-over-ergodic baseline keeps measuring until converged.
    mdp = grid_mdp(2, 2, 1.0)
    seed = np.ones(4, bool)
    cfg = ExplorerConfig(ConstantBeta(4.0), GpDirectMode(), 1.0, 0.1, 25, seed)
    env = Environment(np.ones(4), 0.0, 1e-3, 5)
    trace = run_baseline("no_expanders", mdp, env, cfg, band_model(mdp.coords, seed, 0.0))
    assert trace.terminal_reason == REASON_CONVERGED
    assert trace.iterations > 0


def test_unsafe_baseline_marches_into_the_wall():
    mdp, seed, r, cfg = wall()
    env = Environment(r, 0.0, 1e-3, 7)
    trace = run_baseline("unsafe", mdp, env, cfg, band_model(mdp.coords, seed, 0.0))
    assert trace.terminal_reason == REASON_VIOLATION
    assert trace.violation_step == 1
    assert np.isnan(trace.records[-1].observation)


def test_non_ergodic_baseline_gets_stuck_in_the_trapdoor():
    mdp, coords, seed, r, cfg = trapdoor()
    env = Environment(r, 0.0, 1e-3, 3)
    trace = run_baseline("non_ergodic", mdp, env, cfg,
                         band_model(coords, seed, 0.0, ell=1.0))
    assert trace.terminal_reason == REASON_STUCK
    assert 1 in {s for rec in trace.records for s in rec.path.states}
    assert trace.violation_step is None


def test_safemdp_avoids_the_trapdoor_entirely():
    mdp, coords, seed, r, cfg = trapdoor()
    env = Environment(r, 0.0, 1e-3, 3)
    trace = run_safemdp(mdp, env, cfg, band_model(coords, seed, 0.0, ell=1.0))
    assert trace.terminal_reason == REASON_EXPANDERS_EMPTY
    visited = {s for rec in trace.records for s in rec.path.states}
    assert 1 not in visited and 2 not in visited
    assert trace.violation_step is None
