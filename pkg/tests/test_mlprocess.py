import numpy as np
import pytest
from scipy import stats

from coalrate.errors import InvariantViolation, ValidationError
from coalrate.kernels import builtin_kernel
from coalrate.measures import DiscreteMeasure
from coalrate.mlprocess import (
    ParticleSystem,
    TrajectoryLog,
    check_trajectory,
    init,
    moment_trajectory,
    replicate_seed,
    run_until,
    step,
)

ADD = builtin_kernel("additive")


def test_init_expands_weights():
    sys_ = init(DiscreteMeasure([1.0], [1.0]), ADD, 10, seed=1)
    assert sys_.masses.tolist() == [1.0] * 10
    with pytest.raises(ValidationError, match="1"):
        init(DiscreteMeasure([1.0], [0.25]), ADD, 10, seed=1)


def test_total_rate_hand_example():
    sys_ = init(DiscreteMeasure([1.0, 2.0], [0.5, 0.5]), ADD, 4, seed=1)
    assert sys_.total_rate == pytest.approx(4.5, rel=1e-15)
    assert sys_.exact_total_rate() == pytest.approx(4.5, rel=1e-15)


def test_two_particles_merge_once():
    sys_ = ParticleSystem([1.0, 1.0], 1, ADD, seed=5)
    ev = step(sys_)
    assert ev.new_mass == 2.0 and sys_.masses.tolist() == [2.0]
    assert ev.dt > 0 and sys_.t == ev.t
    assert step(sys_) is None


def test_two_particle_waiting_time_is_exponential():
    template = ParticleSystem([1.0, 1.0], 1, ADD, seed=0)
    dts = [template.spawn(replicate_seed(9, r)).advance().dt for r in range(4000)]
    assert stats.kstest(dts, "expon", args=(0, 0.5)).pvalue > 0.001


@pytest.mark.parametrize("method", ["direct", "rejection"])
def test_determinism(method):
    mu = DiscreteMeasure([1.0, 2.0, 3.5], [0.3, 0.3, 0.4])
    k = builtin_kernel("sum_power", 0.5)

    def events(seed):
        s = init(mu, k, 50, seed, method=method)
        out = []
        while (ev := step(s)) is not None:
            out.append(ev)
        return out

    a, b = events(42), events(42)
    assert a == b
    assert events(43) != a


def test_seed_derivation_is_stable():
    assert replicate_seed(1, 100, 0) == replicate_seed(1, 100, 0)
    assert len({replicate_seed(1, 100, r) for r in range(1000)}) == 1000
    assert replicate_seed(1, 100, 0) != replicate_seed(1, 400, 0)


def test_rate_cache_integrity_after_many_events():
    rng = np.random.default_rng(0)
    masses = rng.uniform(0.5, 3.0, 12000)
    k = builtin_kernel("sum_power", -0.5)
    sys_ = ParticleSystem(masses, 12000, k, seed=3, rebuild_every=0)
    for _ in range(10**4):
        step(sys_)
    assert sys_.rebuilds == 1
    exact = sys_.exact_total_rate()
    assert abs(sys_.total_rate - exact) / exact <= 1e-9


def test_rebuild_cadence_options():
    mu = DiscreteMeasure([1.0], [1.0])
    s = init(mu, ADD, 200, seed=1, rebuild_every=7)
    for _ in range(70):
        step(s)
    assert s.rebuilds == 11  # initial build plus one every 7 events
    s = init(mu, ADD, 200, seed=1)
    for _ in range(70):
        step(s)
    assert s.rebuilds == 1  # automatic gap never drops below the particle count


def test_run_until_zero_horizon():
    mu = DiscreteMeasure([1.0, 2.0], [0.5, 0.5])
    log = run_until(init(mu, ADD, 10, seed=1), 0.0, [0.0])
    assert len(log.snapshots) == 1 and log.events == 0
    assert log.snapshots[0].measure == mu


def test_mass_conservation_and_count_bookkeeping():
    log = run_until(init(DiscreteMeasure([1.0], [1.0]), ADD, 1000, seed=8), 0.5, [0.1, 0.25, 0.5])
    for s in log.snapshots:
        assert s.moment(1.0) == 1.0
        assert s.particles == 1000 - s.events
        assert s.particles >= 1
    check_trajectory(log, m1=1.0)


def test_cadlag_snapshots_include_events_at_or_before_s():
    sys_ = ParticleSystem([1.0, 1.0, 1.0], 3, ADD, seed=11)
    probe = sys_.spawn(11)
    first = probe.advance()
    log = run_until(sys_, first.t * 2, [first.t * (1 - 1e-12), first.t * 2])
    assert log.snapshots[0].particles == 3
    assert log.snapshots[1].events >= 1


def test_moment_series_behaviour():
    log = run_until(init(DiscreteMeasure([1.0], [1.0]), ADD, 500, seed=2), 0.5, np.linspace(0.05, 0.5, 10))
    m0 = moment_trajectory(log, 0.0)
    events = np.array([s.events for s in log.snapshots])
    assert np.allclose(m0, (500 - events) / 500)
    m2 = moment_trajectory(log, 2.0)
    assert np.all(np.diff(m2) >= 0)
    assert np.all(moment_trajectory(log, 1.0) == 1.0)


def test_monotonicity_violation_is_an_error():
    log = run_until(init(DiscreteMeasure([1.0], [1.0]), ADD, 100, seed=2), 0.5, [0.25, 0.5])
    bad = TrajectoryLog(log.n, log.initial_particles, list(reversed(log.snapshots)), log.events, log.final_time)
    assert log.snapshots[0].events < log.snapshots[1].events
    with pytest.raises(InvariantViolation):
        moment_trajectory(bad, 0.0)


def test_jsonl_roundtrip(tmp_path):
    log = run_until(init(DiscreteMeasure([1.0], [1.0]), ADD, 200, seed=4), 0.5, [0.0, 0.5])
    p = tmp_path / "t.jsonl"
    log.to_jsonl(p)
    first = p.read_text().splitlines()[0]
    assert first == '{"t": 0.0, "atoms": [[1.0, 200]], "n": 200}'
    back = TrajectoryLog.from_jsonl(p)
    assert [s.measure for s in back.snapshots] == [s.measure for s in log.snapshots]


@pytest.mark.parametrize("method", ["direct", "rejection"])
def test_first_merge_pair_distribution(method):
    masses = [1.0, 2.0, 3.0]
    template = ParticleSystem(masses, 3, ADD, seed=0, method=method)
    runs = 20000
    counts = np.zeros(3)
    pair_index = {(0, 1): 0, (0, 2): 1, (1, 2): 2}
    for r in range(runs):
        ev = template.spawn(replicate_seed(17, r)).advance()
        counts[pair_index[tuple(sorted((ev.i, ev.j)))]] += 1
    p = np.array([3.0, 4.0, 5.0]) / 12.0
    sigma = np.sqrt(runs * p * (1 - p))
    assert np.all(np.abs(counts - runs * p) <= 3 * sigma)


def test_identical_particles_pair_uniformity():
    template = ParticleSystem(np.ones(5), 5, builtin_kernel("sum_power", -1.0), seed=0)
    runs = 20000
    counts = {}
    for r in range(runs):
        ev = template.spawn(replicate_seed(23, r)).advance()
        key = tuple(sorted((ev.i, ev.j)))
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 10
    assert stats.chisquare(list(counts.values())).pvalue > 0.001


def test_rejection_and_direct_agree_in_law():
    mu = DiscreteMeasure([1.0, 4.0], [0.5, 0.5])
    k = builtin_kernel("sum_power", -1.0)
    finals = {}
    for method in ("direct", "rejection"):
        template = init(mu, k, 20, seed=0, method=method)
        finals[method] = [
            run_until(template.spawn(replicate_seed(5, r)), 2.0, [2.0]).snapshots[0].particles for r in range(1500)
        ]
    res = stats.ks_2samp(finals["direct"], finals["rejection"])
    assert res.pvalue > 0.001


def test_invalid_inputs():
    with pytest.raises(ValidationError):
        ParticleSystem([1.0, -1.0], 2, ADD, seed=0)
    with pytest.raises(ValidationError):
        ParticleSystem([1.0], 1, ADD, seed=0, method="tau-leap")
    s = init(DiscreteMeasure([1.0], [1.0]), ADD, 10, seed=0)
    with pytest.raises(ValidationError):
        run_until(s, 1.0, [0.5, 0.2])
    with pytest.raises(ValidationError):
        run_until(s, 1.0, [2.0])


def test_terminal_state_reports_no_event():
    s = ParticleSystem([1.0], 1, ADD, seed=0)
    assert step(s) is None
    assert s.advance(1.0) is None and s.t == 1.0


@pytest.mark.parametrize("method", ["direct", "rejection"])
def test_observation_grid_does_not_change_the_path(method):
    mu = DiscreteMeasure([1.0, 2.0], [0.5, 0.5])
    finals = []
    for snaps in ([1.0], [0.1, 0.2, 0.5, 1.0], np.linspace(0.0, 1.0, 57)):
        log = run_until(init(mu, ADD, 60, seed=77, method=method), 1.0, snaps)
        finals.append((log.events, log.snapshots[-1].measure))
    assert finals[0] == finals[1] == finals[2]
