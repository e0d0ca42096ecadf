import numpy as np
import pytest
from scipy.stats import spearmanr

from app.api.cli_commands import sweep_trace
from app.core.errors import InputError
from app.models.sim_schema import LEDGER_CATEGORIES, POLICY_KINDS, Policy
from app.models.trace_schema import IntervalSeries
from app.models.workload_schema import ParallelConfig
from app.services.simulator import Simulator, adjust_config, run
from app.services.trace_service import gen_synthetic

REACTIVE = Policy(kind="reactive")


def _series(counts, capacity=None):
    return IntervalSeries(counts=counts, capacity=capacity or max(max(counts), 1), name="unit")


def _ledger_total(report):
    return sum(report.gpu_seconds[c] for c in LEDGER_CATEGORIES)


# ============================================================
# LIVE MIGRATION POLICIES
# ============================================================

def test_constant_availability_trains_every_interval(example_profile):
    report = run(_series([6] * 10), example_profile, REACTIVE)
    assert report.committed_samples == 60_000
    assert report.gpu_seconds["migration"] == 0
    assert report.gpu_seconds["wasted_rollback"] == 0
    assert report.gpu_seconds["effective"] == pytest.approx(6 * 60 * 10)
    assert all(log.commits == 6000 for log in report.intervals)


def test_zero_instances_suspend_then_restart(example_profile):
    report = run(_series([6, 6, 0, 6]), example_profile, REACTIVE)
    logs = report.intervals
    assert logs[2].migration_kind == "suspended"
    assert logs[2].commits == 0
    assert report.suspended_intervals == 1
    assert logs[3].migration_kind == "restart"
    # 16 s start-up plus 15 s rebuild before training resumes
    assert logs[3].commits == 2900
    assert report.rollbacks == 0


def test_wiped_stage_rolls_back(example_profile):
    report = run(_series([6, 2]), example_profile, REACTIVE)
    log = report.intervals[1]
    assert log.migration_kind == "rollback"
    assert log.rolled_back_samples == 6000
    # 15 s reload plus the 30 s penalty, then a 1x2 pipeline at 30 samples/s
    assert log.commits == 450
    assert (log.D, log.P) == (1, 2)
    assert report.committed_samples == 450
    assert report.rollbacks == 1
    assert report.gpu_seconds["wasted_rollback"] == pytest.approx(6 * 60 + 30 * 2)


def test_wipe_into_suspension_still_rolls_back(example_profile, log_messages):
    report = run(_series([6, 1, 6]), example_profile, REACTIVE)
    logs = report.intervals
    assert logs[1].migration_kind == "suspended"
    assert logs[1].rolled_back_samples == 6000
    assert logs[1].commits == 0
    assert report.rollbacks == 1
    assert logs[2].commits == 2900
    assert report.committed_samples == 2900
    assert report.gpu_seconds["wasted_rollback"] == pytest.approx(6 * 60)
    assert any(m.startswith("WARNING simulator") and "rollback" in m for m in log_messages)
    # losing more instances never keeps more work
    assert report.committed_samples <= run(_series([6, 2, 6]), example_profile, REACTIVE).committed_samples


def test_policy_label_and_name(example_profile):
    policy = Policy.parse("reactive:name=baseline")
    assert run(_series([6, 6]), example_profile, policy).policy == "baseline"


def test_empty_trace_is_rejected(example_profile):
    with pytest.raises(InputError):
        Simulator(IntervalSeries(counts=[], capacity=4), example_profile, REACTIVE)


# ============================================================
# CHECKPOINT / RESTART
# ============================================================

def test_checkpoint_saves_cost_overhead(example_profile):
    policy = Policy(kind="checkpoint", period=3)
    report = run(_series([6] * 10), example_profile, policy)
    assert report.committed_samples == 57_000
    assert report.gpu_seconds["checkpoint_overhead"] == pytest.approx(180)
    assert report.rollbacks == 0


def test_checkpoint_preemption_loses_work_since_save(example_profile):
    policy = Policy(kind="checkpoint", period=10)
    report = run(_series([6, 6, 6, 5, 5]), example_profile, policy)
    assert report.rollbacks == 1
    assert report.intervals[3].rolled_back_samples == 18_000
    assert report.intervals[3].commits == 0
    assert report.committed_samples == 3600
    assert report.gpu_seconds["wasted_rollback"] == pytest.approx(1080)


# ============================================================
# REDUNDANCY
# ============================================================

def test_redundancy_runs_at_slowdown(example_profile):
    policy = Policy(kind="redundancy", fixed_P=3)
    report = run(_series([6] * 5), example_profile, policy)
    assert [log.commits for log in report.intervals] == [3600] * 5
    assert report.gpu_seconds["effective"] == pytest.approx(0.6 * 6 * 60 * 5)
    assert report.gpu_seconds["checkpoint_overhead"] == pytest.approx(0.4 * 6 * 60 * 5)


def test_redundancy_absorbs_preemptions(example_profile):
    policy = Policy(kind="redundancy", fixed_P=3)
    report = run(_series([6, 3, 6]), example_profile, policy)
    assert report.rollbacks == 0
    assert [(log.D, log.P) for log in report.intervals] == [(2, 3), (1, 3), (2, 3)]


def test_redundancy_depth_must_be_feasible(example_profile):
    with pytest.raises(InputError):
        Simulator(_series([6]), example_profile, Policy(kind="redundancy", fixed_P=4))


# ============================================================
# CONFIG ADAPTATION
# ============================================================

def test_adjust_config(make_profile):
    w = make_profile(np.random.default_rng(0), min_depth=4)
    planned = ParallelConfig(D=4, P=8)
    assert adjust_config(planned, 34, w) == planned
    assert adjust_config(planned, 30, w) == ParallelConfig(D=3, P=8)
    assert adjust_config(planned, 6, w) == ParallelConfig(D=1, P=6)
    assert adjust_config(planned, 3, w) is None
    assert adjust_config(None, 30, w) is None


# ============================================================
# INVARIANTS
# ============================================================

def _random_runs(count, seed):
    rng = np.random.default_rng(seed)
    for k in range(count):
        length = int(rng.integers(2, 10))
        counts = [int(n) for n in rng.integers(0, 9, size=length)]
        kind = POLICY_KINDS[k % len(POLICY_KINDS)]
        policy = Policy(kind=kind, lookahead=4, history=4, period=int(rng.integers(1, 4)), fixed_P=3)
        yield IntervalSeries(counts=counts, capacity=8, name=f"random{k}"), policy, int(rng.integers(1000))


def test_ledger_accounts_for_every_instance_second(example_profile):
    for series, policy, seed in _random_runs(100, 7):
        report = run(series, example_profile, policy, seed=seed)
        assert _ledger_total(report) == pytest.approx(report.instance_seconds, rel=1e-9, abs=1e-6), policy.kind
        assert report.committed_samples >= 0


def test_samples_are_committed_exactly_once(example_profile):
    for series, policy, seed in _random_runs(100, 8):
        report = run(series, example_profile, policy, seed=seed, epoch_size=700)
        assert report.exactly_once, policy.kind


def test_epochs_roll_over(example_profile):
    report = run(_series([6] * 10), example_profile, REACTIVE, epoch_size=1000)
    assert len(report.epochs) == 60
    assert report.exactly_once


def test_same_seed_same_report(example_profile):
    series = gen_synthetic(3, 8, 20, 5, 4, magnitude_range=(1, 3))
    for kind in POLICY_KINDS:
        policy = Policy(kind=kind, lookahead=4, fixed_P=2)
        first = run(series, example_profile, policy, seed=9)
        second = run(series, example_profile, policy, seed=9)
        assert first.model_dump() == second.model_dump()


# ============================================================
# POLICY COMPARISONS
# ============================================================

def test_perfect_forecast_is_at_least_as_good(example_profile):
    ideal_total, predicted_total = 0, 0
    for seed in range(10):
        series = gen_synthetic(seed, 12, 30, 4, 4, magnitude_range=(1, 3))
        ideal = run(series, example_profile, Policy(kind="parcae_ideal", lookahead=4), seed=seed).committed_samples
        predicted = run(series, example_profile, Policy(kind="parcae", lookahead=4), seed=seed).committed_samples
        assert ideal >= predicted, seed
        ideal_total += ideal
        predicted_total += predicted
    assert predicted_total >= 0.80 * ideal_total


def test_advantage_over_reactive_grows_with_preemptions(gpt2_profile):
    events = [3, 10, 20, 30]
    ratios = []
    for e in events:
        per_seed = []
        for seed in range(1, 6):
            series = sweep_trace(seed, e, 32, 60, 60.0)
            ours = run(series, gpt2_profile, Policy(kind="parcae"), seed=seed).committed_samples
            base = run(series, gpt2_profile, REACTIVE, seed=seed).committed_samples
            per_seed.append(ours / base)
        ratios.append(float(np.mean(per_seed)))
    assert ratios[0] >= 1.0, ratios
    assert spearmanr(events, ratios)[0] > 0.9, ratios


def test_longer_lookahead_never_hurts_on_dense_trace(gpt2_profile):
    for seed in range(1, 6):
        series = sweep_trace(seed, 30, 32, 60, 60.0)
        commits = [
            run(series, gpt2_profile, Policy(kind="parcae_ideal", lookahead=I), seed=seed).committed_samples
            for I in (1, 4, 8, 12)
        ]
        assert commits == sorted(commits), (seed, commits)


# ============================================================
# REPLANNING FREQUENCY
# ============================================================

def test_sparse_replanning_calls_optimizer_less(example_profile):
    series = _series([4, 4, 6, 6, 6, 6, 6, 6])
    calls = {}
    reports = {}
    for every in (1, 3):
        sim = Simulator(series, example_profile, Policy(kind="parcae_ideal", lookahead=4, replan_every=every))
        optimize = sim.optimizer.optimize
        calls[every] = 0

        def counted(*args, _every=every, **kwargs):
            calls[_every] += 1
            return optimize(*args, **kwargs)

        sim.optimizer.optimize = counted
        reports[every] = sim.run()
    assert calls == {1: 7, 3: 3}
    assert reports[3].committed_samples <= reports[1].committed_samples
    assert _ledger_total(reports[3]) == pytest.approx(reports[3].instance_seconds)


def test_sparse_replanning_keeps_invariants(example_profile):
    for series, policy, seed in _random_runs(30, 12):
        policy = policy.model_copy(update={"replan_every": 3})
        report = run(series, example_profile, policy, seed=seed, epoch_size=700)
        assert _ledger_total(report) == pytest.approx(report.instance_seconds, rel=1e-9, abs=1e-6), policy.kind
        assert report.exactly_once, policy.kind
        for log in report.intervals:
            assert log.D * log.P <= log.N
