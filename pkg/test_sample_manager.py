import numpy as np

from app.services.sample_manager import SampleManager


def test_dispatch_takes_lowest_indices():
    manager = SampleManager(epoch_size=100)
    assert manager.dispatch(30) == [(0, 30)]
    assert manager.dispatch(10) == [(30, 40)]
    assert manager.in_flight_count == 40
    assert manager.pending_count == 60
    assert manager.check_invariant()


def test_commit_moves_in_flight_to_committed():
    manager = SampleManager(epoch_size=100)
    manager.dispatch(25)
    assert manager.commit() == 25
    assert manager.committed == 25
    assert manager.in_flight_count == 0
    assert manager.check_invariant()


def test_abort_returns_samples_to_pending():
    manager = SampleManager(epoch_size=100)
    manager.dispatch(40)
    assert manager.abort() == 40
    assert manager.pending_count == 100
    assert manager.dispatch(10) == [(0, 10)]


def test_rollback_restores_last_checkpoint():
    manager = SampleManager(epoch_size=100)
    manager.train(30)
    manager.checkpoint()
    manager.train(20)
    manager.dispatch(5)
    assert manager.rollback() == 20
    assert manager.committed == 30
    assert manager.total_committed == 30
    assert manager.pending_count == 70
    assert manager.uncheckpointed == 0
    assert manager.check_invariant()
    # rolled back samples are redispatched first
    assert manager.dispatch(20) == [(30, 50)]


def test_rollback_without_new_commits_is_empty():
    manager = SampleManager(epoch_size=50)
    manager.train(10)
    manager.checkpoint()
    assert manager.rollback() == 0
    assert manager.committed == 10


def test_train_rolls_over_epochs():
    manager = SampleManager(epoch_size=100)
    assert manager.train(250) == 250
    assert manager.epoch == 2
    assert manager.committed == 50
    assert manager.total_committed == 250
    assert len(manager.records) == 2
    assert all(record.exactly_once for record in manager.records)


def test_finished_epoch_is_not_rolled_back():
    manager = SampleManager(epoch_size=100)
    manager.train(80)
    manager.train(40)
    assert manager.rollback() == 20
    assert manager.total_committed == 100
    assert manager.epoch == 1


def test_random_schedule_commits_each_sample_once():
    rng = np.random.default_rng(3)
    manager = SampleManager(epoch_size=97)
    for _ in range(400):
        action = rng.integers(4)
        if action == 0:
            manager.train(int(rng.integers(1, 40)))
        elif action == 1:
            manager.checkpoint()
        elif action == 2:
            manager.rollback()
        else:
            manager.dispatch(int(rng.integers(1, 20)))
            manager.abort()
        assert manager.check_invariant()
    assert manager.records
    assert all(record.exactly_once for record in manager.records)
