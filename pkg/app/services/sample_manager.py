# app/services/sample_manager.py

from typing import List, Optional, Tuple

import numpy as np

from app.core.config import settings
from app.core.logger import get_logger
from app.models.sim_schema import EpochRecord

logger = get_logger("sample_manager")

Range = Tuple[int, int]


def _size(ranges: List[Range]) -> int:
    return sum(end - start for start, end in ranges)


def _merge(ranges: List[Range]) -> List[Range]:
    merged: List[Range] = []
    for start, end in sorted(ranges):
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(end, merged[-1][1]))
        else:
            merged.append((start, end))
    return merged


class SampleManager:
    """
    Tracks which sample indices of the current epoch are pending, in flight
    (dispatched to a running mini-batch) or committed. Samples of aborted
    mini-batches and samples committed after the last checkpoint mark that
    get rolled back return to the pending pool, so each index is committed
    exactly once per epoch.
    """

    def __init__(self, epoch_size: Optional[int] = None):
        self.epoch_size = epoch_size or settings.EPOCH_SIZE
        self.epoch = 0
        self.total_committed = 0
        self.records: List[EpochRecord] = []
        self._start_epoch()

    def _start_epoch(self) -> None:
        self.pending: List[Range] = [(0, self.epoch_size)]
        self.in_flight: List[Range] = []
        self.committed = 0
        self._since_mark: List[Range] = []
        self._commit_counts = np.zeros(self.epoch_size, dtype=np.int32)

    # ------------------------------------------------------------------
    @property
    def pending_count(self) -> int:
        return _size(self.pending)

    @property
    def in_flight_count(self) -> int:
        return _size(self.in_flight)

    @property
    def uncheckpointed(self) -> int:
        return _size(self._since_mark)

    def dispatch(self, n: int) -> List[Range]:
        """Move up to n pending samples, lowest indices first, into flight."""
        taken: List[Range] = []
        while n > 0 and self.pending:
            start, end = self.pending[0]
            step = min(n, end - start)
            taken.append((start, start + step))
            if start + step == end:
                self.pending.pop(0)
            else:
                self.pending[0] = (start + step, end)
            n -= step
        self.in_flight = _merge(self.in_flight + taken)
        return taken

    def commit(self) -> int:
        """Every in-flight mini-batch finished; returns how many samples committed."""
        count = self.in_flight_count
        for start, end in self.in_flight:
            self._commit_counts[start:end] += 1
        self._since_mark = _merge(self._since_mark + self.in_flight)
        self.in_flight = []
        self.committed += count
        self.total_committed += count
        if self.committed == self.epoch_size:
            self._finish_epoch()
        return count

    def abort(self) -> int:
        """In-flight samples were lost with their mini-batch."""
        count = self.in_flight_count
        self.pending = _merge(self.pending + self.in_flight)
        self.in_flight = []
        return count

    def checkpoint(self) -> None:
        self._since_mark = []

    def rollback(self) -> int:
        """Restore the last checkpoint: samples committed since then become pending again."""
        self.abort()
        count = self.uncheckpointed
        for start, end in self._since_mark:
            self._commit_counts[start:end] -= 1
        self.pending = _merge(self.pending + self._since_mark)
        self._since_mark = []
        self.committed -= count
        self.total_committed -= count
        if count:
            logger.debug(f"Rolled back {count} samples in epoch {self.epoch}")
        return count

    def _finish_epoch(self) -> None:
        record = EpochRecord(
            epoch=self.epoch,
            min_commits=int(self._commit_counts.min()),
            max_commits=int(self._commit_counts.max()),
        )
        self.records.append(record)
        if not record.exactly_once:
            logger.warning(f"Epoch {self.epoch} committed samples between {record.min_commits} and {record.max_commits} times")
        # a finished epoch is durable
        self.epoch += 1
        self._start_epoch()

    def train(self, n: int) -> int:
        """Dispatch and commit n samples, rolling over into new epochs as needed."""
        done = 0
        while done < n:
            self.dispatch(min(n - done, self.pending_count))
            done += self.commit()
        return done

    def check_invariant(self) -> bool:
        return self.committed + self.pending_count + self.in_flight_count == self.epoch_size
