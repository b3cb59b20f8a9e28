"""Worker backends for ensemble runs (serial or joblib)."""
import os
from typing import Callable, Iterable, Iterator, Optional, TypeVar

from joblib import Parallel, delayed

from rheterodyne.observability import log_event

T = TypeVar("T")
R = TypeVar("R")


class RealizationRunner:
    """Base runner interface: apply a function to items, yielding results in submission order."""
    n_workers = 1

    def map(self, func: Callable[[T], R], items: Iterable[T]) -> Iterator[R]:
        raise NotImplementedError


class SerialRunner(RealizationRunner):
    """In-process runner, used for a single worker and inside tests."""
    def map(self, func: Callable[[T], R], items: Iterable[T]) -> Iterator[R]:
        for item in items:
            yield func(item)


class JoblibRunner(RealizationRunner):
    """Process pool (loky) streaming ordered results as they complete."""
    def __init__(self, n_workers: int):
        self.n_workers = n_workers

    def map(self, func: Callable[[T], R], items: Iterable[T]) -> Iterator[R]:
        parallel = Parallel(n_jobs=self.n_workers, return_as="generator")
        yield from parallel(delayed(func)(item) for item in items)


def get_runner(threads: Optional[int] = None) -> RealizationRunner:
    """Get a runner (joblib pool for more than one worker, else serial)."""
    if threads is None:
        threads = int(os.environ.get("RHET_THREADS", "1") or 1)
    if threads > 1:
        log_event("runner_ready", backend="joblib", workers=threads)
        return JoblibRunner(threads)
    log_event("runner_ready", backend="serial", workers=1)
    return SerialRunner()
