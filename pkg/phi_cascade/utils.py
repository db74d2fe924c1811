import logging
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

from tqdm import tqdm

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def _call_collecting(fn: Callable[[T], R], shared_cache: dict, item: T) -> tuple[R, dict]:
    # fn and shared_cache arrive in one pickle, so fn's bound cache is shared_cache
    known = set(shared_cache)
    result = fn(item)
    return result, {k: v for k, v in shared_cache.items() if k not in known}


def parallel_map(
    fn: Callable[[T], R],
    items: Iterable[T],
    threads: int = 1,
    desc: str | None = None,
    progress: bool = False,
    shared_cache: dict | None = None,
) -> list[R]:
    """
    Map fn over items, keeping input order.

    With threads <= 1 this runs in-process. Otherwise each worker process gets a
    pickled copy of fn's bound configs, so memo tables are per worker and results
    cannot depend on the worker count.

    Args:
        fn: A picklable callable (module-level function or functools.partial).
        items: Inputs.
        threads: Maximum number of worker processes.
        desc: Label for the progress bar.
        progress: Show a tqdm progress bar.
        shared_cache: A memo dict that fn fills (e.g. PhiConfig.cache). Entries
            the workers add are merged back into it.

    Returns:
        [fn(item) for item in items]
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in tqdm(items, desc=desc, disable=not progress)]
    with ProcessPoolExecutor(max_workers=threads) as executor:
        if shared_cache is None:
            futures = [executor.submit(fn, item) for item in items]
            return [f.result() for f in tqdm(futures, desc=desc, disable=not progress)]
        futures = [executor.submit(_call_collecting, fn, shared_cache, item) for item in items]
        results = []
        for f in tqdm(futures, desc=desc, disable=not progress):
            result, new_entries = f.result()
            for key, value in new_entries.items():
                shared_cache.setdefault(key, value)
            results.append(result)
    logger.debug(f"{len(shared_cache)} cache entries after {desc or 'parallel map'}")
    return results


class Timer:
    def __init__(self, num_tasks):
        self.start_time = time.time()
        self.num_tasks = num_tasks
        self.current_task = 0

    def increment(self, label: str = ""):
        self.current_task += 1
        elapsed_minutes = (time.time() - self.start_time) / 60
        time_per_task = elapsed_minutes / self.current_task
        time_remaining = time_per_task * (self.num_tasks - self.current_task)
        logger.info(
            f"Finished {label or 'task'} {self.current_task}/{self.num_tasks} - "
            f"Elapsed: {elapsed_minutes:.2f} min - "
            f"Remaining: {time_remaining:.2f} min"
        )
