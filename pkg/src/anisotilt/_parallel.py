from concurrent.futures import ThreadPoolExecutor

_default_threads = 1


def set_threads(n: int) -> None:
    global _default_threads
    _default_threads = max(1, int(n))


def get_threads() -> int:
    return _default_threads


def parallel_map(fn, items, threads=None):
    """Ordered map; results are returned in input order regardless of threads."""
    items = list(items)
    threads = get_threads() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
