import concurrent.futures
from tqdm.auto import tqdm

from catpose._version import __version__


__all__ = ['__version__', 'parallelize']


def parallelize(f,
                items,
                max_workers=4,
                progressbar=True,
                total=None,
                use_process_pool=False):
    """Map `f` over `items` in a thread (or process) pool. Results come
    back in input order, a single worker runs serially."""
    if total is None:
        try:
            total = len(items)
        except Exception:
            total = None
            progressbar = False

    if max_workers is None or max_workers <= 1:
        it = map(f, items)
        if progressbar:
            it = tqdm(it, total=total)
        return list(it)

    if use_process_pool:
        Pool = concurrent.futures.ProcessPoolExecutor
    else:
        Pool = concurrent.futures.ThreadPoolExecutor

    with Pool(max_workers=max_workers) as ex:
        if progressbar:
            results = list(tqdm(ex.map(f, items), total=total))
        else:
            results = list(ex.map(f, items))
    return results
