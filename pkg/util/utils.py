import logging
import sys
import time
from functools import wraps

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level="INFO"):
    """
    Route every module logger to stderr; stdout stays reserved for command output

    :param level: the logging level name (DEBUG, INFO, WARNING, ...)
    :return: the root logger
    """
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))
    return root


def timing(f):
    """
    Wrap a function to log the function's duration

    :param f: function to wrap
    :return:
    """

    @wraps(f)
    def wrap(*args, **kwargs):
        t_start = time.perf_counter()
        ret = f(*args, **kwargs)
        t_end = time.perf_counter()
        logger.info('%s function took %0.3f ms', f.__name__, (t_end - t_start) * 1000.0)
        return ret

    return wrap


class Stopwatch(object):
    """
    Accumulating wall-clock timer used around the per-frame memory pipeline.

    :ivar elapsed: seconds measured by the last ``with`` block
    :ivar total: seconds accumulated over every block
    """

    def __init__(self):
        self.elapsed = 0.0
        self.total = 0.0
        self._start = None

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.elapsed = time.perf_counter() - self._start
        self.total += self.elapsed
        return False
