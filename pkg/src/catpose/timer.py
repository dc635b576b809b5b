import threading
import time

from loguru import logger

UNITS = {'hours': 3600,
         'minutes': 60,
         'seconds': 1,
         'milliseconds': 1e-3}


class TaskTimer:

    def __init__(self, task_name, unit='seconds'):
        self.name = task_name
        self._total = 0

        self._running = False
        self._start = None

        self._unit = unit

        self._scaling = UNITS.get(unit)

        if self._scaling is None:
            raise ValueError(f'Unknown unit `{unit}`')

    @property
    def _now(self):
        return time.perf_counter()

    def start(self):
        self._start = self._now
        self._running = True

    def stop(self):
        if not self._running:
            return
        self._total += self._now - self._start
        self._running = False

    def add(self, seconds):
        """Account time measured elsewhere, e.g. in a worker thread."""
        self._total += seconds

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()

    @property
    def _msg(self):
        return 'running for' if self._running else 'took'

    @property
    def total(self):
        if self._running:
            total = (self._total + self._now - self._start) / self._scaling
        else:
            total = self._total / self._scaling

        return total

    def log(self, level='INFO'):
        logger.log(level,
                   f"{self.name} {self._msg} {self.total:.2f} {self._unit}")

    def reset(self):
        self._start = None
        self._running = False
        self._total = 0


class RenderTimer:
    """Stage timers of a dataset run. Worker threads report their own
    measurements through `record`."""

    def __init__(self):
        self.render = TaskTimer('depth rendering')
        self.backproject = TaskTimer('back-projection')
        self.write = TaskTimer('record writing')
        self.wall = TaskTimer('dataset run')
        self.n_renders = 0
        self._lock = threading.Lock()

    def record(self, render_s=0.0, backproject_s=0.0, write_s=0.0):
        with self._lock:
            self.render.add(render_s)
            self.backproject.add(backproject_s)
            self.write.add(write_s)
            self.n_renders += 1

    @property
    def renders_per_second(self):
        wall = self.wall.total
        return self.n_renders / wall if wall > 0 else float('nan')

    @property
    def total(self):
        return self.render.total + self.backproject.total + self.write.total

    def to_dict(self):
        return {'n_renders': self.n_renders,
                'render_s': self.render.total,
                'backproject_s': self.backproject.total,
                'write_s': self.write.total,
                'wall_s': self.wall.total,
                'renders_per_second': self.renders_per_second}

    def log(self, level='INFO'):
        for t in (self.render, self.backproject, self.write, self.wall):
            t.log(level)
        logger.log(level, f"{self.n_renders} renders, "
                          f"{self.renders_per_second:.1f} renders/s")
