"""
离散事件核心：模拟时钟、事件队列和按名称划分的随机子流
"""

import hashlib
import heapq
import itertools
import logging
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .errors import ScheduleError

logger = logging.getLogger(__name__)


class Event:
    __slots__ = ("time", "ordinal", "action", "args", "label", "cancelled")

    def __init__(self, time: float, ordinal: int, action: Callable[..., Any], args: Tuple[Any, ...], label: str):
        self.time = time
        self.ordinal = ordinal
        self.action = action
        self.args = args
        self.label = label
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True

    def __repr__(self) -> str:
        return f"Event(t={self.time:.6f}, #{self.ordinal}, {self.label or self.action.__name__})"


class RandomStreams:
    """每次运行一个种子；每个随机组件按名称拿到独立子流，新增组件不会扰动已有组件"""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: Dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        rng = self._streams.get(name)
        if rng is None:
            key = int.from_bytes(hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest(), "big")
            rng = np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=(key,)))
            self._streams[name] = rng
        return rng


class Simulator:
    """单一逻辑进程内顺序执行的事件循环；同一时刻的事件按调度顺序触发"""

    def __init__(self, seed: int = 0):
        self.now = 0.0
        self.streams = RandomStreams(seed)
        self._queue: List[Tuple[float, int, Event]] = []
        self._ordinal = itertools.count()
        self._trace = hashlib.sha256()
        self._stopped = False
        self.events_fired = 0

    def schedule(self, time: float, action: Callable[..., Any], *args: Any, label: str = "") -> Event:
        if time < self.now:
            raise ScheduleError(f"不能调度到过去: t={time} < now={self.now}")
        event = Event(time, next(self._ordinal), action, args, label)
        heapq.heappush(self._queue, (time, event.ordinal, event))
        return event

    def call_later(self, delay: float, action: Callable[..., Any], *args: Any, label: str = "") -> Event:
        return self.schedule(self.now + delay, action, *args, label=label)

    def stop(self) -> None:
        self._stopped = True

    @property
    def pending(self) -> int:
        return len(self._queue)

    def step(self) -> bool:
        """触发下一个未取消的事件；队列为空时返回 False"""
        while self._queue:
            time, ordinal, event = heapq.heappop(self._queue)
            if event.cancelled:
                continue
            self.now = time
            self.events_fired += 1
            self._trace.update(f"{time!r}|{ordinal}|{event.label}\n".encode())
            event.action(*event.args)
            return True
        return False

    def run(self, until: Optional[float] = None) -> float:
        self._stopped = False
        queue = self._queue
        while queue and not self._stopped:
            if until is not None and queue[0][0] > until:
                self.now = until
                break
            self.step()
        return self.now

    @property
    def trace_digest(self) -> str:
        return self._trace.hexdigest()
