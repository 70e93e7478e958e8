"""
Camera-driven synchronization of N radar sources.

The camera (main) thread opens a tick and broadcasts a snapshot request to
every radar thread. Radar threads answer with ``submit_snapshot``; the camera
thread then ``assemble``s the tick into a ``FusedFrame``, waiting at most one
timeout for late radars, and publishes it into a bounded output queue that a
consumer drains with ``next_frame``.

All time reads go through an injectable ``Clock`` so tests can run the hub on
a ``VirtualClock`` without sleeping.
"""

import logging
import queue
import threading
import time
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Deque, Dict, Iterable, List, Optional, Sequence, Tuple

from omnifuse.calibration import RadarDetection
from omnifuse.errors import (
    InputError,
    LifecycleError,
    RegistrationError,
    StalledConsumerError,
)

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 0.050
DEFAULT_QUEUE_CAPACITY = 8


class Backpressure(str, Enum):
    BLOCK = "block"
    DROP_OLDEST = "drop_oldest"


class AssemblyStatus(str, Enum):
    COMPLETE = "complete"
    PARTIAL = "partial"


class Clock(ABC):
    @abstractmethod
    def now(self) -> float:
        """Seconds on a monotonic time base."""

    @abstractmethod
    def wait(self, condition: threading.Condition, timeout: float) -> None:
        """Wait on ``condition`` (lock held) for at most ``timeout`` seconds."""


class MonotonicClock(Clock):
    def now(self) -> float:
        return time.monotonic()

    def wait(self, condition: threading.Condition, timeout: float) -> None:
        condition.wait(timeout)


class VirtualClock(Clock):
    """
    Manually advanced clock. ``wait`` never blocks: it advances time by the
    full timeout, as if nothing arrived meanwhile.
    """

    def __init__(self, start: float = 0.0):
        self._now = start
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise InputError("cannot move a clock backwards")
        with self._lock:
            self._now += seconds

    def wait(self, condition: threading.Condition, timeout: float) -> None:
        self.advance(max(0.0, timeout))


@dataclass(frozen=True)
class SnapshotRequest:
    tick: int
    issued_at: float


@dataclass(frozen=True)
class RadarSnapshot:
    radar_id: int
    tick: int
    timestamp: Optional[float]
    detections: Tuple[RadarDetection, ...] = ()


@dataclass(frozen=True)
class FusedFrame:
    tick: int
    camera_payload: Any
    camera_timestamp: float
    radar_snapshots: Tuple[RadarSnapshot, ...]
    status: AssemblyStatus = AssemblyStatus.COMPLETE
    missing: Tuple[int, ...] = ()

    @property
    def is_complete(self) -> bool:
        return self.status is AssemblyStatus.COMPLETE

    def snapshot(self, radar_id: int) -> RadarSnapshot:
        for snap in self.radar_snapshots:
            if snap.radar_id == radar_id:
                return snap
        raise RegistrationError(f"radar {radar_id} is not part of this frame")


@dataclass
class HubStats:
    ticks: int = 0
    complete_frames: int = 0
    partial_frames: int = 0
    stale_count: int = 0
    duplicate_count: int = 0
    dropped_frames: int = 0

    def to_dict(self) -> Dict[str, int]:
        return dict(self.__dict__)


@dataclass
class _OpenTick:
    tick: int
    payload: Any
    opened_at: float
    snapshots: Dict[int, RadarSnapshot] = field(default_factory=dict)


class SensorHub:
    """
    Tick-and-queue synchronizer.

    ``submit_snapshot`` may be called concurrently from the radar threads;
    ``tick`` and ``assemble`` belong to the camera thread and ``next_frame``
    to the consumer. Only one tick is open at a time.
    """

    def __init__(
        self,
        radar_ids: Iterable[int],
        queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        backpressure: Backpressure = Backpressure.BLOCK,
        clock: Optional[Clock] = None,
        publish_timeout_s: Optional[float] = None,
    ):
        self.radar_ids: Tuple[int, ...] = tuple(radar_ids)
        if len(set(self.radar_ids)) != len(self.radar_ids):
            raise InputError(f"duplicate radar ids in {self.radar_ids}")
        if queue_capacity < 1:
            raise InputError("queue_capacity must be >= 1")
        if timeout_s < 0:
            raise InputError("timeout_s must be >= 0")
        if publish_timeout_s is not None and publish_timeout_s < 0:
            raise InputError("publish_timeout_s must be >= 0")

        self.queue_capacity = queue_capacity
        self.timeout_s = timeout_s
        self.publish_timeout_s = publish_timeout_s
        self.backpressure = Backpressure(backpressure)
        self.clock = clock or MonotonicClock()
        self.stats = HubStats()

        self._lock = threading.Lock()
        self._arrived = threading.Condition(self._lock)
        self._frame_ready = threading.Condition(self._lock)
        self._space = threading.Condition(self._lock)
        self._running = True
        self._tick_counter = 0
        self._open: Optional[_OpenTick] = None
        self._out: Deque[FusedFrame] = deque()
        self._requests: Dict[int, "queue.Queue[SnapshotRequest]"] = {
            rid: queue.Queue(maxsize=queue_capacity) for rid in self.radar_ids
        }

    @property
    def radar_count(self) -> int:
        return len(self.radar_ids)

    @property
    def tick_counter(self) -> int:
        with self._lock:
            return self._tick_counter

    @property
    def running(self) -> bool:
        with self._lock:
            return self._running

    def pending_frames(self) -> int:
        with self._lock:
            return len(self._out)

    def open_payload(self, tick_id: int) -> Any:
        """Camera payload of ``tick_id`` while it is open, else None."""
        with self._lock:
            if self._open is None or self._open.tick != tick_id:
                return None
            return self._open.payload

    def requests(self, radar_id: int) -> "queue.Queue[SnapshotRequest]":
        """The request channel a radar thread listens on."""
        try:
            return self._requests[radar_id]
        except KeyError:
            raise RegistrationError(f"unknown radar id {radar_id}") from None

    def tick(self, camera_payload: Any = None) -> int:
        with self._lock:
            if not self._running:
                raise LifecycleError("hub is stopped")
            if self._open is not None:
                raise LifecycleError(f"tick {self._open.tick} has not been assembled yet")
            self._tick_counter += 1
            self._open = _OpenTick(self._tick_counter, camera_payload, self.clock.now())
            self.stats.ticks += 1
            request = SnapshotRequest(self._tick_counter, self._open.opened_at)

        for channel in self._requests.values():
            self._offer(channel, request)
        return request.tick

    @staticmethod
    def _offer(channel: "queue.Queue[SnapshotRequest]", request: SnapshotRequest) -> None:
        # an unread request is for a closed tick
        while True:
            try:
                channel.put_nowait(request)
                return
            except queue.Full:
                try:
                    channel.get_nowait()
                except queue.Empty:
                    pass

    def submit_snapshot(
        self,
        radar_id: int,
        tick_id: int,
        detections: Sequence[RadarDetection],
        timestamp: Optional[float] = None,
    ) -> bool:
        """Accept a radar snapshot for the open tick; stale or repeated ones are rejected."""
        if radar_id not in self._requests:
            raise RegistrationError(f"unknown radar id {radar_id}")
        with self._lock:
            if self._open is None or tick_id != self._open.tick:
                self.stats.stale_count += 1
                logger.debug("radar %d: stale snapshot for tick %d", radar_id, tick_id)
                return False
            if radar_id in self._open.snapshots:
                self.stats.duplicate_count += 1
                return False
            self._open.snapshots[radar_id] = RadarSnapshot(
                radar_id=radar_id,
                tick=tick_id,
                timestamp=self.clock.now() if timestamp is None else timestamp,
                detections=tuple(detections),
            )
            self._arrived.notify_all()
            return True

    def assemble(self, tick_id: int) -> FusedFrame:
        """
        Close ``tick_id`` once every radar answered or the timeout elapsed and
        publish the resulting frame.
        """
        with self._lock:
            if self._open is None or tick_id != self._open.tick:
                raise LifecycleError(f"tick {tick_id} is not open")
            current = self._open
            deadline = current.opened_at + self.timeout_s
            while len(current.snapshots) < self.radar_count:
                remaining = deadline - self.clock.now()
                if remaining <= 0:
                    break
                self.clock.wait(self._arrived, remaining)

            missing = tuple(r for r in self.radar_ids if r not in current.snapshots)
            snapshots = tuple(
                current.snapshots.get(r, RadarSnapshot(radar_id=r, tick=tick_id, timestamp=None))
                for r in self.radar_ids
            )
            frame = FusedFrame(
                tick=tick_id,
                camera_payload=current.payload,
                camera_timestamp=current.opened_at,
                radar_snapshots=snapshots,
                status=AssemblyStatus.PARTIAL if missing else AssemblyStatus.COMPLETE,
                missing=missing,
            )
            self._open = None
            if missing:
                self.stats.partial_frames += 1
                logger.warning("tick %d: partial frame, missing radars %s", tick_id, list(missing))
            else:
                self.stats.complete_frames += 1
            self._publish(frame)
        return frame

    def _publish(self, frame: FusedFrame) -> None:
        deadline = None
        if self.publish_timeout_s is not None:
            deadline = self.clock.now() + self.publish_timeout_s
        while len(self._out) >= self.queue_capacity:
            if self.backpressure is Backpressure.DROP_OLDEST or not self._running:
                self._out.popleft()
                self.stats.dropped_frames += 1
            elif deadline is None:
                self._space.wait()
            else:
                remaining = deadline - self.clock.now()
                if remaining <= 0:
                    self.stats.dropped_frames += 1
                    raise StalledConsumerError(
                        f"tick {frame.tick}: output queue stayed full for "
                        f"{self.publish_timeout_s}s"
                    )
                self.clock.wait(self._space, remaining)
        self._out.append(frame)
        self._frame_ready.notify_all()

    def next_frame(self, timeout: Optional[float] = None) -> Optional[FusedFrame]:
        """Oldest published frame, or None on timeout or once the hub is stopped and drained."""
        with self._lock:
            if not self._frame_ready.wait_for(lambda: self._out or not self._running, timeout):
                return None
            if not self._out:
                return None
            frame = self._out.popleft()
            self._space.notify_all()
            return frame

    def drain(self) -> List[FusedFrame]:
        with self._lock:
            frames = list(self._out)
            self._out.clear()
            self._space.notify_all()
            return frames

    def stop(self) -> None:
        with self._lock:
            self._running = False
            self._arrived.notify_all()
            self._frame_ready.notify_all()
            self._space.notify_all()
