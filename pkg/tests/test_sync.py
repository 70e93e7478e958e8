"""
tests/test_sync.py

Tests for the camera-driven SensorHub. Timing-dependent behaviour runs on a
VirtualClock; only the backpressure and threaded smoke tests use real threads.

Run with:
    pytest tests/test_sync.py -v
"""

import queue
import threading

import numpy as np
import pytest

from omnifuse.calibration import RadarDetection
from omnifuse.errors import InputError, LifecycleError, RegistrationError, StalledConsumerError
from omnifuse.sync import (
    AssemblyStatus,
    Backpressure,
    SensorHub,
    VirtualClock,
)

TIMEOUT = 0.05


def _hub(radar_ids=(1, 2, 3), **kwargs):
    kwargs.setdefault("clock", VirtualClock())
    kwargs.setdefault("timeout_s", TIMEOUT)
    return SensorHub(radar_ids, **kwargs)


def _dets(*xz):
    return [RadarDetection(x, z) for x, z in xz]


# --------------- tick ------------------------------------


def test_consecutive_ticks_are_monotonic():
    hub = _hub(radar_ids=())
    first = hub.tick()
    hub.assemble(first)
    second = hub.tick()
    assert second == first + 1
    assert hub.tick_counter == second


def test_zero_radars_assemble_immediately():
    clock = VirtualClock()
    hub = _hub(radar_ids=(), clock=clock)
    frame = hub.assemble(hub.tick("frame-0"))
    assert frame.is_complete
    assert frame.radar_snapshots == ()
    assert frame.camera_payload == "frame-0"
    assert clock.now() == 0.0


def test_tick_broadcasts_request_to_every_radar():
    hub = _hub()
    tick = hub.tick()
    for rid in (1, 2, 3):
        request = hub.requests(rid).get_nowait()
        assert request.tick == tick


def test_tick_on_stopped_hub_raises():
    hub = _hub()
    hub.stop()
    with pytest.raises(LifecycleError):
        hub.tick()


def test_tick_while_previous_open_raises():
    hub = _hub()
    hub.tick()
    with pytest.raises(LifecycleError):
        hub.tick()


def test_unread_requests_never_exceed_channel_capacity():
    hub = _hub(radar_ids=(1,), queue_capacity=3)
    for _ in range(10):
        hub.assemble(hub.tick())
        hub.drain()
    channel = hub.requests(1)
    assert channel.qsize() == 3
    assert [channel.get_nowait().tick for _ in range(3)] == [8, 9, 10]


def test_hub_validates_arguments():
    with pytest.raises(InputError):
        SensorHub((1, 1))
    with pytest.raises(InputError):
        SensorHub((1,), queue_capacity=0)


# --------------- submit_snapshot ------------------------------------


def test_snapshot_for_current_tick_accepted():
    hub = _hub()
    tick = hub.tick()
    assert hub.submit_snapshot(1, tick, _dets((1.0, 2.0)))


def test_stale_snapshot_rejected_and_counted():
    hub = _hub()
    tick = hub.tick()
    hub.assemble(tick)
    hub.tick()
    assert not hub.submit_snapshot(1, tick, [])
    assert hub.stats.stale_count == 1


def test_duplicate_snapshot_rejected():
    hub = _hub()
    tick = hub.tick()
    assert hub.submit_snapshot(2, tick, _dets((1.0, 1.0)))
    assert not hub.submit_snapshot(2, tick, _dets((5.0, 5.0)))
    assert hub.stats.duplicate_count == 1
    frame = hub.assemble(tick)
    assert frame.snapshot(2).detections == tuple(_dets((1.0, 1.0)))


def test_unknown_radar_raises_registration_error():
    hub = _hub()
    tick = hub.tick()
    with pytest.raises(RegistrationError):
        hub.submit_snapshot(9, tick, [])
    with pytest.raises(RegistrationError):
        hub.requests(9)


# --------------- assemble ------------------------------------


def test_all_radars_before_timeout_is_complete():
    hub = _hub()
    tick = hub.tick()
    for rid in (1, 2, 3):
        hub.submit_snapshot(rid, tick, _dets((rid, 1.0)))
    frame = hub.assemble(tick)
    assert frame.status is AssemblyStatus.COMPLETE
    assert [s.radar_id for s in frame.radar_snapshots] == [1, 2, 3]
    assert all(s.tick == tick for s in frame.radar_snapshots)


def test_silent_radar_gives_partial_after_one_timeout():
    clock = VirtualClock(start=10.0)
    hub = _hub(clock=clock)
    tick = hub.tick()
    hub.submit_snapshot(1, tick, [])
    hub.submit_snapshot(3, tick, [])
    frame = hub.assemble(tick)
    assert frame.status is AssemblyStatus.PARTIAL
    assert frame.missing == (2,)
    assert frame.snapshot(2).detections == ()
    assert frame.snapshot(2).timestamp is None
    assert clock.now() - 10.0 == pytest.approx(TIMEOUT)


def test_arrival_order_does_not_change_frame():
    frames = []
    for order in ((1, 2, 3), (3, 1, 2)):
        hub = _hub()
        tick = hub.tick("payload")
        for rid in order:
            hub.submit_snapshot(rid, tick, _dets((rid, 2.0 * rid)), timestamp=0.01 * rid)
        frames.append(hub.assemble(tick))
    assert frames[0] == frames[1]


def test_assemble_unknown_tick_raises():
    hub = _hub()
    tick = hub.tick()
    with pytest.raises(LifecycleError):
        hub.assemble(tick + 1)
    hub.assemble(tick)
    with pytest.raises(LifecycleError):
        hub.assemble(tick)


def _run_virtual(ticks, late_fraction, seed):
    """Single-threaded harness: radars answer after a random latency on a virtual clock."""
    rng = np.random.default_rng(seed)
    clock = VirtualClock()
    radar_ids = (0, 1, 2)
    hub = SensorHub(radar_ids, queue_capacity=4, timeout_s=TIMEOUT, clock=clock)
    expected_missing = []
    delivered = []
    for _ in range(ticks):
        tick = hub.tick()
        opened = clock.now()
        late = rng.random(len(radar_ids)) < late_fraction
        latency = np.where(
            late,
            rng.uniform(1.1 * TIMEOUT, 2.0 * TIMEOUT, len(radar_ids)),
            rng.uniform(0.0, 0.9 * TIMEOUT, len(radar_ids)),
        )
        on_time = [k for k in np.argsort(latency) if not late[k]]
        for k in on_time:
            request = hub.requests(radar_ids[k]).get_nowait()
            clock.advance(max(0.0, opened + latency[k] - clock.now()))
            assert hub.submit_snapshot(radar_ids[k], request.tick, _dets((float(k), 1.0)))
        frame = hub.assemble(tick)
        for k in np.flatnonzero(late):
            request = hub.requests(radar_ids[k]).get_nowait()
            assert not hub.submit_snapshot(radar_ids[k], request.tick, [])
        expected_missing.append(tuple(radar_ids[k] for k in np.flatnonzero(late)))
        delivered.append(hub.next_frame(timeout=0))
        assert delivered[-1] is frame
    return hub, delivered, expected_missing


def test_thousand_ticks_within_timeout_are_complete_and_ordered():
    hub, frames, _ = _run_virtual(1000, late_fraction=0.0, seed=0)
    assert len(frames) == 1000
    assert all(f.is_complete for f in frames)
    assert [f.tick for f in frames] == list(range(1, 1001))
    assert hub.stats.complete_frames == 1000


def test_hundred_thousand_ticks_with_late_radars():
    hub, frames, expected_missing = _run_virtual(100_000, late_fraction=0.1, seed=1)
    ticks = [f.tick for f in frames]
    assert ticks == list(range(1, 100_001))
    for frame, missing in zip(frames, expected_missing):
        assert all(s.tick == frame.tick for s in frame.radar_snapshots)
        assert frame.missing == missing
        assert (frame.status is AssemblyStatus.PARTIAL) == bool(missing)
    late_total = sum(len(m) for m in expected_missing)
    assert hub.stats.stale_count == late_total
    assert hub.stats.partial_frames == sum(1 for m in expected_missing if m)
    assert 0.08 < late_total / (3 * 100_000) < 0.12


# --------------- output queue ------------------------------------


def test_drop_oldest_bounds_queue():
    hub = _hub(radar_ids=(), queue_capacity=2, backpressure=Backpressure.DROP_OLDEST)
    for _ in range(5):
        hub.assemble(hub.tick())
    assert hub.pending_frames() == 2
    assert hub.stats.dropped_frames == 3
    assert [f.tick for f in hub.drain()] == [4, 5]


def test_block_policy_stalls_producer_until_consumer_reads():
    hub = SensorHub((), queue_capacity=2, timeout_s=TIMEOUT, backpressure=Backpressure.BLOCK)
    produced = []

    def camera():
        for _ in range(5):
            produced.append(hub.assemble(hub.tick()).tick)

    thread = threading.Thread(target=camera, daemon=True)
    thread.start()
    thread.join(timeout=0.5)
    assert thread.is_alive()
    assert hub.pending_frames() == 2

    consumed = []
    while len(consumed) < 5:
        frame = hub.next_frame(timeout=2.0)
        assert frame is not None
        consumed.append(frame.tick)
        assert hub.pending_frames() <= 2
    thread.join(timeout=2.0)
    assert not thread.is_alive()
    assert consumed == [1, 2, 3, 4, 5]
    assert produced == consumed
    assert hub.stats.dropped_frames == 0


def test_open_payload_visible_only_while_tick_is_open():
    hub = _hub()
    tick = hub.tick(camera_payload="frame-7")
    assert hub.open_payload(tick) == "frame-7"
    assert hub.open_payload(tick + 1) is None
    hub.assemble(tick)
    assert hub.open_payload(tick) is None


def test_block_policy_gives_up_after_publish_timeout():
    clock = VirtualClock()
    hub = _hub(radar_ids=(), queue_capacity=1, clock=clock, publish_timeout_s=0.2)
    hub.assemble(hub.tick())
    with pytest.raises(StalledConsumerError, match="tick 2"):
        hub.assemble(hub.tick())
    assert clock.now() == pytest.approx(0.2)
    assert hub.stats.dropped_frames == 1
    assert [f.tick for f in hub.drain()] == [1]
    # the failed tick is closed; the camera can keep going
    hub.assemble(hub.tick())
    assert hub.pending_frames() == 1


def test_publish_timeout_must_be_non_negative():
    with pytest.raises(InputError):
        _hub(publish_timeout_s=-1.0)


def test_next_frame_returns_none_after_stop():
    hub = _hub(radar_ids=())
    hub.assemble(hub.tick())
    hub.stop()
    assert hub.next_frame(timeout=0.1).tick == 1
    assert hub.next_frame(timeout=0.1) is None


def test_threaded_radars_produce_complete_frames():
    radar_ids = (0, 1, 2)
    hub = SensorHub(radar_ids, timeout_s=2.0)
    done = threading.Event()

    def radar(rid):
        channel = hub.requests(rid)
        while not done.is_set():
            try:
                request = channel.get(timeout=0.05)
            except queue.Empty:
                continue
            hub.submit_snapshot(rid, request.tick, _dets((float(rid), 3.0)))

    threads = [threading.Thread(target=radar, args=(rid,), daemon=True) for rid in radar_ids]
    for t in threads:
        t.start()
    try:
        frames = []
        for _ in range(50):
            frames.append(hub.assemble(hub.tick()))
            hub.next_frame(timeout=0)
    finally:
        done.set()
        for t in threads:
            t.join(timeout=1.0)
    assert all(f.is_complete for f in frames)
    assert [f.tick for f in frames] == list(range(1, 51))
    for frame in frames:
        for snap in frame.radar_snapshots:
            assert snap.tick == frame.tick
            assert snap.detections == tuple(_dets((float(snap.radar_id), 3.0)))
