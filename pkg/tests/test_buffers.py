from collections import deque

import numpy as np
import pytest

from fusesim.buffers import (
    BufferConfig,
    OverlapQueue,
    PingPongPair,
    QueueDisciplineError,
    ResidualBuffer,
    SimulationError,
    SizingReport,
    Slab,
    overlap_front,
    overlap_pop_front,
    overlap_push,
    size_overlap,
    size_pingpong,
    size_residual,
    sizing_report,
)
from fusesim.nncore import apbn7_network
from fusesim.weightio import gen_weights

APBN_CHANNELS = (3, 28, 28, 28, 28, 28, 28, 27)


def default_cfg(rows=60, cols=8):
    return BufferConfig(rows, cols, 7, APBN_CHANNELS)


# ---------------------------------------------------------------------------
# sizing formulas (exact integers)
# ---------------------------------------------------------------------------

def test_pingpong_sizes():
    assert size_pingpong(default_cfg()) == 13_440
    assert 2 * size_pingpong(default_cfg()) == 26_880
    assert 2 * size_pingpong(default_cfg(cols=60)) == 201_600
    assert size_pingpong(default_cfg(cols=1)) == 1_680  # single-column extreme


def test_overlap_size():
    assert size_overlap(default_cfg()) == 30_240  # (7+2) * 60 * 2 * 28


def test_overlap_degenerate_depth():
    cfg = BufferConfig(60, 8, 0, APBN_CHANNELS)
    assert size_overlap(cfg) == 2 * 60 * 2 * 28


def test_overlap_linear_in_rows():
    assert size_overlap(default_cfg(rows=120)) == 2 * size_overlap(default_cfg())


def test_residual_sizes():
    assert size_residual(default_cfg()) == 2_700  # 3 * 60 * (8 + 7)
    assert size_residual(default_cfg(cols=60), tilted=False) == 10_800
    assert size_residual(default_cfg(cols=0)) == 1_260


def test_sizing_report_matches_quoted_totals():
    # with the nominal 42.54KB weight budget substituted
    tilted = sizing_report(default_cfg(), tilted=True, weight_bytes=42_540)
    assert tilted.total_bytes == 102_360
    classical = sizing_report(default_cfg(cols=60), tilted=False, weight_bytes=42_540)
    assert classical.overlap_bytes == 0
    assert classical.total_bytes == 254_940


def test_sizing_report_computed_weight_bytes():
    net = apbn7_network()
    ws = gen_weights(0, net)
    assert sum(w.size for w in ws.weights) == 42_840
    assert sum(b.size for b in ws.biases) == 195
    report = sizing_report(default_cfg(), weights=ws)
    assert report.weight_bytes == 42_840 + 4 * 195


def test_sizing_report_total_identity():
    r = SizingReport(True, 10, 20, 30, 40)
    assert r.total_bytes == 2 * 10 + 20 + 30 + 40


# ---------------------------------------------------------------------------
# overlap queue
# ---------------------------------------------------------------------------

def make_slab(tag, fm=0, rows=4, ch=2):
    data = np.full((ch, rows, 2), tag % 256, dtype=np.uint8)
    return Slab(fm, tag, data)


def test_fifo_order_tags_1_to_9():
    q = OverlapQueue(7, slab_capacity=4 * 2 * 2)
    for tag in range(1, 10):
        overlap_push(q, make_slab(tag))
    assert q.occupancy == 9
    out = [overlap_pop_front(q).col_start for _ in range(9)]
    assert out == list(range(1, 10))


def test_depth_is_nine_for_seven_layers():
    q = OverlapQueue(7, slab_capacity=16)
    assert q.depth == 9


def test_overflow_and_underflow_raise():
    q = OverlapQueue(1, slab_capacity=16)  # depth 3
    for tag in range(3):
        q.push(make_slab(tag))
    with pytest.raises(QueueDisciplineError):
        q.push(make_slab(99))
    for _ in range(3):
        q.pop_front()
    with pytest.raises(QueueDisciplineError):
        q.pop_front()
    with pytest.raises(QueueDisciplineError):
        q.front()


def test_slab_capacity_enforced():
    q = OverlapQueue(7, slab_capacity=4)
    with pytest.raises(SimulationError):
        q.push(make_slab(0, rows=4, ch=2))  # 16 bytes > 4


def test_front_relative_addressing_wraps():
    q = OverlapQueue(2, slab_capacity=64)  # depth 4
    # advance the front index past the wrap point
    for tag in range(4):
        q.push(make_slab(tag))
    for _ in range(3):
        q.pop_front()
    for tag in range(4, 7):
        q.push(make_slab(tag))
    assert [q.front(i).col_start for i in range(4)] == [3, 4, 5, 6]
    assert q.pop_front().col_start == 3


def test_random_op_sequences_match_deque_model():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        q = OverlapQueue(7, slab_capacity=64)
        model = deque()
        tag = 0
        for _ in range(200):
            do_push = rng.random() < 0.55 if 0 < len(model) < q.depth else len(model) == 0
            if do_push:
                q.push(make_slab(tag))
                model.append(tag)
                tag += 1
            else:
                assert q.front().col_start == model[0]
                assert q.pop_front().col_start == model.popleft()
            assert q.occupancy == len(model)
            assert q.peak_slabs <= q.depth
        assert [q.front(i).col_start for i in range(q.occupancy)] == list(model)


# ---------------------------------------------------------------------------
# ping-pong pair
# ---------------------------------------------------------------------------

def test_pingpong_roles_swap_and_enforce_capacity():
    pair = PingPongPair(bank_capacity=64)
    a = np.zeros((2, 4, 4), dtype=np.uint8)
    pair.write_output("t0", a)
    pair.swap()
    assert np.array_equal(pair.read_input("t0"), a)
    with pytest.raises(SimulationError):
        pair.read_input("wrong-tag")
    with pytest.raises(SimulationError):
        pair.write_output("big", np.zeros((2, 8, 8), dtype=np.uint8))


def test_pingpong_exclusive_banks_within_layer():
    pair = PingPongPair(bank_capacity=256)
    pair.write_output("in", np.ones((1, 4, 4), dtype=np.uint8))
    pair.swap()
    for layer in range(4):
        x = pair.read_input(f"{'in' if layer == 0 else layer - 1}")
        pair.write_output(f"{layer}", x + 1)
        pair.swap()
    # between swaps, all reads hit one bank and all writes the other
    reads_writes = []
    current = {"read": set(), "write": set()}
    for op, bank in pair.access_log:
        if op == "swap":
            reads_writes.append(current)
            current = {"read": set(), "write": set()}
        else:
            current[op].add(bank)
    for seg in reads_writes:
        assert not (seg["read"] & seg["write"])
    assert pair.peak_bank_bytes == 16


# ---------------------------------------------------------------------------
# residual buffer
# ---------------------------------------------------------------------------

def test_residual_window_slides_and_reads_back():
    buf = ResidualBuffer(window_cols=5, capacity=3 * 4 * 5)
    cols = {}
    for start in range(0, 12, 3):
        data = np.full((3, 4, 3), start, dtype=np.uint8)
        buf.append(start, data)
        for i in range(3):
            cols[start + i] = start
    got = buf.read(10, 12)
    assert got.shape == (3, 4, 2)
    assert int(got[0, 0, 0]) == cols[10]
    with pytest.raises(SimulationError):
        buf.read(5, 7)  # evicted (only the last 5 columns remain)


def test_residual_capacity_enforced():
    buf = ResidualBuffer(window_cols=10, capacity=8)
    with pytest.raises(SimulationError):
        buf.append(0, np.zeros((3, 4, 3), dtype=np.uint8))
