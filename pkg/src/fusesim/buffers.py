"""On-chip memory models: ping-pong pair, overlap queue, residual buffer.

These are byte-accounting models, not timing models.  Each one stores the
actual tile data (so the fused engine genuinely round-trips through them)
and enforces its sizing formula as a hard capacity, which is what turns
the buffer-sufficiency claim into a continuously checked invariant.

Sizes, one byte per element:
    ping-pong bank   R * C * max(Ch)
    overlap queue    (L + 2) * R * 2 * max(Ch)
    residual buffer  Ch0 * R * (C + L)        (classical tiles drop the +L)

Note the queue depth: the steady state holds one slab per layer, and the
push-before-pop handoff during a layer adds two more in flight, hence L+2.
"""

from dataclasses import dataclass

import numpy as np

from .tiling import SLAB_COLS

OVERLAP_EXTRA_SLABS = 2  # in-flight slack on top of the L steady-state slabs


class SimulationError(RuntimeError):
    """A modeled hardware invariant broke; the run is invalid."""


class QueueDisciplineError(SimulationError):
    pass


@dataclass(frozen=True)
class BufferConfig:
    tile_rows: int
    tile_cols: int
    num_layers: int
    channel_counts: tuple  # input channels first, then each layer's output

    def __post_init__(self):
        object.__setattr__(self, "channel_counts", tuple(self.channel_counts))
        if len(self.channel_counts) < 1:
            raise ValueError("channel_counts must include the input layer")

    @property
    def max_channels(self) -> int:
        return max(self.channel_counts)

    @property
    def input_channels(self) -> int:
        return self.channel_counts[0]


def size_pingpong(cfg: BufferConfig) -> int:
    """Bytes per ping-pong bank: R * C * max(Ch)."""
    return cfg.tile_rows * cfg.tile_cols * cfg.max_channels


def size_overlap(cfg: BufferConfig) -> int:
    """Bytes for the overlap queue: (L + 2) slabs of R * 2 * max(Ch)."""
    slabs = cfg.num_layers + OVERLAP_EXTRA_SLABS
    return slabs * cfg.tile_rows * SLAB_COLS * cfg.max_channels


def size_residual(cfg: BufferConfig, tilted: bool = True) -> int:
    """Bytes for the anchor columns: Ch0 * R * (C + L); untilted tiles need
    only their own C columns."""
    lag = cfg.num_layers if tilted else 0
    return cfg.input_channels * cfg.tile_rows * (cfg.tile_cols + lag)


@dataclass(frozen=True)
class SizingReport:
    tilted: bool
    pingpong_bytes: int  # one bank
    overlap_bytes: int
    residual_bytes: int
    weight_bytes: int

    @property
    def pingpong_pair_bytes(self) -> int:
        return 2 * self.pingpong_bytes

    @property
    def total_bytes(self) -> int:
        return self.pingpong_pair_bytes + self.overlap_bytes + self.residual_bytes + self.weight_bytes

    def to_dict(self) -> dict:
        return {
            "tilted": self.tilted,
            "pingpong_bytes": self.pingpong_bytes,
            "pingpong_pair_bytes": self.pingpong_pair_bytes,
            "overlap_bytes": self.overlap_bytes,
            "residual_bytes": self.residual_bytes,
            "weight_bytes": self.weight_bytes,
            "total_bytes": self.total_bytes,
        }


def sizing_report(cfg: BufferConfig, weights=None, tilted: bool = True, weight_bytes=None) -> SizingReport:
    """Sizing summary for one schedule.

    weight_bytes overrides the shape-derived payload (the design's nominal
    weight budget uses an accounting the shapes alone don't reproduce, so
    both views are useful).
    """
    if weight_bytes is None:
        weight_bytes = weights.payload_bytes() if weights is not None else 0
    return SizingReport(
        tilted=tilted,
        pingpong_bytes=size_pingpong(cfg),
        overlap_bytes=size_overlap(cfg) if tilted else 0,
        residual_bytes=size_residual(cfg, tilted=tilted),
        weight_bytes=weight_bytes,
    )


# ---------------------------------------------------------------------------
# Ping-pong buffer pair
# ---------------------------------------------------------------------------

class _Bank:
    def __init__(self, capacity: int, name: str):
        self.capacity = capacity
        self.name = name
        self.tag = None
        self.data = None
        self.peak_bytes = 0

    @property
    def occupied_bytes(self) -> int:
        return 0 if self.data is None else self.data.nbytes

    def store(self, tag, data: np.ndarray) -> None:
        if data.nbytes > self.capacity:
            raise SimulationError(
                f"bank {self.name}: {data.nbytes} B exceeds capacity {self.capacity} B"
            )
        self.tag = tag
        self.data = data
        self.peak_bytes = max(self.peak_bytes, data.nbytes)

    def load(self, tag) -> np.ndarray:
        if self.tag != tag:
            raise SimulationError(f"bank {self.name} holds {self.tag}, expected {tag}")
        return self.data


class PingPongPair:
    """Two banks alternating input/output roles between consecutive layers.

    Within one layer, reads come only from the input bank and writes go only
    to the output bank; swap() flips the roles exactly once per layer.
    """

    def __init__(self, bank_capacity: int):
        self._banks = (_Bank(bank_capacity, "A"), _Bank(bank_capacity, "B"))
        self._out = 0  # index of the current output bank
        self.access_log = []

    @property
    def bank_capacity(self) -> int:
        return self._banks[0].capacity

    @property
    def input_bank(self) -> str:
        return self._banks[1 - self._out].name

    def write_output(self, tag, data: np.ndarray) -> None:
        bank = self._banks[self._out]
        bank.store(tag, np.ascontiguousarray(data))
        self.access_log.append(("write", bank.name))

    def read_input(self, tag) -> np.ndarray:
        bank = self._banks[1 - self._out]
        self.access_log.append(("read", bank.name))
        return bank.load(tag)

    def swap(self) -> None:
        self._out = 1 - self._out
        self.access_log.append(("swap", None))

    def reset(self) -> None:
        for b in self._banks:
            b.tag = None
            b.data = None

    @property
    def peak_bank_bytes(self) -> int:
        return max(b.peak_bytes for b in self._banks)


# ---------------------------------------------------------------------------
# Overlap queue
# ---------------------------------------------------------------------------

@dataclass
class Slab:
    """The last two columns of one just-computed feature map."""

    feature_map: int
    col_start: int
    data: np.ndarray  # (channels, rows, <=2 columns) uint8

    @property
    def cols(self) -> tuple:
        return tuple(range(self.col_start, self.col_start + self.data.shape[2]))


class OverlapQueue:
    """FIFO of per-layer boundary slabs with queue-style ring addressing.

    The slot actually read or written is always computed from the stored
    front index modulo the depth, mirroring the address generation of a
    hardware queue memory.
    """

    def __init__(self, num_layers: int, slab_capacity: int):
        self.depth = num_layers + OVERLAP_EXTRA_SLABS
        self.slab_capacity = slab_capacity
        self._slots = [None] * self.depth
        self._front = 0
        self._count = 0
        self.pushes = 0
        self.pops = 0
        self.peak_slabs = 0
        self.peak_bytes = 0

    @property
    def occupancy(self) -> int:
        return self._count

    @property
    def occupied_bytes(self) -> int:
        return sum(s.data.nbytes for s in self._slots if s is not None)

    def push(self, slab: Slab) -> None:
        if self._count >= self.depth:
            raise QueueDisciplineError(f"overlap queue overflow (depth {self.depth})")
        if slab.data.nbytes > self.slab_capacity:
            raise SimulationError(
                f"slab of {slab.data.nbytes} B exceeds slab capacity {self.slab_capacity} B"
            )
        self._slots[(self._front + self._count) % self.depth] = slab
        self._count += 1
        self.pushes += 1
        self.peak_slabs = max(self.peak_slabs, self._count)
        self.peak_bytes = max(self.peak_bytes, self.occupied_bytes)

    def front(self, relative_layer: int = 0) -> Slab:
        if relative_layer >= self._count:
            raise QueueDisciplineError(
                f"front({relative_layer}) with only {self._count} slabs queued"
            )
        return self._slots[(self._front + relative_layer) % self.depth]

    def pop_front(self) -> Slab:
        if self._count == 0:
            raise QueueDisciplineError("overlap queue underflow")
        slab = self._slots[self._front]
        self._slots[self._front] = None
        self._front = (self._front + 1) % self.depth
        self._count -= 1
        self.pops += 1
        return slab

    def clear(self) -> None:
        self._slots = [None] * self.depth
        self._count = 0


def overlap_push(q: OverlapQueue, slab: Slab) -> None:
    q.push(slab)


def overlap_front(q: OverlapQueue, relative_layer: int = 0) -> Slab:
    return q.front(relative_layer)


def overlap_pop_front(q: OverlapQueue) -> Slab:
    return q.pop_front()


# ---------------------------------------------------------------------------
# Residual buffer
# ---------------------------------------------------------------------------

class ResidualBuffer:
    """Sliding window of anchor columns for the final layer's residual add.

    Columns stream in with each tile load; the tilt means the final layer
    reads columns up to L behind the newest load, so the window keeps the
    most recent C+L columns.
    """

    def __init__(self, window_cols: int, capacity: int):
        self.window_cols = window_cols
        self.capacity = capacity
        self._cols = {}
        self.peak_bytes = 0

    @property
    def occupied_bytes(self) -> int:
        return sum(a.nbytes for a in self._cols.values())

    def append(self, col_start: int, data: np.ndarray) -> None:
        """Store (channels, rows, n) anchor columns starting at col_start."""
        for i in range(data.shape[2]):
            self._cols[col_start + i] = np.ascontiguousarray(data[:, :, i])
        if self._cols:
            newest = max(self._cols)
            for c in [c for c in self._cols if c <= newest - self.window_cols]:
                del self._cols[c]
        if self.occupied_bytes > self.capacity:
            raise SimulationError(
                f"residual buffer {self.occupied_bytes} B exceeds capacity {self.capacity} B"
            )
        self.peak_bytes = max(self.peak_bytes, self.occupied_bytes)

    def read(self, col_start: int, col_stop: int) -> np.ndarray:
        try:
            cols = [self._cols[c] for c in range(col_start, col_stop)]
        except KeyError as e:
            raise SimulationError(f"residual column {e} not resident") from None
        return np.stack(cols, axis=2)

    def clear(self) -> None:
        self._cols = {}
