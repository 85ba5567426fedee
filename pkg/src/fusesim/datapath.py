"""Functional-plus-cycle model of the MAC datapath.

28 PE blocks process one input channel each.  A PE block holds three 5x3
PE arrays; an array receives one 7-row input column broadcast horizontally
and one 3-row weight column broadcast vertically, multiplies them, and sums
along the diagonal into five partial sums.  Three arrays fed with three
consecutive input columns complete a 3x3 convolution for a 5-row output
column in a single issue cycle; a 2-stage pipelined adder tree then folds
the 28 per-channel columns together and muxes in a bias or residual.

Cycle accounting is closed form: ceil(rows/5) * cols * out_channels issue
cycles per tile layer plus a flat 2-cycle accumulator drain, and 5*9*in_ch
active MACs credited per issue cycle (idle PE blocks burn the cycle).
"""

import math
from dataclasses import dataclass

import numpy as np

NUM_PE_BLOCKS = 28
ARRAYS_PER_BLOCK = 3
MACS_PER_ARRAY = 15  # 5x3
TOTAL_MACS = NUM_PE_BLOCKS * ARRAYS_PER_BLOCK * MACS_PER_ARRAY  # 1260
OUTPUT_ROWS_PER_CYCLE = 5
INPUT_ROWS_PER_CYCLE = 7  # 5 outputs + two extra rows riding along
ACCUM_DRAIN_CYCLES = 2  # 2-stage pipelined accumulator


def pe_array_cycle(input_col, weight_col) -> np.ndarray:
    """One PE array cycle: 7 inputs x 3 weights -> 5 diagonal partial sums.

    partial[j] = sum_k input[j+k] * weight[k], j = 0..4.
    """
    x = np.asarray(input_col, dtype=np.int64)
    w = np.asarray(weight_col, dtype=np.int64)
    if x.shape != (INPUT_ROWS_PER_CYCLE,):
        raise ValueError(f"expected {INPUT_ROWS_PER_CYCLE} inputs, got {x.shape}")
    if w.shape != (3,):
        raise ValueError(f"expected 3 weights, got {w.shape}")
    return np.array(
        [x[j] * w[0] + x[j + 1] * w[1] + x[j + 2] * w[2] for j in range(OUTPUT_ROWS_PER_CYCLE)],
        dtype=np.int64,
    )


def pe_block_cycle(input_cols, weight_cols) -> np.ndarray:
    """One PE block cycle: three consecutive 7-row input columns against the
    three weight columns of a 3x3 kernel, one input channel.

    input_cols: (7, 3), weight_cols: (3, 3) with [row, col] layout.
    Returns the five vertically adjacent outputs of the 3x3 convolution.
    """
    x = np.asarray(input_cols, dtype=np.int64)
    w = np.asarray(weight_cols, dtype=np.int64)
    if x.shape != (INPUT_ROWS_PER_CYCLE, 3) or w.shape != (3, 3):
        raise ValueError(f"expected (7, 3) inputs and (3, 3) weights, got {x.shape}, {w.shape}")
    out = np.zeros(OUTPUT_ROWS_PER_CYCLE, dtype=np.int64)
    for a in range(ARRAYS_PER_BLOCK):
        out += pe_array_cycle(x[:, a], w[:, a])
    return out


def accumulate(block_outputs, addend, select: str = "bias") -> np.ndarray:
    """Adder-tree stage: sum 28 per-block columns, then add bias or residual."""
    cols = np.asarray(block_outputs, dtype=np.int64)
    if cols.shape != (NUM_PE_BLOCKS, OUTPUT_ROWS_PER_CYCLE):
        raise ValueError(f"expected ({NUM_PE_BLOCKS}, {OUTPUT_ROWS_PER_CYCLE}) block outputs")
    if select not in ("bias", "residual"):
        raise ValueError(f"select must be 'bias' or 'residual', got {select!r}")
    return cols.sum(axis=0) + np.asarray(addend, dtype=np.int64)


def datapath_conv(block: np.ndarray, weights: np.ndarray, bias: np.ndarray):
    """Valid 3x3 convolution issued cycle by cycle through the PE model.

    block: (in_ch, rows+2, cols+2) pre-padded activations, in_ch <= 28.
    Returns (int32 accumulator (out_ch, rows, cols), issue_cycles).  Slow by
    construction; used to cross-check the vectorized path on small tiles.
    """
    in_ch, ph, pw = block.shape
    if in_ch > NUM_PE_BLOCKS:
        raise ValueError(f"at most {NUM_PE_BLOCKS} input channels, got {in_ch}")
    rows, cols = ph - 2, pw - 2
    out_ch = weights.shape[0]
    out = np.zeros((out_ch, rows, cols), dtype=np.int32)
    cycles = 0
    row_groups = math.ceil(rows / OUTPUT_ROWS_PER_CYCLE)
    for oc in range(out_ch):
        for g in range(row_groups):
            r0 = g * OUTPUT_ROWS_PER_CYCLE
            # 7 input rows feed 5 outputs; rows past the block bottom are zero.
            window = np.zeros((in_ch, INPUT_ROWS_PER_CYCLE, pw), dtype=np.int64)
            avail = min(INPUT_ROWS_PER_CYCLE, ph - r0)
            window[:, :avail, :] = block[:, r0 : r0 + avail, :]
            for c in range(cols):
                blocks = np.zeros((NUM_PE_BLOCKS, OUTPUT_ROWS_PER_CYCLE), dtype=np.int64)
                for ic in range(in_ch):
                    blocks[ic] = pe_block_cycle(
                        window[ic, :, c : c + 3], weights[oc, ic].astype(np.int64)
                    )
                col = accumulate(blocks, np.full(OUTPUT_ROWS_PER_CYCLE, int(bias[oc])))
                n = min(OUTPUT_ROWS_PER_CYCLE, rows - r0)
                out[oc, r0 : r0 + n, c] = col[:n].astype(np.int32)
                cycles += 1
    return out, cycles


def tile_layer_cycles(rows: int, cols: int, out_channels: int) -> int:
    """Issue cycles to convolve one tile layer: ceil(rows/5) * cols * out_ch."""
    return math.ceil(rows / OUTPUT_ROWS_PER_CYCLE) * cols * out_channels


def active_macs_per_cycle(in_channels: int) -> int:
    """MACs doing useful work each issue cycle: 5 outputs x 9 taps x channels."""
    return OUTPUT_ROWS_PER_CYCLE * 9 * in_channels


@dataclass
class CycleStats:
    issue_cycles: int = 0
    drain_cycles: int = 0
    active_mac_cycles: int = 0

    @property
    def total_cycles(self) -> int:
        return self.issue_cycles + self.drain_cycles

    @property
    def utilization(self) -> float:
        if self.total_cycles == 0:
            return 0.0
        return self.active_mac_cycles / (self.total_cycles * TOTAL_MACS)

    def add_tile_layer(self, rows: int, cols: int, out_channels: int, in_channels: int) -> None:
        if rows <= 0 or cols <= 0:
            return
        issued = tile_layer_cycles(rows, cols, out_channels)
        self.issue_cycles += issued
        self.drain_cycles += ACCUM_DRAIN_CYCLES
        self.active_mac_cycles += issued * active_macs_per_cycle(in_channels)

    def to_dict(self) -> dict:
        return {
            "issue_cycles": self.issue_cycles,
            "drain_cycles": self.drain_cycles,
            "total_cycles": self.total_cycles,
            "active_mac_cycles": self.active_mac_cycles,
            "utilization": self.utilization,
        }
