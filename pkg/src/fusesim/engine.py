"""Schedule execution, DRAM metering, and fused-vs-reference comparison.

Three schedules run the same network bit-exactly where their geometry
allows it:

* layer-by-layer: the whole feature map per layer, every intermediate map
  spilled to DRAM and re-read (the no-fusion baseline);
* classical fusion: square block-convolution tiles, zero-padded on all
  four sides at every layer (cheap, loses data along every tile edge);
* tilted fusion: strips of R rows swept by C-column tiles whose per-layer
  footprint shifts one column left, with the overlap queue carrying each
  layer's last two columns to the next tile.  Left/right boundaries are
  exact; only rows near internal strip cuts may deviate.

DRAM counting is byte-exact with no burst rounding.  Weights are read once
per run and live in SRAM; the GB/s figure scales only the per-frame image
traffic (1 GB = 1e9 bytes).
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .buffers import (
    BufferConfig,
    OverlapQueue,
    PingPongPair,
    ResidualBuffer,
    SimulationError,
    SizingReport,
    Slab,
    size_pingpong,
    size_residual,
    sizing_report,
)
from .datapath import CycleStats
from .nncore import NetworkSpec, PlanarTensor, WeightSet
from .tiling import (
    SLAB_COLS,
    FusionConfig,
    TileRegion,
    lost_row_mask,
    plan_classical,
    plan_strip,
    scale_row_mask,
)

GB = 1e9  # decimal GB, the usual convention for DRAM bandwidth figures


# ---------------------------------------------------------------------------
# Schedule modes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerByLayer:
    name = "layer_by_layer"


@dataclass(frozen=True)
class ClassicalFusion:
    tile: int = 60
    name = "classical"


@dataclass(frozen=True)
class TiltedFusion:
    tile_rows: int = 60
    tile_cols: int = 8
    name = "tilted"


# ---------------------------------------------------------------------------
# Metering
# ---------------------------------------------------------------------------

@dataclass
class DramTraffic:
    input_bytes: int = 0
    weight_bytes: int = 0
    intermediate_read_bytes: int = 0
    intermediate_write_bytes: int = 0
    output_bytes: int = 0

    @property
    def bytes_read(self) -> int:
        return self.input_bytes + self.weight_bytes + self.intermediate_read_bytes

    @property
    def bytes_written(self) -> int:
        return self.intermediate_write_bytes + self.output_bytes

    @property
    def image_bytes_per_frame(self) -> int:
        """Per-frame traffic; excludes the one-time weight load."""
        return self.bytes_read + self.bytes_written - self.weight_bytes

    def gb_per_s(self, fps: float) -> float:
        return self.image_bytes_per_frame * fps / GB

    def to_dict(self, fps: float) -> dict:
        return {
            "input_bytes": self.input_bytes,
            "weight_bytes": self.weight_bytes,
            "intermediate_read_bytes": self.intermediate_read_bytes,
            "intermediate_write_bytes": self.intermediate_write_bytes,
            "output_bytes": self.output_bytes,
            "bytes_read": self.bytes_read,
            "bytes_written": self.bytes_written,
            "image_bytes_per_frame": self.image_bytes_per_frame,
            "gb_per_s": self.gb_per_s(fps),
        }


@dataclass
class OccupancyStats:
    peak_pingpong_bank_bytes: int = 0
    peak_overlap_slabs: int = 0
    peak_overlap_bytes: int = 0
    peak_residual_bytes: int = 0
    limit_pingpong_bank_bytes: int = 0
    limit_overlap_slabs: int = 0
    limit_overlap_bytes: int = 0
    limit_residual_bytes: int = 0

    @property
    def within_bounds(self) -> bool:
        return (
            self.peak_pingpong_bank_bytes <= self.limit_pingpong_bank_bytes
            and self.peak_overlap_slabs <= self.limit_overlap_slabs
            and self.peak_overlap_bytes <= self.limit_overlap_bytes
            and self.peak_residual_bytes <= self.limit_residual_bytes
        )

    def to_dict(self) -> dict:
        return {
            "peak_pingpong_bank_bytes": self.peak_pingpong_bank_bytes,
            "peak_overlap_slabs": self.peak_overlap_slabs,
            "peak_overlap_bytes": self.peak_overlap_bytes,
            "peak_residual_bytes": self.peak_residual_bytes,
            "limit_pingpong_bank_bytes": self.limit_pingpong_bank_bytes,
            "limit_overlap_slabs": self.limit_overlap_slabs,
            "limit_overlap_bytes": self.limit_overlap_bytes,
            "limit_residual_bytes": self.limit_residual_bytes,
            "within_bounds": self.within_bounds,
        }


@dataclass
class EquivalenceStats:
    exact_rows: int
    deviating_rows: tuple
    max_abs_deviation: int
    psnr_db: float
    mask_rows: tuple = ()
    confined_to_mask: bool = True

    def to_dict(self) -> dict:
        return {
            "exact_rows": self.exact_rows,
            "deviating_rows": list(self.deviating_rows),
            "deviating_row_count": len(self.deviating_rows),
            "max_abs_deviation": self.max_abs_deviation,
            "psnr_db": None if math.isinf(self.psnr_db) else self.psnr_db,
            "mask_rows": list(self.mask_rows),
            "confined_to_mask": self.confined_to_mask,
        }


@dataclass
class SimReport:
    mode: str
    config: dict
    fps: float
    dram: DramTraffic
    cycles: CycleStats
    sizing: SizingReport = None
    occupancy: OccupancyStats = None
    equivalence: EquivalenceStats = None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "config": self.config,
            "fps": self.fps,
            "dram": self.dram.to_dict(self.fps),
            "cycles": self.cycles.to_dict(),
            "sizing": self.sizing.to_dict() if self.sizing else None,
            "occupancy": self.occupancy.to_dict() if self.occupancy else None,
            "equivalence": self.equivalence.to_dict() if self.equivalence else None,
        }

    def to_flat_dict(self) -> dict:
        flat = {}

        def walk(prefix, value):
            if isinstance(value, dict):
                for k, v in value.items():
                    walk(f"{prefix}.{k}" if prefix else k, v)
            elif isinstance(value, (list, tuple)):
                flat[prefix] = " ".join(str(v) for v in value)
            else:
                flat[prefix] = value

        walk("", self.to_dict())
        return flat


# ---------------------------------------------------------------------------
# Layer-by-layer baseline
# ---------------------------------------------------------------------------

def _base_config(mode, net: NetworkSpec, image: PlanarTensor) -> dict:
    cfg = {
        "mode": mode.name,
        "image_height": image.height,
        "image_width": image.width,
        "upscale_factor": net.upscale_factor,
        "num_layers": net.num_layers,
        "requant_shifts": [q.requant_shift for q in net.quant],
    }
    if isinstance(mode, ClassicalFusion):
        cfg["tile"] = mode.tile
    elif isinstance(mode, TiltedFusion):
        cfg["tile_rows"] = mode.tile_rows
        cfg["tile_cols"] = mode.tile_cols
    return cfg


def run_layer_by_layer(net, weights, image, fps=60.0):
    """The metered no-fusion baseline.

    Bit-identical to nncore.reference_forward (it is the same computation);
    DRAM sees the input once, every intermediate map written and re-read,
    and the HR output written once.  The final layer consumes its conv
    output and the resident anchor directly, so nothing extra is read.
    """
    weights.check_matches(net)
    dram = DramTraffic(weight_bytes=weights.payload_bytes())
    cycles = CycleStats()
    dram.input_bytes += image.data.nbytes
    x = image
    last = net.num_layers - 1
    for i, (spec, q) in enumerate(zip(net.layers, net.quant)):
        if i > 0:
            dram.intermediate_read_bytes += x.data.nbytes
        acc = nncore.conv3x3(x, weights.weights[i], weights.biases[i])
        cycles.add_tile_layer(image.height, image.width, spec.out_channels, spec.in_channels)
        if spec.has_residual_add:
            acc = nncore.anchor_residual_add(acc, image, net.upscale_factor, q.requant_shift)
        x = nncore.requantize(acc, q, relu=spec.has_relu)
        if i < last:
            dram.intermediate_write_bytes += x.data.nbytes
    hr = nncore.depth_to_space(x, net.upscale_factor)
    dram.output_bytes += hr.data.nbytes
    report = SimReport(
        mode="layer_by_layer",
        config=_base_config(LayerByLayer(), net, image),
        fps=fps,
        dram=dram,
        cycles=cycles,
        sizing=None,
        occupancy=None,
    )
    return hr, report


# ---------------------------------------------------------------------------
# Tilted fusion
# ---------------------------------------------------------------------------

def _boundary_slab(carry: dict, fm: int, region: TileRegion, data: np.ndarray) -> Slab:
    """Slab of the most recent <=2 columns of feature map fm.

    This is what the hardware writes into the queue's back layer; for
    single-column tiles the slab spans the previous tile's column too, so
    a small per-strip carry keeps each map's latest columns.  An empty
    region pushes an empty slab (nothing to its right ever needs it).
    """
    if region.width == 0:
        return Slab(fm, region.cols[0], data[:, :, :0])
    keep = min(SLAB_COLS, region.width)
    tail_start = region.cols[1] - keep
    tail = data[:, :, region.width - keep :]
    prev = carry.get(fm)
    if keep < SLAB_COLS and prev is not None:
        take = min(SLAB_COLS - keep, prev[1].shape[2])
        tail = np.concatenate([prev[1][:, :, prev[1].shape[2] - take :], tail], axis=2)
        tail_start -= take
    carry[fm] = (tail_start, np.ascontiguousarray(tail))
    return Slab(fm, tail_start, carry[fm][1])


def _assemble_stage_input(
    out_region: TileRegion,
    own_data: np.ndarray,
    own_col_start: int,
    halo: Slab,
    halo_cols: tuple,
    channels: int,
) -> np.ndarray:
    """Zero-initialized (ch, rows+2, w+2) stage input: own tile columns in
    place, queue halo columns on the left, zeros anywhere outside the image
    or outside the strip (the top/bottom pad rows)."""
    rows = out_region.height
    w = out_region.width
    span0 = out_region.cols[0] - 1  # image column of block[:, :, 0]
    block = np.zeros((channels, rows + 2, w + 2), dtype=np.uint8)
    if own_data.shape[2]:
        lo = max(own_col_start, span0)
        hi = min(own_col_start + own_data.shape[2], span0 + w + 2)
        if hi > lo:
            block[:, 1 : rows + 1, lo - span0 : hi - span0] = own_data[
                :, :, lo - own_col_start : hi - own_col_start
            ]
    if halo_cols:
        if halo is None:
            raise SimulationError(f"halo columns {halo_cols} needed but queue gave nothing")
        available = halo.cols
        for col in halo_cols:
            if col not in available:
                raise SimulationError(
                    f"halo column {col} not in front slab columns {available}"
                )
            block[:, 1 : rows + 1, col - span0] = halo.data[:, :, col - halo.col_start]
    return block


def run_tilted(net, weights, image, mode: TiltedFusion = TiltedFusion(), fps=60.0, tile_trace=None):
    """Execute the tilted-fusion schedule through the modeled buffers.

    Raises SimulationError if any modeled memory would overflow its sizing
    formula or the overlap queue breaks FIFO discipline.
    """
    weights.check_matches(net)
    if image.channels != net.layers[0].in_channels:
        raise ValueError("image channels do not match the network input")
    cfg = FusionConfig(
        image_height=image.height,
        image_width=image.width,
        num_layers=net.num_layers,
        tile_rows=mode.tile_rows,
        tile_cols=mode.tile_cols,
    )
    depth = net.num_layers
    chans = net.channel_counts
    bcfg = BufferConfig(cfg.tile_rows, cfg.tile_cols, depth, chans)
    sizing = sizing_report(bcfg, weights, tilted=True)
    banks = PingPongPair(size_pingpong(bcfg))
    queue = OverlapQueue(depth, cfg.tile_rows * SLAB_COLS * bcfg.max_channels)
    ring = ResidualBuffer(cfg.tile_cols + depth, size_residual(bcfg, tilted=True))
    dram = DramTraffic(weight_bytes=weights.payload_bytes())
    cycles = CycleStats()
    s = net.upscale_factor
    if chans[depth] % (s * s):
        raise ValueError("final channel count is not divisible by the upscale factor squared")
    hr = np.zeros(
        (chans[depth] // (s * s), image.height * s, image.width * s), dtype=np.uint8
    )
    peak_slabs = peak_qbytes = peak_ring = 0

    for strip_index in range(cfg.num_strips):
        queue.clear()
        ring.clear()
        banks.reset()
        carry = {}
        plan = plan_strip(strip_index, cfg)
        r0, r1 = plan.rows
        rows = r1 - r0
        for tile in plan.tiles:
            first = tile.index == 0
            occ_before, pushes0, pops0 = queue.occupancy, queue.pushes, queue.pops

            # Feature map 0: DRAM load into a bank plus the anchor window.
            load = tile.regions[0]
            if load.is_empty:
                data = np.zeros((chans[0], rows, 0), dtype=np.uint8)
            else:
                data = np.ascontiguousarray(
                    image.data[:, r0:r1, load.cols[0] : load.cols[1]]
                )
                dram.input_bytes += data.nbytes
                ring.append(load.cols[0], data)
            banks.write_output(("fm", 0, tile.index), data)
            queue.push(_boundary_slab(carry, 0, load, data))
            banks.swap()

            for layer in range(1, depth + 1):
                spec, q = net.layers[layer - 1], net.quant[layer - 1]
                out_region = tile.regions[layer]
                halo_cols = tile.halo_cols[layer - 1]
                front = None
                if not first:
                    front = queue.front()
                    if front.feature_map != layer - 1:
                        raise SimulationError(
                            f"front slab is feature map {front.feature_map}, "
                            f"expected {layer - 1}"
                        )
                own = banks.read_input(("fm", layer - 1, tile.index))
                own_start = tile.regions[layer - 1].cols[0]
                if out_region.is_empty:
                    out_u8 = np.zeros((spec.out_channels, rows, 0), dtype=np.uint8)
                else:
                    block = _assemble_stage_input(
                        out_region, own, own_start, front, halo_cols, chans[layer - 1]
                    )
                    acc = nncore.conv3x3_valid(
                        block, weights.weights[layer - 1], weights.biases[layer - 1]
                    )
                    if spec.has_residual_add:
                        anchor = ring.read(out_region.cols[0], out_region.cols[1])
                        acc = nncore.residual_add_raw(acc, anchor, s, q.requant_shift)
                    out_u8 = nncore.requantize_raw(acc, q.requant_shift, spec.has_relu)
                    cycles.add_tile_layer(
                        rows, out_region.width, spec.out_channels, spec.in_channels
                    )
                if layer < depth:
                    banks.write_output(("fm", layer, tile.index), out_u8)
                    queue.push(_boundary_slab(carry, layer, out_region, out_u8))
                elif not out_region.is_empty:
                    hr_block = nncore.depth_to_space_raw(out_u8, s)
                    hr[
                        :, r0 * s : r1 * s, out_region.cols[0] * s : out_region.cols[1] * s
                    ] = hr_block
                    dram.output_bytes += hr_block.nbytes
                if not first:
                    queue.pop_front()
                banks.swap()

            if tile_trace is not None:
                tile_trace.append(
                    {
                        "strip": strip_index,
                        "tile": tile.index,
                        "occupancy_before": occ_before,
                        "occupancy_after": queue.occupancy,
                        "pushes": queue.pushes - pushes0,
                        "pops": queue.pops - pops0,
                        "peak_slabs": queue.peak_slabs,
                    }
                )
        peak_slabs = max(peak_slabs, queue.peak_slabs)
        peak_qbytes = max(peak_qbytes, queue.peak_bytes)
        peak_ring = max(peak_ring, ring.peak_bytes)

    occupancy = OccupancyStats(
        peak_pingpong_bank_bytes=banks.peak_bank_bytes,
        peak_overlap_slabs=peak_slabs,
        peak_overlap_bytes=peak_qbytes,
        peak_residual_bytes=peak_ring,
        limit_pingpong_bank_bytes=sizing.pingpong_bytes,
        limit_overlap_slabs=queue.depth,
        limit_overlap_bytes=sizing.overlap_bytes,
        limit_residual_bytes=sizing.residual_bytes,
    )
    if not occupancy.within_bounds:
        raise SimulationError(f"buffer occupancy exceeded its sizing: {occupancy.to_dict()}")
    report = SimReport(
        mode="tilted",
        config=_base_config(mode, net, image),
        fps=fps,
        dram=dram,
        cycles=cycles,
        sizing=sizing,
        occupancy=occupancy,
    )
    return PlanarTensor(hr), report


# ---------------------------------------------------------------------------
# Classical block-tile fusion
# ---------------------------------------------------------------------------

def run_classical(net, weights, image, mode: ClassicalFusion = ClassicalFusion(), fps=60.0):
    """Square block-convolution tiles: every layer of a tile is convolved
    with zero padding on all four sides, so interior tile edges deviate."""
    weights.check_matches(net)
    if image.channels != net.layers[0].in_channels:
        raise ValueError("image channels do not match the network input")
    depth = net.num_layers
    chans = net.channel_counts
    bcfg = BufferConfig(mode.tile, mode.tile, depth, chans)
    sizing = sizing_report(bcfg, weights, tilted=False)
    banks = PingPongPair(size_pingpong(bcfg))
    ring = ResidualBuffer(mode.tile, size_residual(bcfg, tilted=False))
    dram = DramTraffic(weight_bytes=weights.payload_bytes())
    cycles = CycleStats()
    s = net.upscale_factor
    if chans[depth] % (s * s):
        raise ValueError("final channel count is not divisible by the upscale factor squared")
    hr = np.zeros(
        (chans[depth] // (s * s), image.height * s, image.width * s), dtype=np.uint8
    )
    peak_ring = 0

    for tile in plan_classical(image.height, image.width, mode.tile):
        (r0, r1), (c0, c1) = tile.rows, tile.cols
        banks.reset()
        ring.clear()
        data = np.ascontiguousarray(image.data[:, r0:r1, c0:c1])
        dram.input_bytes += data.nbytes
        ring.append(c0, data)
        banks.write_output(("fm", 0), data)
        banks.swap()
        for layer in range(1, depth + 1):
            spec, q = net.layers[layer - 1], net.quant[layer - 1]
            x = banks.read_input(("fm", layer - 1))
            acc = nncore.conv3x3_valid(
                np.pad(x, ((0, 0), (1, 1), (1, 1))),
                weights.weights[layer - 1],
                weights.biases[layer - 1],
            )
            if spec.has_residual_add:
                acc = nncore.residual_add_raw(acc, ring.read(c0, c1), s, q.requant_shift)
            out_u8 = nncore.requantize_raw(acc, q.requant_shift, spec.has_relu)
            cycles.add_tile_layer(r1 - r0, c1 - c0, spec.out_channels, spec.in_channels)
            if layer < depth:
                banks.write_output(("fm", layer), out_u8)
                banks.swap()
            else:
                hr_block = nncore.depth_to_space_raw(out_u8, s)
                hr[:, r0 * s : r1 * s, c0 * s : c1 * s] = hr_block
                dram.output_bytes += hr_block.nbytes
        peak_ring = max(peak_ring, ring.peak_bytes)

    occupancy = OccupancyStats(
        peak_pingpong_bank_bytes=banks.peak_bank_bytes,
        peak_overlap_slabs=0,
        peak_overlap_bytes=0,
        peak_residual_bytes=peak_ring,
        limit_pingpong_bank_bytes=sizing.pingpong_bytes,
        limit_overlap_slabs=0,
        limit_overlap_bytes=0,
        limit_residual_bytes=sizing.residual_bytes,
    )
    if not occupancy.within_bounds:
        raise SimulationError(f"buffer occupancy exceeded its sizing: {occupancy.to_dict()}")
    report = SimReport(
        mode="classical",
        config=_base_config(mode, net, image),
        fps=fps,
        dram=dram,
        cycles=cycles,
        sizing=sizing,
        occupancy=occupancy,
    )
    return PlanarTensor(hr), report


# ---------------------------------------------------------------------------
# Front door
# ---------------------------------------------------------------------------

def run(mode, net: NetworkSpec, weights: WeightSet, image: PlanarTensor, fps=60.0, tile_trace=None):
    """Run one schedule; returns (hr_image, SimReport)."""
    if isinstance(mode, LayerByLayer):
        return run_layer_by_layer(net, weights, image, fps=fps)
    if isinstance(mode, ClassicalFusion):
        return run_classical(net, weights, image, mode=mode, fps=fps)
    if isinstance(mode, TiltedFusion):
        return run_tilted(net, weights, image, mode=mode, fps=fps, tile_trace=tile_trace)
    raise ValueError(f"unknown schedule mode {mode!r}")


def equivalence_check(fused: PlanarTensor, reference: PlanarTensor, mask_rows=frozenset(), upscale: int = 1) -> EquivalenceStats:
    """Row-level comparison of two HR outputs.

    mask_rows are low-resolution row indices where deviation is tolerated;
    they are scaled by `upscale` before comparison.  Outside the mask the
    images must match byte for byte for confined_to_mask to hold.
    """
    if fused.data.shape != reference.data.shape:
        raise ValueError(
            f"shape mismatch: {fused.data.shape} vs {reference.data.shape}"
        )
    diff = fused.data.astype(np.int16) - reference.data.astype(np.int16)
    row_differs = np.any(diff != 0, axis=(0, 2))
    deviating = tuple(int(r) for r in np.flatnonzero(row_differs))
    hr_mask = scale_row_mask(mask_rows, upscale)
    mse = float(np.mean(np.square(diff, dtype=np.int64))) if diff.size else 0.0
    psnr = math.inf if mse == 0.0 else 10.0 * math.log10(255.0 * 255.0 / mse)
    return EquivalenceStats(
        exact_rows=int(fused.data.shape[1] - len(deviating)),
        deviating_rows=deviating,
        max_abs_deviation=int(np.abs(diff).max(initial=0)),
        psnr_db=psnr,
        mask_rows=tuple(sorted(hr_mask)),
        confined_to_mask=set(deviating) <= hr_mask,
    )


def tilted_mask_for(net: NetworkSpec, image: PlanarTensor, mode: TiltedFusion) -> frozenset:
    cfg = FusionConfig(
        image_height=image.height,
        image_width=image.width,
        num_layers=net.num_layers,
        tile_rows=mode.tile_rows,
        tile_cols=mode.tile_cols,
    )
    return lost_row_mask(cfg)


def sweep(modes, net, weights, image, fps=60.0, max_threads: int = 1):
    """One report per mode, deterministic order; cell failures are isolated."""

    def cell(mode):
        try:
            _, report = run(mode, net, weights, image, fps=fps)
            return report
        except Exception as e:  # keep other cells alive
            return SimReport(
                mode=mode.name,
                config=_base_config(mode, net, image) | {"error": str(e)},
                fps=fps,
                dram=DramTraffic(),
                cycles=CycleStats(),
            )

    modes = list(modes)
    if max_threads > 1 and len(modes) > 1:
        with ThreadPoolExecutor(max_workers=min(max_threads, len(modes))) as pool:
            return list(pool.map(cell, modes))
    return [cell(m) for m in modes]
