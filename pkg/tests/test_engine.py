import json
import math

import numpy as np
import pytest

from fusesim.engine import (
    ClassicalFusion,
    LayerByLayer,
    TiltedFusion,
    equivalence_check,
    run,
    sweep,
    tilted_mask_for,
)
from fusesim.nncore import PlanarTensor, apbn7_network, reference_forward
from fusesim.tiling import FusionConfig, lost_row_mask
from fusesim.weightio import gen_image, gen_weights

NET = apbn7_network()
WEIGHTS = gen_weights(0, NET)


def image(seed, h, w):
    return PlanarTensor(gen_image(seed, 3, h, w))


# ---------------------------------------------------------------------------
# schedule equivalence
# ---------------------------------------------------------------------------

def test_layer_by_layer_equals_reference():
    img = image(1, 30, 41)
    ref = reference_forward(NET, WEIGHTS, img)
    hr, report = run(LayerByLayer(), NET, WEIGHTS, img)
    assert hr == ref
    assert report.mode == "layer_by_layer"


def test_tilted_single_strip_byte_exact():
    img = image(2, 24, 40)
    ref = reference_forward(NET, WEIGHTS, img)
    hr, report = run(TiltedFusion(tile_rows=24, tile_cols=8), NET, WEIGHTS, img)
    assert hr == ref
    mask = tilted_mask_for(NET, img, TiltedFusion(tile_rows=24, tile_cols=8))
    assert mask == frozenset()


@pytest.mark.parametrize("cols", [1, 2, 3, 8, 16])
def test_tilted_exact_for_any_tile_width_single_strip(cols):
    img = image(3, 16, 13)  # width indivisible by most tile widths
    ref = reference_forward(NET, WEIGHTS, img)
    hr, _ = run(TiltedFusion(tile_rows=16, tile_cols=cols), NET, WEIGHTS, img)
    assert hr == ref


@pytest.mark.parametrize("h,w", [(16, 5), (1, 16), (16, 1), (2, 2)])
def test_tilted_degenerate_dims_match_reference(h, w):
    # images narrower than the tile or shorter than the conv window still
    # run: clipping and zero padding keep single-strip output exact
    img = image(4, h, w)
    ref = reference_forward(NET, WEIGHTS, img)
    hr, _ = run(TiltedFusion(tile_rows=max(h, 8), tile_cols=8), NET, WEIGHTS, img)
    assert hr == ref


def test_tilted_multi_strip_deviations_confined_to_mask():
    img = image(4, 90, 40)
    mode = TiltedFusion(tile_rows=30, tile_cols=8)
    ref = reference_forward(NET, WEIGHTS, img)
    hr, _ = run(mode, NET, WEIGHTS, img)
    mask = tilted_mask_for(NET, img, mode)
    stats = equivalence_check(hr, ref, mask, NET.upscale_factor)
    assert stats.confined_to_mask
    assert stats.deviating_rows  # the cuts really do deviate at these seeds
    # rows outside the mask are byte exact
    hr_mask = {r * 3 + d for r in mask for d in range(3)}
    outside = sorted(set(range(hr.height)) - hr_mask)
    assert np.array_equal(hr.data[:, outside, :], ref.data[:, outside, :])


def test_tilted_deviation_reaches_full_mask_depth():
    # The affected band is L rows per side of a cut; with random weights the
    # outermost row of the band does deviate, pinning the mask radius.
    img = image(5, 90, 40)
    mode = TiltedFusion(tile_rows=30, tile_cols=8)
    ref = reference_forward(NET, WEIGHTS, img)
    hr, _ = run(mode, NET, WEIGHTS, img)
    diff_rows = np.flatnonzero(
        np.any(hr.data.astype(np.int16) - ref.data.astype(np.int16), axis=(0, 2))
    )
    lr_rows = {int(r) // 3 for r in diff_rows}
    assert 23 in lr_rows and 36 in lr_rows  # cut at 30: rows 23..36 affected


def test_classical_deviates_but_runs():
    img = image(6, 40, 50)
    ref = reference_forward(NET, WEIGHTS, img)
    hr, report = run(ClassicalFusion(tile=16), NET, WEIGHTS, img)
    stats = equivalence_check(hr, ref)
    assert stats.deviating_rows  # block conv loses information at tile edges
    assert report.occupancy.within_bounds


def test_tilted_is_deterministic():
    img = image(7, 70, 33)
    mode = TiltedFusion(tile_rows=32, tile_cols=4)
    hr1, rep1 = run(mode, NET, WEIGHTS, img)
    hr2, rep2 = run(mode, NET, WEIGHTS, img)
    assert hr1 == hr2
    assert json.dumps(rep1.to_dict()) == json.dumps(rep2.to_dict())


# ---------------------------------------------------------------------------
# DRAM accounting
# ---------------------------------------------------------------------------

def test_traffic_small_image_exact_bytes():
    img = image(8, 24, 32)
    _, tilted = run(TiltedFusion(tile_rows=24, tile_cols=8), NET, WEIGHTS, img)
    _, lbl = run(LayerByLayer(), NET, WEIGHTS, img)
    _, classical = run(ClassicalFusion(tile=16), NET, WEIGHTS, img)

    input_bytes = 3 * 24 * 32
    output_bytes = 3 * 72 * 96
    inter = 28 * 24 * 32
    weight_bytes = 42_840 + 4 * 195

    for rep in (tilted, lbl, classical):
        assert rep.dram.weight_bytes == weight_bytes
        assert rep.dram.input_bytes == input_bytes
        assert rep.dram.output_bytes == output_bytes
    assert tilted.dram.image_bytes_per_frame == input_bytes + output_bytes
    assert classical.dram.image_bytes_per_frame == input_bytes + output_bytes
    assert lbl.dram.intermediate_read_bytes == 6 * inter
    assert lbl.dram.intermediate_write_bytes == 6 * inter
    assert lbl.dram.image_bytes_per_frame == input_bytes + 12 * inter + output_bytes


def test_traffic_ordering_invariant():
    img = image(9, 64, 48)
    reports = {}
    for mode in (TiltedFusion(tile_rows=32), ClassicalFusion(16), LayerByLayer()):
        _, rep = run(mode, NET, WEIGHTS, img)
        reports[rep.mode] = rep.dram.image_bytes_per_frame
    assert reports["tilted"] <= reports["classical"] <= reports["layer_by_layer"]


def test_gb_per_s_scales_with_fps():
    img = image(10, 24, 32)
    _, rep = run(TiltedFusion(tile_rows=24), NET, WEIGHTS, img)
    assert math.isclose(rep.dram.gb_per_s(60), rep.dram.image_bytes_per_frame * 60 / 1e9)
    assert math.isclose(rep.dram.gb_per_s(30), rep.dram.gb_per_s(60) / 2)


# ---------------------------------------------------------------------------
# occupancy and queue discipline
# ---------------------------------------------------------------------------

def test_occupancy_within_sizing_and_queue_fills_exactly():
    img = image(11, 60, 64)
    trace = []
    _, rep = run(TiltedFusion(tile_rows=60, tile_cols=8), NET, WEIGHTS, img, tile_trace=trace)
    occ = rep.occupancy
    assert occ.within_bounds
    assert occ.peak_overlap_slabs == 9  # the L+2 depth is reached, never passed
    assert occ.peak_pingpong_bank_bytes <= rep.sizing.pingpong_bytes
    assert occ.peak_overlap_bytes <= rep.sizing.overlap_bytes
    assert occ.peak_residual_bytes <= rep.sizing.residual_bytes


def test_pingpong_banks_exclusive_during_fused_run(monkeypatch):
    # within any one layer, all reads hit one bank and all writes the other
    from fusesim import engine as engine_mod

    pairs = []
    orig = engine_mod.PingPongPair

    def capture(capacity):
        pair = orig(capacity)
        pairs.append(pair)
        return pair

    monkeypatch.setattr(engine_mod, "PingPongPair", capture)
    img = image(20, 24, 24)
    run(TiltedFusion(tile_rows=12, tile_cols=8), NET, WEIGHTS, img)
    (pair,) = pairs
    segment = {"read": set(), "write": set()}
    segments = []
    for op, bank in pair.access_log:
        if op == "swap":
            segments.append(segment)
            segment = {"read": set(), "write": set()}
        else:
            segment[op].add(bank)
    assert segments
    for seg in segments:
        assert len(seg["read"]) <= 1 and len(seg["write"]) <= 1
        assert not (seg["read"] & seg["write"])


def test_per_tile_queue_trace_steady_state():
    img = image(12, 20, 16)  # one strip, tiles at 0, 8, 16 (epilogue)
    trace = []
    run(TiltedFusion(tile_rows=20, tile_cols=8), NET, WEIGHTS, img, tile_trace=trace)
    assert len(trace) == 3
    first, steady, epilogue = trace
    assert first["pushes"] == 7 and first["pops"] == 0
    assert first["occupancy_before"] == 0 and first["occupancy_after"] == 7
    for t in (steady, epilogue):
        assert t["pushes"] == 7 and t["pops"] == 7
        assert t["occupancy_before"] == t["occupancy_after"] == 7
    assert steady["peak_slabs"] == 9


# ---------------------------------------------------------------------------
# equivalence_check
# ---------------------------------------------------------------------------

def test_equivalence_identical_images():
    img = image(13, 12, 12)
    stats = equivalence_check(img, img)
    assert stats.exact_rows == 12
    assert stats.deviating_rows == ()
    assert stats.max_abs_deviation == 0
    assert math.isinf(stats.psnr_db)
    assert stats.to_dict()["psnr_db"] is None  # JSON sentinel for infinity


def test_equivalence_reports_rows_and_mask():
    a = PlanarTensor(np.zeros((1, 6, 4), dtype=np.uint8))
    b_data = np.zeros((1, 6, 4), dtype=np.uint8)
    b_data[0, 2, 1] = 10
    b = PlanarTensor(b_data)
    stats = equivalence_check(a, b, mask_rows={1}, upscale=2)
    assert stats.deviating_rows == (2,)
    assert stats.mask_rows == (2, 3)
    assert stats.confined_to_mask
    assert stats.max_abs_deviation == 10
    stats2 = equivalence_check(a, b, mask_rows={0}, upscale=2)
    assert not stats2.confined_to_mask


def test_equivalence_dimension_mismatch():
    with pytest.raises(ValueError):
        equivalence_check(
            PlanarTensor.zeros(1, 4, 4), PlanarTensor.zeros(1, 5, 4)
        )


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def test_sweep_empty():
    assert sweep([], NET, WEIGHTS, image(14, 16, 16)) == []


def test_sweep_pingpong_linear_in_width_traffic_constant():
    img = image(15, 30, 24)
    modes = [TiltedFusion(tile_rows=30, tile_cols=c) for c in (1, 2, 4, 8, 16)]
    reports = sweep(modes, NET, WEIGHTS, img)
    pingpong = [r.sizing.pingpong_bytes for r in reports]
    assert pingpong == [30 * c * 28 for c in (1, 2, 4, 8, 16)]
    traffic = {r.dram.image_bytes_per_frame for r in reports}
    assert len(traffic) == 1


def test_sweep_default_modes_reproduce_sizing_table():
    img = image(18, 24, 32)
    reports = sweep([TiltedFusion(), ClassicalFusion()], NET, WEIGHTS, img)
    tilted, classical = reports
    assert tilted.sizing.pingpong_pair_bytes == 26_880
    assert tilted.sizing.overlap_bytes == 30_240
    assert tilted.sizing.residual_bytes == 2_700
    assert classical.sizing.pingpong_pair_bytes == 201_600
    assert classical.sizing.overlap_bytes == 0
    assert classical.sizing.residual_bytes == 10_800


def test_sweep_isolates_cell_failures():
    img = image(16, 30, 24)
    # classical tile below the 3x3 kernel is rejected inside its cell only
    reports = sweep([ClassicalFusion(tile=60), ClassicalFusion(tile=-1)], NET, WEIGHTS, img)
    assert reports[0].config.get("error") is None
    assert "error" in reports[1].config


def test_sweep_threads_match_sequential():
    img = image(17, 30, 24)
    modes = [TiltedFusion(tile_rows=30, tile_cols=c) for c in (2, 4)] + [LayerByLayer()]
    seq = [r.to_dict() for r in sweep(modes, NET, WEIGHTS, img, max_threads=1)]
    par = [r.to_dict() for r in sweep(modes, NET, WEIGHTS, img, max_threads=3)]
    assert seq == par
