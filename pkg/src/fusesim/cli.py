"""Command-line front end.

Subcommands:
    run      one schedule, emit a JSON report and optionally the HR image
    compare  reference + all schedules, verify the cross-schedule invariants
    sweep    a grid of schedules/tile shapes, JSON or CSV table
    sizes    buffer sizing comparison table
    plan     dump the tilted tile plan as JSON

Runs are reproducible from (seed, flags); every report embeds its config.
"""

import argparse
import csv
import json
import os
import sys

from . import engine, pnm, weightio
from .buffers import BufferConfig, SimulationError, sizing_report
from .nncore import PlanarTensor, apbn7_network, reference_forward
from .tiling import FusionConfig, strip_plans_to_dict

# The accelerator design budgets 42.54 KB of SRAM for weights; the raw
# tensor payload comes out differently, so the sizes table can show either.
NOMINAL_WEIGHT_BYTES = 42540


def _parse_size(text: str):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="PRNG seed for weights/image")
    p.add_argument("--weights", help="FWS1 weight file (default: generated from seed)")
    p.add_argument("--input", help="PPM/PGM input image (default: random from seed)")
    p.add_argument("--size", type=_parse_size, default=(640, 360), metavar="WxH",
                   help="random-image dimensions (default 640x360)")
    p.add_argument("--tile-rows", type=int, default=60)
    p.add_argument("--tile-cols", type=int, default=8)
    p.add_argument("--classical-tile", type=int, default=60)
    p.add_argument("--fps", type=float, default=60.0)
    p.add_argument("--report", help="write the JSON report here")


def _load_inputs(args):
    if args.input is None and args.seed is None:
        raise SystemExit("error: need exactly one input source: --input or --seed")
    if args.weights:
        net, weights = weightio.load_weights(args.weights)
    else:
        if args.seed is None:
            raise SystemExit("error: need --weights or --seed for the weight source")
        net = apbn7_network()
        weights = weightio.gen_weights(args.seed, net)
    if args.input:
        image = pnm.load_image(args.input)
    else:
        w, h = args.size
        image = PlanarTensor(
            weightio.gen_image(args.seed + 1, net.layers[0].in_channels, h, w)
        )
    return net, weights, image


def _mode_from_args(args):
    if args.mode == "layer-by-layer":
        return engine.LayerByLayer()
    if args.mode == "classical":
        return engine.ClassicalFusion(tile=args.classical_tile)
    return engine.TiltedFusion(tile_rows=args.tile_rows, tile_cols=args.tile_cols)


def _emit_report(args, payload: dict):
    text = json.dumps(payload, indent=2)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)


def _provenance(args) -> dict:
    keys = ("seed", "weights", "input", "size", "tile_rows", "tile_cols",
            "classical_tile", "fps")
    return {k: getattr(args, k, None) for k in keys}


def cmd_run(args) -> int:
    net, weights, image = _load_inputs(args)
    hr, report = engine.run(_mode_from_args(args), net, weights, image, fps=args.fps)
    if args.out_image:
        pnm.save_image(args.out_image, hr)
    payload = report.to_dict()
    payload["cli"] = _provenance(args)
    _emit_report(args, payload)
    return 0


def cmd_compare(args) -> int:
    net, weights, image = _load_inputs(args)
    reference = reference_forward(net, weights, image)
    tilted_mode = engine.TiltedFusion(args.tile_rows, args.tile_cols)
    mask = engine.tilted_mask_for(net, image, tilted_mode)
    runs, failures = {}, []
    for mode in (engine.LayerByLayer(), engine.ClassicalFusion(args.classical_tile), tilted_mode):
        hr, report = engine.run(mode, net, weights, image, fps=args.fps)
        use_mask = mask if report.mode == "tilted" else frozenset()
        report.equivalence = engine.equivalence_check(
            hr, reference, mask_rows=use_mask, upscale=net.upscale_factor
        )
        runs[report.mode] = (hr, report)
        if args.out_image:
            root, ext = os.path.splitext(args.out_image)
            pnm.save_image(f"{root}.{report.mode}{ext or '.ppm'}", hr)

    lbl, tilted = runs["layer_by_layer"][1], runs["tilted"][1]
    if runs["layer_by_layer"][0] != reference:
        failures.append("layer-by-layer-equivalence")
    if not tilted.equivalence.confined_to_mask:
        failures.append("interior-exactness")
    for name, (_, rep) in runs.items():
        if rep.occupancy is not None and not rep.occupancy.within_bounds:
            failures.append(f"occupancy:{name}")
    traffic = {m: r.dram.image_bytes_per_frame for m, (_, r) in runs.items()}
    if not traffic["tilted"] <= traffic["classical"] <= traffic["layer_by_layer"]:
        failures.append("traffic-ordering")

    payload = {
        "cli": _provenance(args),
        "reduction_vs_layer_by_layer": 1.0
        - tilted.dram.image_bytes_per_frame / lbl.dram.image_bytes_per_frame,
        "invariant_failures": failures,
        "runs": {m: r.to_dict() for m, (_, r) in runs.items()},
    }
    _emit_report(args, payload)
    if failures:
        print(f"invariant violations: {', '.join(failures)}", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args) -> int:
    net, weights, image = _load_inputs(args)
    modes = [engine.LayerByLayer(), engine.ClassicalFusion(args.classical_tile)]
    for cols in args.sweep_cols:
        modes.append(engine.TiltedFusion(args.tile_rows, cols))
    threads = int(os.environ.get("FUSESIM_THREADS", "1"))
    reports = engine.sweep(modes, net, weights, image, fps=args.fps, max_threads=threads)
    if args.csv:
        rows = [r.to_flat_dict() for r in reports]
        fieldnames = sorted({k for row in rows for k in row})
        with open(args.csv, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(rows)
    payload = {"cli": _provenance(args), "cells": [r.to_dict() for r in reports]}
    _emit_report(args, payload)
    return 0


def _kb(n: int) -> str:
    return f"{n / 1000:.2f}KB"


def cmd_sizes(args) -> int:
    net = apbn7_network()
    chans = net.channel_counts
    tilted_cfg = BufferConfig(args.tile_rows, args.tile_cols, net.num_layers, chans)
    classical_cfg = BufferConfig(args.classical_tile, args.classical_tile, net.num_layers, chans)
    weights = weightio.gen_weights(0, net)
    computed = weights.payload_bytes()
    use = computed if args.computed_weights else NOMINAL_WEIGHT_BYTES
    tilted = sizing_report(tilted_cfg, tilted=True, weight_bytes=use)
    classical = sizing_report(classical_cfg, tilted=False, weight_bytes=use)

    rows = [
        ("Weight Buffer", tilted.weight_bytes, classical.weight_bytes),
        ("Ping-Pong Buffers", tilted.pingpong_pair_bytes, classical.pingpong_pair_bytes),
        ("Overlap Buffer", tilted.overlap_bytes, None),
        ("Residual Buffer", tilted.residual_bytes, classical.residual_bytes),
        ("Total", tilted.total_bytes, classical.total_bytes),
    ]
    print(f"{'':24}{'Tilted':>12}{'Classical':>12}")
    for name, a, b in rows:
        print(f"{name:24}{_kb(a):>12}{_kb(b) if b is not None else '-':>12}")
    print(
        f"\nweight payload from tensor shapes: {computed} B "
        f"({sum(w.size for w in weights.weights)} weights + "
        f"{sum(b.size for b in weights.biases)} biases); "
        f"nominal SRAM budget: {NOMINAL_WEIGHT_BYTES} B"
    )
    if args.report:
        _emit_report(args, {"tilted": tilted.to_dict(), "classical": classical.to_dict(),
                            "computed_weight_bytes": computed})
    return 0


def cmd_plan(args) -> int:
    w, h = args.size
    cfg = FusionConfig(h, w, num_layers=7, tile_rows=args.tile_rows, tile_cols=args.tile_cols)
    _emit_report(args, strip_plans_to_dict(cfg))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fusesim",
        description="functional and performance simulator for tilted layer fusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one schedule")
    _add_common(p_run)
    p_run.add_argument("--mode", choices=("tilted", "classical", "layer-by-layer"),
                       default="tilted")
    p_run.add_argument("--out-image", help="write the HR output as PPM")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run all schedules against the reference")
    _add_common(p_cmp)
    p_cmp.add_argument("--out-image", help="basename for per-mode HR PPMs")
    p_cmp.set_defaults(func=cmd_compare)

    p_sweep = sub.add_parser("sweep", help="run a grid of schedules")
    _add_common(p_sweep)
    p_sweep.add_argument("--sweep-cols", type=int, nargs="+", default=[1, 2, 4, 8, 16],
                         help="tilted tile widths to sweep")
    p_sweep.add_argument("--csv", help="also write a flat CSV table")
    p_sweep.set_defaults(func=cmd_sweep)

    p_sizes = sub.add_parser("sizes", help="print the buffer sizing comparison")
    p_sizes.add_argument("--tile-rows", type=int, default=60)
    p_sizes.add_argument("--tile-cols", type=int, default=8)
    p_sizes.add_argument("--classical-tile", type=int, default=60)
    p_sizes.add_argument("--computed-weights", action="store_true",
                         help="use the shape-derived weight payload in totals instead "
                              "of the nominal 42.54KB budget")
    p_sizes.add_argument("--report", help="write the JSON report here")
    p_sizes.set_defaults(func=cmd_sizes)

    p_plan = sub.add_parser("plan", help="dump the tilted tile plan")
    p_plan.add_argument("--size", type=_parse_size, default=(640, 360), metavar="WxH")
    p_plan.add_argument("--tile-rows", type=int, default=60)
    p_plan.add_argument("--tile-cols", type=int, default=8)
    p_plan.add_argument("--report", help="write the JSON plan here")
    p_plan.set_defaults(func=cmd_plan)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, SimulationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
