"""Tile geometry for the three execution schedules.

The tilted schedule partitions each strip of R rows into C-column tiles
whose footprint shifts one column left per layer: feature map i of a tile
based at column b covers [b-i, b-i+C).  The right boundary is then always
self-sufficient, and the left boundary needs exactly the two columns the
previous tile finished last, which is what the overlap queue carries.
The final conv output therefore lags the input load by L columns and is
drained by narrow epilogue tiles at the end of each strip.
"""

import math
from dataclasses import dataclass

SLAB_COLS = 2  # columns carried per layer in the overlap queue


@dataclass(frozen=True)
class FusionConfig:
    image_height: int
    image_width: int
    num_layers: int = 7
    tile_rows: int = 60
    tile_cols: int = 8

    def __post_init__(self):
        if self.image_height < 1 or self.image_width < 1:
            raise ValueError("image dims must be positive")
        if self.tile_rows < 1 or self.tile_cols < 1:
            raise ValueError("tile dims must be positive")
        if self.num_layers < 1:
            raise ValueError("need at least one layer")

    @property
    def num_strips(self) -> int:
        return math.ceil(self.image_height / self.tile_rows)

    def strip_rows(self, strip: int) -> tuple:
        r0 = strip * self.tile_rows
        return (r0, min(r0 + self.tile_rows, self.image_height))


@dataclass(frozen=True)
class TileRegion:
    """Column/row window of one feature map; feature_map 0 is the input image."""

    feature_map: int
    rows: tuple
    cols: tuple

    @property
    def width(self) -> int:
        return self.cols[1] - self.cols[0]

    @property
    def height(self) -> int:
        return self.rows[1] - self.rows[0]

    @property
    def is_empty(self) -> bool:
        return self.width <= 0 or self.height <= 0


@dataclass(frozen=True)
class TilePlan:
    strip: int
    index: int
    base_col: int
    # regions[i] is feature map i: [0] the DRAM load, [i>=1] conv layer i's output.
    regions: tuple
    # halo_cols[i-1] lists the in-image columns conv layer i consumes from the
    # overlap queue (at most two, empty for the first tile of a strip).
    halo_cols: tuple


@dataclass(frozen=True)
class StripPlan:
    strip: int
    rows: tuple
    tiles: tuple


def _clip(c0: int, c1: int, width: int) -> tuple:
    a, b = max(c0, 0), min(c1, width)
    return (a, b) if b > a else (min(a, width), min(a, width))


def tilted_col_range(base_col: int, layer: int, cfg: FusionConfig) -> tuple:
    """Columns of feature map `layer` covered by the tile based at base_col,
    clipped to the image: [base-layer, base-layer+C) & [0, W)."""
    if not 0 <= layer < cfg.num_layers:
        raise ValueError(f"layer {layer} out of range [0, {cfg.num_layers})")
    c0 = base_col - layer
    return _clip(c0, c0 + cfg.tile_cols, cfg.image_width)


def plan_strip(strip_index: int, cfg: FusionConfig) -> StripPlan:
    """All tiles of one strip, left to right, epilogue included.

    Tiles are emitted until every feature map through the final conv output
    (which lags L columns behind the load) covers the full width; the union
    of each feature map's regions over the strip is exactly [0, W).
    """
    if not 0 <= strip_index < cfg.num_strips:
        raise ValueError(f"strip {strip_index} out of range [0, {cfg.num_strips})")
    rows = cfg.strip_rows(strip_index)
    width, depth = cfg.image_width, cfg.num_layers
    tiles = []
    for index, base in enumerate(range(0, width + depth, cfg.tile_cols)):
        regions = []
        for fm in range(depth + 1):
            c0 = base - fm
            regions.append(TileRegion(fm, rows, _clip(c0, c0 + cfg.tile_cols, width)))
        halos = []
        for layer in range(1, depth + 1):
            if index == 0:
                halos.append(())
            else:
                lo, hi = _clip(base - layer - 1, base - layer + 1, width)
                halos.append(tuple(range(lo, hi)))
        tiles.append(
            TilePlan(strip_index, index, base, tuple(regions), tuple(halos))
        )
    return StripPlan(strip_index, rows, tuple(tiles))


def plan_classical(height: int, width: int, tile: int) -> list:
    """Non-overlapping square block-convolution tiles covering the image.

    Every layer of a classical tile is convolved with zero padding on all
    four sides, so information is lost along every interior tile edge.
    """
    if tile < 3:
        raise ValueError(f"classical tile must be at least 3, got {tile}")
    tiles = []
    for r0 in range(0, height, tile):
        for c0 in range(0, width, tile):
            tiles.append(
                TileRegion(0, (r0, min(r0 + tile, height)), (c0, min(c0 + tile, width)))
            )
    return tiles


def lost_row_mask(cfg: FusionConfig) -> frozenset:
    """Feature-map rows whose values may differ from the whole-image reference.

    A strip convolves its top and bottom rows against zeros instead of the
    neighbor strip's data, and each of the L conv layers widens the affected
    band by one row, so the mask is the L rows on each side of every internal
    strip cut.  Rows at the actual image border are zero-padded identically
    by the reference and stay exact.
    """
    mask = set()
    radius = cfg.num_layers
    for strip in range(1, cfg.num_strips):
        cut = strip * cfg.tile_rows
        mask.update(range(max(cut - radius, 0), min(cut + radius, cfg.image_height)))
    return frozenset(mask)


def scale_row_mask(mask, upscale: int) -> frozenset:
    return frozenset(r * upscale + d for r in mask for d in range(upscale))


def strip_plans_to_dict(cfg: FusionConfig) -> dict:
    """JSON-friendly dump of the full tilted plan (CLI `plan` subcommand)."""
    strips = []
    for s in range(cfg.num_strips):
        plan = plan_strip(s, cfg)
        strips.append(
            {
                "strip": plan.strip,
                "rows": list(plan.rows),
                "tiles": [
                    {
                        "index": t.index,
                        "base_col": t.base_col,
                        "regions": [
                            {"feature_map": r.feature_map, "cols": list(r.cols)}
                            for r in t.regions
                        ],
                        "halo_cols": [list(h) for h in t.halo_cols],
                    }
                    for t in plan.tiles
                ],
            }
        )
    return {
        "image_height": cfg.image_height,
        "image_width": cfg.image_width,
        "num_layers": cfg.num_layers,
        "tile_rows": cfg.tile_rows,
        "tile_cols": cfg.tile_cols,
        "lost_rows": sorted(lost_row_mask(cfg)),
        "strips": strips,
    }
