"""fusesim: bit-exact simulator and performance model of a tilted-layer-fusion
super-resolution accelerator."""

from .buffers import BufferConfig, SimulationError, SizingReport, sizing_report
from .engine import (
    ClassicalFusion,
    LayerByLayer,
    SimReport,
    TiltedFusion,
    equivalence_check,
    run,
    sweep,
)
from .nncore import (
    NetworkSpec,
    PlanarTensor,
    WeightSet,
    apbn7_network,
    reference_forward,
)
from .tiling import FusionConfig, lost_row_mask
from .weightio import gen_image, gen_weights, load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "BufferConfig",
    "ClassicalFusion",
    "FusionConfig",
    "LayerByLayer",
    "NetworkSpec",
    "PlanarTensor",
    "SimReport",
    "SimulationError",
    "SizingReport",
    "TiltedFusion",
    "WeightSet",
    "apbn7_network",
    "equivalence_check",
    "gen_image",
    "gen_weights",
    "load_weights",
    "lost_row_mask",
    "reference_forward",
    "run",
    "save_weights",
    "sizing_report",
    "sweep",
    "__version__",
]
