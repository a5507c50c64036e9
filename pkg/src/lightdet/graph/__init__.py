"""Layer graphs: schema, presets, shape inference and execution."""
from .presets import MODEL_IDS, MODEL_NAMES, build_preset
from .runtime import WeightStore, forward, materialize
from .shapes import ShapeReport, block_for, shape_infer
from .spec import GraphSpec, NodeSpec, load_graph, save_graph

__all__ = [
    "GraphSpec", "MODEL_IDS", "MODEL_NAMES", "NodeSpec", "ShapeReport", "WeightStore",
    "block_for", "build_preset", "forward", "load_graph", "materialize", "save_graph",
    "shape_infer",
]
