"""Entity alignment between two knowledge graphs with a gated multi-hop GNN."""

from .evaluator import EvalConfig, EvalReport, evaluate, predict_alignment
from .graph import (
    AlignmentSet,
    KnowledgeGraphPair,
    NeighborStructure,
    SyntheticConfig,
    augment_neighborhood,
    build_neighbor_structure,
    generate_synthetic_pair,
    load_graph_pair,
    split_alignment,
)
from .model import ModelConfig, backward, forward, init_params
from .objective import LossConfig, RelationIndex, total_loss
from .trainer import TrainConfig, TrainHistory, train

__version__ = "0.1.0"
