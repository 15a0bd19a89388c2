"""Heterogeneous graph contrastive learning with structure-aware hard negatives."""

from .contrast import ContrastConfig, ProjectionHead, critic, info_nce, total_objective
from .encoder import HeteroEncoder
from .estimator import HoraceEmbedder
from .evaluation import EvalReport, knn_eval
from .hetgraph import HeteroGraph, Metapath, SemanticView, load_graph, metapath_adjacency, save_graph, synthetic_hg
from .pipeline import RunConfig, ablate, run, train
from .structure import StructureIndex, build_candidates, hardness, laplacian_pe, ppr

__all__ = [
    "ContrastConfig",
    "EvalReport",
    "HeteroEncoder",
    "HeteroGraph",
    "HoraceEmbedder",
    "Metapath",
    "ProjectionHead",
    "RunConfig",
    "SemanticView",
    "StructureIndex",
    "ablate",
    "build_candidates",
    "critic",
    "hardness",
    "info_nce",
    "knn_eval",
    "laplacian_pe",
    "load_graph",
    "metapath_adjacency",
    "ppr",
    "run",
    "save_graph",
    "synthetic_hg",
    "total_objective",
    "train",
]
__version__ = "0.1.0"
