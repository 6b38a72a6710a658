"""Training-free concept erasure on a density-adaptive semantic graph."""

from .clusterid import ClusterParams, ConceptCluster, ConceptSpec, erase_plan, hop_neighborhood, identify_cluster, resolve_anchor
from .embedstore import EmbeddingTable, PromptEmbedding, load_prompt, load_table, save_prompt, save_table
from .eraser import ErasureParams, ErasureResult, attention_weights, erase, project_token, token_distance
from .errors import (
    CapacityError,
    ConvergenceError,
    FormatError,
    GraphEraseError,
    IntegrityError,
    ResolutionError,
    ValidationError,
)
from .heatkernel import DiffusionField, diffuse, diffuse_oracle, normalized_laplacian
from .semgraph import GraphParams, SemanticGraph, build_graph, degree_stats, insert_node, load_graph, save_graph

__version__ = "0.1.0"
