from .gm import condense_gm, gm_distance, matching_loss
from .krr import condense_krr, gntk, krr_loss
from .synth import gen_structure, init_structure, init_synthetic, sparsify
from .tm import ExpertBuffer, build_expert_buffer, condense_tm
from .types import CondenseConfig, CondensedGraph, CondenseError, \
    CondenseResult, config_hash

__all__ = [
    "CondenseConfig", "CondensedGraph", "CondenseError", "CondenseResult",
    "ExpertBuffer", "build_expert_buffer", "condense_gm", "condense_krr",
    "condense_tm", "config_hash", "gen_structure", "gm_distance", "gntk",
    "init_structure", "init_synthetic", "krr_loss", "matching_loss",
    "sparsify",
]
