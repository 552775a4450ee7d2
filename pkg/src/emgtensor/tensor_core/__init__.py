from .cp import CpOperator, CpVector, cp_apply, cp_to_full
from .dense import DENSE_CAP, from_vector, matricize, vectorize
from .ht import (
    HtTensor,
    cp_to_ht,
    ht_add,
    ht_apply,
    ht_apply_leaf,
    ht_axpby,
    ht_entry,
    ht_from_dense,
    ht_full,
    ht_inner,
    ht_norm,
    ht_ranks,
    ht_scale,
    ht_singular_values,
    ht_storage,
    ht_subtensor,
    ht_zeros,
    orthogonalize,
    truncate,
)
from .io import load_ht, save_ht
from .tree import DimensionTree, build_balanced_tree

__all__ = [
    "CpOperator", "CpVector", "DENSE_CAP", "DimensionTree", "HtTensor", "build_balanced_tree",
    "cp_apply", "cp_to_full", "cp_to_ht", "from_vector", "ht_add", "ht_apply", "ht_apply_leaf",
    "ht_axpby", "ht_entry", "ht_from_dense", "ht_full", "ht_inner", "ht_norm", "ht_ranks",
    "ht_scale", "ht_singular_values", "ht_storage", "ht_subtensor", "ht_zeros", "load_ht",
    "matricize", "orthogonalize", "save_ht", "truncate", "vectorize",
]
