"""Hoeffding functional decomposition of tree ensembles."""

from .decomposition import Decomposition, export_decomposition, import_decomposition
from .model import Ensemble, Tree, TreeNode, import_boosted_dump, parse_ensemble, serialize_ensemble
from .solver import SolveParams, fit_ensemble_hfd, fit_tree_hfd
from .trainer import GbtConfig, fit_gbt

__all__ = [
    "Decomposition", "Ensemble", "GbtConfig", "SolveParams", "Tree", "TreeNode",
    "export_decomposition", "fit_ensemble_hfd", "fit_gbt", "fit_tree_hfd",
    "import_boosted_dump", "import_decomposition", "parse_ensemble", "serialize_ensemble",
]
