"""Learning-to-rank experiments on synthetic e-commerce search logs.

Labels combine a content-relevance score with graded engagement, rankers are
NDCG-optimising boosted trees, and variants are compared by offline judged
NDCG, team-draft interleaving and TreeSHAP feature importance.
"""

from .config import ExperimentConfig, load_config
from .datamodel import Channel, Dataset, FeatureSchema, Outcome, QueryGroup, VariantConfig
from .experiment import run_grid

__all__ = [
    "Channel",
    "Dataset",
    "ExperimentConfig",
    "FeatureSchema",
    "Outcome",
    "QueryGroup",
    "VariantConfig",
    "load_config",
    "run_grid",
]

__version__ = "0.1.0"
