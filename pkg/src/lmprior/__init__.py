"""Recommender training with similarity-graph priors from text embeddings.

The toolkit turns pretrained item-text embeddings into a K-nearest-neighbor
similarity graph (global RBF or local Mahalanobis kernel) and injects it as
a quadratic penalty on item factors while training either a pairwise-ranking
matrix factorization model or an attentive sequential model. Evaluation
reports NDCG@k and HR@k over the full catalog with cold-start slices.
"""

from .errors import DataError, LmPriorError, NumericError, UsageError

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "LmPriorError",
    "NumericError",
    "UsageError",
    "__version__",
]
