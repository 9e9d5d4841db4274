"""Graph-embedding losses and tooling for few-shot supervised domain adaptation."""

from .graphs import (
    BatchMeta,
    DomainTag,
    degree,
    intrinsic_weights,
    laplacian,
    pairwise_quadratic,
    penalty_weights,
)
from .losses import (
    LossWeights,
    contrastive_as_graph,
    contrastive_from_graph,
    contrastive_grad,
    contrastive_loss,
    cross_entropy,
    neighbourhood_grad,
    neighbourhood_loss,
    total_objective,
    trace_ratio_grad,
    trace_ratio_loss,
)
from .network import Network, SGD, load_checkpoint, save_checkpoint
from .spectral import (
    linear_probe_descent,
    smallest_generalized_eigenpair,
    scatter_matrices,
    trace_ratio_linear,
)

__version__ = "0.1.0"
