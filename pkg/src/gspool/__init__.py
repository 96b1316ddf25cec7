"""Transport-based generalized sum pooling with a closed-form backward pass,
plus the pieces needed to train and evaluate it at desk scale: zero-shot
ridge regularization, contrastive/triplet losses, retrieval metrics, and a
synthetic trainable-token benchmark."""

from .errors import (ConfigError, DataFormatError, DegenerateGradientError,
                     GspoolError, NumericalFailure)
from .losses import contrastive_c2, pairwise_distances, triplet
from .metrics import RetrievalReport, evaluate, map_at_r, precision_at_1
from .pooling import (GspOutput, attribute_vector, clip_normalize, cost_matrix,
                      gap, gemean, gmp, gsp_backward, gsp_forward, gsp_pool)
from .synthetic import RunReport, SyntheticConfig, adam_step, sample_batch, train
from .transport import (TransportConfig, TransportSolution, ift_gradient_oracle,
                        lp_oracle, smoothed_objective, solve_backward, solve_forward,
                        transport_cost)
from .zeroshot import class_disjoint_split, combined_loss, ridge_fit, zsr_loss

__version__ = "0.1.0"
