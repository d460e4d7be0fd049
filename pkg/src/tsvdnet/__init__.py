"""Multi-source domain adaptation with a low-rank tensor prior on class similarities.

Submodules
----------
tensor_core     third-order tensors, FFT along mode 3, t-product
tsvd_lowrank    T-SVD, tensor nuclear norm and its proximal operator
model_grad      small MLP with classifier and uncertainty heads, manual gradients
objective       loss terms and their partials
proto_align     prototypes, pseudo-labels, similarity tensors
trainer         alternating optimization loop
synthdata       seeded synthetic domains
formats         T3B tensors, run configs, CSV
cli             ``tsvdnet`` command
"""

from .errors import TsvdNetError
from .synthdata import BenchmarkConfig
from .tensor_core import t_product, t_transpose
from .trainer import TrainConfig, train
from .tsvd_lowrank import rotated_prox, shrinkage_prox, tensor_nuclear_norm, tsvd

__all__ = [
    "BenchmarkConfig",
    "TrainConfig",
    "TsvdNetError",
    "rotated_prox",
    "shrinkage_prox",
    "t_product",
    "t_transpose",
    "tensor_nuclear_norm",
    "train",
    "tsvd",
]
