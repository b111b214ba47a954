"""Orthogonal RNNs with a scaled Cayley parametrization of the recurrent matrix."""

from .cayley import (
    ScalingMatrix,
    SkewParams,
    grad_skew,
    init_block_diag,
    inverse_scaled_cayley,
    materialize,
    pack,
    scaled_cayley,
)
from .network import LstmCell, ScoCell, lstm_backward, lstm_forward, sco_backward, sco_forward
from .stiefel import orthogonality_score

__version__ = "0.1.0"
