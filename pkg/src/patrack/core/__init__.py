"""
PATrack Core.

Tensor engine (tape-based reverse mode), PRNG, optimizer, gradient oracle,
checkpoint store and JSON schema validation.
"""

from patrack.core.rng import Rng
from patrack.core.tensor import GradTape, Tensor, backward, no_grad, ones, tensor, zeros

__all__ = ["GradTape", "Rng", "Tensor", "backward", "no_grad", "ones", "tensor", "zeros"]
