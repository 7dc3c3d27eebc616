"""pyramidqa: multiscale video question answering on a numpy autodiff core."""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, backward, no_tape, record  # noqa: F401
