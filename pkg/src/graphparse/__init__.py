"""Joint inference of soft graph structure and node labels by message passing."""

from graphparse.tensor import Tensor, Tape, ShapeError, TapeError

__all__ = ["Tensor", "Tape", "ShapeError", "TapeError"]
__version__ = "0.1.0"
