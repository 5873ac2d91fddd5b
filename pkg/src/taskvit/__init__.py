"""Multi-task vision transformer with task-routed expert FFNs, task decoders,
two-tower text-image retrieval, and a benchmark metric suite, trained
end-to-end on synthetic shape scenes."""

__version__ = "0.1.0"

from .encoder import EncoderConfig, RouteState, TaskId  # noqa: F401
from .tensor import Tensor, backward, no_grad, reset_tape  # noqa: F401
