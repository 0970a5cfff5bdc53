"""Raw-waveform speaker verification toolkit.

Front-end embedding network trained with cross-entropy plus center and
speaker-basis losses, DNN and cosine back-end classifiers, and EER scoring,
all on a small numpy autodiff engine.
"""

__version__ = "0.1.0"

from .tensor import Tensor, backward, no_grad  # noqa: F401
