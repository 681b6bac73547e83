"""U-Net crop segmentation: training, evaluation and inference on overhead imagery."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
