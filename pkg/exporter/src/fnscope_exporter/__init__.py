"""Export torchvision detector internals as introspection dumps.

Hooks a detection model at three pipeline points — proposals, refined
per-class scores and boxes (pre-threshold, pre-NMS), and final detections —
and writes the line-delimited dump format consumed by the fnscope analyzer.
The capture is non-perturbing: model outputs with and without the taps
installed are bit-identical.
"""

from .export import export_one_stage, export_two_stage
from .taps import MissingTapError, TapBundle, capture_one_stage, capture_two_stage

__version__ = "0.1.0"

__all__ = [
    "MissingTapError",
    "TapBundle",
    "capture_one_stage",
    "capture_two_stage",
    "export_one_stage",
    "export_two_stage",
    "__version__",
]
