"""Segmentation-free license-plate recognition: a small numpy autodiff engine,
separable-convolution recognizer with a CTC head, affine rectification and a
rule-based plate-string grammar with a synthetic renderer."""

from .blocks import CornerModel, Encoder, Recognizer, param_count
from .ctc import Alphabet, CTCInfeasibleError, ctc_beam_decode, ctc_greedy_decode, ctc_loss
from .platelang import PlateString, fabricate_string, render_plate, validate
from .rectify import DegenerateQuadError, SingularTransformError, fit_affine, rectify_plate, warp_bilinear
from .tensor import GraphError, ShapeError, Tensor, gradcheck

__version__ = "0.1.0"

__all__ = [
    "Alphabet",
    "CTCInfeasibleError",
    "CornerModel",
    "DegenerateQuadError",
    "Encoder",
    "GraphError",
    "PlateString",
    "Recognizer",
    "ShapeError",
    "SingularTransformError",
    "Tensor",
    "ctc_beam_decode",
    "ctc_greedy_decode",
    "ctc_loss",
    "fabricate_string",
    "fit_affine",
    "gradcheck",
    "param_count",
    "rectify_plate",
    "render_plate",
    "validate",
    "warp_bilinear",
]
