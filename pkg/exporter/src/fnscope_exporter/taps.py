"""Single-image capture taps for torchvision detection pipelines.

Each capture function runs one image through the model (batch size 1, so the
anchor grid and padding depend only on that image) with temporary hooks at the
three pipeline points and returns a :class:`TapBundle` of raw tensors. Score
vectors are captured before any confidence thresholding and before NMS; boxes
are kept in the model's resized coordinate frame alongside both frame sizes so
the writer can map them back bit-exactly the way the model maps its own
output.

Hooks are removed (and the wrapped proposal filter restored) on every exit
path, and the wrappers only observe values, so a capture run never changes
what the model computes.
"""

from __future__ import annotations

from contextlib import ExitStack
from dataclasses import dataclass

import torch
from torch import Tensor
from torchvision.ops import boxes as box_ops


class MissingTapError(RuntimeError):
    """A required pipeline tap point is absent on the given model."""

    def __init__(self, step: str, detail: str):
        super().__init__(f"cannot tap {step}: {detail}")
        self.step = step


@dataclass(frozen=True)
class TapBundle:
    """Raw per-image captures from one forward pass.

    ``refined_boxes``/``refined_scores`` are the full pre-threshold, pre-NMS
    head output: for a two-stage model ``[R, C+1, 4]`` clipped boxes and
    ``[R, C+1]`` softmax rows (background in column 0, as the head emits it);
    for a one-stage model ``[A, 4]`` clipped boxes and ``[A, K]`` sigmoid
    scores over the whole anchor grid. Boxes are in the resized frame;
    ``detections`` is the model's final output in the original frame.
    """

    image_id: str
    original_size: tuple[int, int]  # (height, width)
    resized_size: tuple[int, int]  # (height, width), before padding
    proposal_boxes: Tensor | None  # [R, 4], resized frame; None for one-stage
    objectness: Tensor | None  # [R]; None for one-stage
    refined_boxes: Tensor
    refined_scores: Tensor
    detections: dict[str, Tensor]  # boxes / labels / scores, original frame
    anchor_count: int | None = None  # one-stage only


def _check_eval(model) -> None:
    if getattr(model, "training", False):
        raise ValueError("model must be in eval() mode for export")


def _require(model, step: str, path: str):
    obj = model
    for name in path.split("."):
        obj = getattr(obj, name, None)
        if obj is None:
            raise MissingTapError(step, f"model has no {path!r}")
    return obj


class _Slot:
    """Holder a hook writes into exactly once per forward."""

    def __init__(self, step: str):
        self.step = step
        self.value = None

    def set(self, value) -> None:
        self.value = value

    def get(self):
        if self.value is None:
            raise MissingTapError(self.step, "tap never fired during the forward pass")
        return self.value


def _wrap_method(stack: ExitStack, owner, name: str, slot: _Slot):
    """Shadow a plain (non-module) method on the instance, restoring on exit."""
    original = getattr(owner, name)
    had_override = name in vars(owner)

    def wrapper(*args, **kwargs):
        out = original(*args, **kwargs)
        slot.set(out)
        return out

    setattr(owner, name, wrapper)

    def restore():
        if had_override:
            setattr(owner, name, original)
        else:
            delattr(owner, name)

    stack.callback(restore)
    return slot


def _hook_output(stack: ExitStack, module, slot: _Slot):
    handle = module.register_forward_hook(lambda m, args, out: slot.set(out))
    stack.callback(handle.remove)
    return slot


def capture_two_stage(model, image: Tensor, image_id: str) -> TapBundle:
    """Run one image through an R-CNN-style detector and capture all taps.

    Requires ``model.transform``, ``model.rpn.filter_proposals`` (proposal
    generation) and ``model.roi_heads.box_predictor``/``box_coder`` (box
    refinement); raises :class:`MissingTapError` naming the missing step.
    """
    _check_eval(model)
    transform = _require(model, "image preprocessing", "transform")
    rpn = _require(model, "proposal generation", "rpn")
    _require(model, "proposal generation", "rpn.filter_proposals")
    predictor = _require(model, "box refinement", "roi_heads.box_predictor")
    box_coder = _require(model, "box refinement", "roi_heads.box_coder")

    t_slot = _Slot("image preprocessing")
    p_slot = _Slot("proposal generation")
    h_slot = _Slot("box refinement")
    with ExitStack() as stack, torch.no_grad():
        _hook_output(stack, transform, t_slot)
        _wrap_method(stack, rpn, "filter_proposals", p_slot)
        _hook_output(stack, predictor, h_slot)
        detections = model([image])[0]

        image_list, _ = t_slot.get()
        proposal_boxes, objectness = (x[0] for x in p_slot.get())
        class_logits, box_regression = h_slot.get()

        resized = image_list.image_sizes[0]
        # Same decode/softmax/clip the head applies before filtering, so the
        # kept detections are exact slices of these arrays.
        boxes = box_coder.decode(box_regression, [proposal_boxes])
        scores = torch.softmax(class_logits, dim=-1)
        boxes = box_ops.clip_boxes_to_image(boxes, resized)

    return TapBundle(
        image_id=image_id,
        original_size=(int(image.shape[-2]), int(image.shape[-1])),
        resized_size=(int(resized[0]), int(resized[1])),
        proposal_boxes=proposal_boxes,
        objectness=objectness,
        refined_boxes=boxes,
        refined_scores=scores,
        detections=detections,
    )


def capture_one_stage(model, image: Tensor, image_id: str) -> TapBundle:
    """Run one image through a dense single-shot detector and capture all taps.

    Requires ``model.transform``, ``model.anchor_generator`` (anchor
    generation) and ``model.head``/``model.box_coder`` (per-anchor prediction);
    raises :class:`MissingTapError` naming the missing step.
    """
    _check_eval(model)
    transform = _require(model, "image preprocessing", "transform")
    anchor_gen = _require(model, "anchor generation", "anchor_generator")
    head = _require(model, "per-anchor prediction", "head")
    box_coder = _require(model, "per-anchor prediction", "box_coder")

    t_slot = _Slot("image preprocessing")
    a_slot = _Slot("anchor generation")
    h_slot = _Slot("per-anchor prediction")
    with ExitStack() as stack, torch.no_grad():
        _hook_output(stack, transform, t_slot)
        _hook_output(stack, anchor_gen, a_slot)
        _hook_output(stack, head, h_slot)
        detections = model([image])[0]

        image_list, _ = t_slot.get()
        anchors = a_slot.get()[0]
        head_out = h_slot.get()
        if not isinstance(head_out, dict) or "cls_logits" not in head_out or "bbox_regression" not in head_out:
            raise MissingTapError("per-anchor prediction", "head output lacks cls_logits/bbox_regression")

        resized = image_list.image_sizes[0]
        boxes = box_coder.decode_single(head_out["bbox_regression"][0], anchors)
        scores = torch.sigmoid(head_out["cls_logits"][0])
        boxes = box_ops.clip_boxes_to_image(boxes, resized)

    return TapBundle(
        image_id=image_id,
        original_size=(int(image.shape[-2]), int(image.shape[-1])),
        resized_size=(int(resized[0]), int(resized[1])),
        proposal_boxes=None,
        objectness=None,
        refined_boxes=boxes,
        refined_scores=scores,
        detections=detections,
        anchor_count=int(anchors.shape[0]),
    )
