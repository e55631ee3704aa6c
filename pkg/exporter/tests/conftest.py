"""Shared fixtures: small randomly initialized detectors and exported dumps.

Models are built with torchvision defaults except where noted: score
threshold 0.3 and NMS IoU 0.5 to match the analyzer's defaults, output caps
lifted so declared detections are never truncated, and classification heads
re-initialized so scores spread across [0, 1) instead of saturating (ties at
1.0 would make suppression order implementation-defined). Inputs are sized to
the transform's minimum side and a multiple of its padding so geometry is
identical in both frames.

The analyzer is exercised only through its installed command line interface.
"""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest
import torch
from torchvision.models.detection import fasterrcnn_resnet50_fpn, retinanet_resnet50_fpn

from fnscope_exporter import export_one_stage, export_two_stage

CLASS_NAMES = ("car", "person", "bicycle")


def run_cli(*args: str) -> subprocess.CompletedProcess:
    cmd = [sys.executable, "-m", "fnscope.cli", *map(str, args)]
    return subprocess.run(cmd, capture_output=True, text=True)


def read_dump(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text().splitlines()]


def make_two_stage(min_size: int = 256) -> torch.nn.Module:
    torch.manual_seed(77)
    model = fasterrcnn_resnet50_fpn(
        weights=None,
        weights_backbone=None,
        num_classes=len(CLASS_NAMES) + 1,
        min_size=min_size,
        max_size=1333,
        box_score_thresh=0.3,
        box_nms_thresh=0.5,
        box_detections_per_img=10000,
    )
    torch.nn.init.normal_(model.roi_heads.box_predictor.cls_score.weight, std=0.005)
    torch.nn.init.zeros_(model.roi_heads.box_predictor.cls_score.bias)
    return model.eval()


def make_one_stage(min_size: int = 256) -> torch.nn.Module:
    torch.manual_seed(88)
    model = retinanet_resnet50_fpn(
        weights=None,
        weights_backbone=None,
        num_classes=len(CLASS_NAMES),
        min_size=min_size,
        max_size=1333,
        score_thresh=0.3,
        nms_thresh=0.5,
        detections_per_img=100000,
        topk_candidates=300000,
    )
    # Baseline sigmoid about 0.06 with a tail past the 0.3 threshold.
    torch.nn.init.normal_(model.head.classification_head.cls_logits.weight, std=0.02)
    torch.nn.init.constant_(model.head.classification_head.cls_logits.bias, -2.8)
    return model.eval()


@pytest.fixture(scope="session")
def two_stage_model():
    return make_two_stage()


@pytest.fixture(scope="session")
def one_stage_model():
    return make_one_stage()


@pytest.fixture(scope="session")
def images() -> list[torch.Tensor]:
    gen = torch.Generator().manual_seed(2024)
    return [torch.rand(3, 256, 320, generator=gen) for _ in range(10)]


@pytest.fixture(scope="session")
def two_stage_dump(tmp_path_factory, two_stage_model, images) -> Path:
    out = tmp_path_factory.mktemp("dumps") / "two_stage.jsonl"
    return export_two_stage(two_stage_model, images, CLASS_NAMES, out)


@pytest.fixture(scope="session")
def one_stage_dump(tmp_path_factory, one_stage_model, images) -> Path:
    out = tmp_path_factory.mktemp("dumps") / "one_stage.jsonl"
    return export_one_stage(one_stage_model, images, CLASS_NAMES, out)
