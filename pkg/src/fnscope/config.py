"""Run configuration shared by the CLI, the service, and library callers."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field, model_validator


class RunConfig(BaseModel):
    """Thresholds and execution knobs for one analysis run.

    ``theta_loc`` is the single localization knob: it drives matching and the
    attribution chain alike, so the two can never disagree on the FN set.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    theta_loc: float = Field(default=0.5, gt=0.0, lt=1.0)
    theta_cls: float = Field(default=0.3, ge=0.0, le=1.0)
    nms_iou: float = Field(default=0.5, gt=0.0, lt=1.0)
    tide_fg: float = Field(default=0.5, gt=0.0, lt=1.0)
    tide_bg: float = Field(default=0.1, gt=0.0, lt=1.0)
    workers: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _bands_ordered(self) -> "RunConfig":
        if not self.tide_bg < self.tide_fg:
            raise ValueError(f"tide_bg {self.tide_bg} must be below tide_fg {self.tide_fg}")
        return self

    def thresholds(self) -> dict[str, float]:
        return {
            "theta_loc": self.theta_loc,
            "theta_cls": self.theta_cls,
            "nms_iou": self.nms_iou,
            "tide_fg": self.tide_fg,
            "tide_bg": self.tide_bg,
        }
