"""HTTP service wrapping the analysis toolkit, plus its request/response models."""
