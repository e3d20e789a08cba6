"""Calibrated segmentation with class- and region-adaptive logit constraints."""

__version__ = "0.1.0"
