"""Confidence estimation for structured linear predictors.

Chain (sequence labeling) and tree (dependency parsing) models trained
online, with per-unit confidence scores, their evaluation, and two
applications: precision/recall trading and active learning.
"""

__version__ = "0.1.0"
