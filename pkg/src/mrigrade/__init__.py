"""Toolkit for recall-feedback training on multi-channel MRI-like volumes.

Pipeline stages: synthetic phantom generation, gland-focused preprocessing,
symmetry-based feature extraction, loss functions with validation-driven
feedback, a small differentiable classifier with the full training protocol,
and cascade refinement for ordinal grade groups.
"""

__version__ = "0.1.0"
