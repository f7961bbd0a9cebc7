"""Learnable audio frontends trained with supervised and contrastive objectives."""

__version__ = "0.1.0"

SAMPLE_RATE = 16000
