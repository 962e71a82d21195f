"""Unbiased learning-to-rank lab: click simulation with known propensities,
dual-learning training with listwise distillation, and graded ranking
evaluation, all deterministic end to end."""

__version__ = "0.1.0"
