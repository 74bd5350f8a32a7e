"""Federated fine-tuning simulator for multi-head augmented LoRA and its baselines."""

__version__ = "0.1.0"
