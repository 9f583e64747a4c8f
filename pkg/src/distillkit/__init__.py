"""Task-agnostic knowledge distillation for transformer speech encoders, at desk scale."""

__version__ = "0.1.0"
