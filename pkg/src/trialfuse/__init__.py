"""Multimodal clinical-trial outcome prediction: schema-guided
textualization, validation, embedding, sparse mixture-of-experts fusion,
calibration, and evaluation."""

__version__ = "0.1.0"
