"""Text-augmented anomaly detection on precomputed pathology embeddings."""

__version__ = "0.1.0"
