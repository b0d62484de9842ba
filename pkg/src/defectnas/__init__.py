"""Neural architecture search for multi-target concrete defect classification."""

__version__ = "0.1.0"
