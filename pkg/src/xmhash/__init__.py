"""Cross-modal hashing with jointly learned unified codes and modality-specific encoders."""

__version__ = "0.1.0"
