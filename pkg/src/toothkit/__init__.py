"""Dataset preparation, synthesis and evaluation for FDI tooth detection on panoramic radiographs."""
__version__ = "0.1.0"
