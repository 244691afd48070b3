"""Motor-imagery BCI pipeline benchmark with cross-dataset meta-analysis."""

__version__ = "0.1.0"
