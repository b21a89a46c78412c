"""Image-to-report generation with global-information attention and a gated visual decoder."""

__version__ = "0.1.0"
