"""Single-image dehazing with perceptually motivated training losses."""

__version__ = "0.1.0"
