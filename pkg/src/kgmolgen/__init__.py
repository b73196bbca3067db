"""Knowledge-graph guided molecular graph diffusion."""

__version__ = "0.1.0"
