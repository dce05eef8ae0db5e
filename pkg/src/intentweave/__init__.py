"""Intent-taxonomy expansion, synthetic query generation, and evaluation toolkit."""

__version__ = "0.1.0"
