"""Simulator and training harness for evidential quantum multimodal fusion."""

__version__ = "0.1.0"
