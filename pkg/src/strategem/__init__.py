"""Parallelism-strategy planning and discrete-event training simulation."""

__version__ = "0.1.0"
