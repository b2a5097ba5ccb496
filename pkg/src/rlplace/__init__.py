"""RL-guided analytical global placement at desk scale."""

__version__ = "0.1.0"
