"""Event-driven simulator and analysis pipeline for a heralded
single-photon link between two trapped Ca+ ions."""

__version__ = "0.1.0"
