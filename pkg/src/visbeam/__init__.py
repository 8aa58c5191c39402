"""Vision-aided mmWave beam tracking lab."""

__version__ = "0.1.0"
