"""Joint traffic / 802.11p broadcast-performance models with a cross-check simulator."""

__version__ = "0.1.0"
