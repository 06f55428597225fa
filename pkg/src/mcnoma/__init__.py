"""Power-efficient resource allocation for downlink multicarrier NOMA."""

__version__ = "0.1.0"
