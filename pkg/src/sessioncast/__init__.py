"""Per-session EV charging energy and connection-duration forecasting."""

__version__ = "0.1.0"
