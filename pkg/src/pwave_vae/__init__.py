"""P-wave onset detection as anomaly detection with convolutional VAEs."""

__version__ = "0.1.0"
