"""Channel estimation and detection for massive MIMO uplinks with nonlinear hardware."""

__version__ = "0.1.0"
