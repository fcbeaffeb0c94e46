"""Dynamic interlaced CT simulation and ADMM-INR reconstruction."""

__version__ = "0.1.0"
