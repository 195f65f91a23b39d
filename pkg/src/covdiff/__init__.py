"""Stream sensing for grant-free access by covariance differencing."""

__version__ = "0.1.0"
