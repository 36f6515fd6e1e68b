"""orbtrack: hybrid UKF/particle-filter tracking of Earth-orbiting objects."""

__version__ = "0.1.0"
