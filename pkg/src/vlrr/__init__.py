"""Vision-language mission planning and obstacle-aware NMPC for a simulated quadrotor."""

__version__ = "0.1.0"
