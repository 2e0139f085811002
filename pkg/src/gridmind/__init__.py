"""Object-goal navigation on seeded gridworlds with a multi-stream agent."""

__version__ = "0.1.0"
