"""Training-based synchronization and channel estimation for AF two-way relaying."""

__version__ = "0.1.0"
