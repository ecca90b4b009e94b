"""Streaming ride-comfort scoring.

Per-trip anomaly detection over driving features (speed, jerk,
congestion) fused into a personalized 5-level comfort score and a
trip-level driver rating.
"""

__version__ = "0.1.0"
