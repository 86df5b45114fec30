"""Synthetic wearable stress data: preprocessing, GANs with differential
privacy, fidelity checks and leave-one-subject-out evaluation."""

__version__ = "0.1.0"
