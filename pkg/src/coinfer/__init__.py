"""Collaborative-inference offloading simulator and learner for an industrial IoT cell."""

__version__ = "0.1.0"
