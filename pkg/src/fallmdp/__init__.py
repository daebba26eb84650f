"""Minimum-impulse humanoid falling on an abstract pendulum model."""
