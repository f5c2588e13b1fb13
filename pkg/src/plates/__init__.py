"""Vibration modes and resonance waves of elastic plates on Whitney fields."""
__version__ = "0.1.0"
