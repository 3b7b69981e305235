"""Inertial Bregman proximal gradient methods with runtime theory checks."""

__version__ = "0.1.0"
