"""Confusion visual trees and coarse-to-fine branch networks."""

__version__ = "0.1.0"
