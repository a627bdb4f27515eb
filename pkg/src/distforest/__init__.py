"""Distributional regression trees and forests with CRPS and pinball entropy splits."""

__version__ = "0.1.0"
