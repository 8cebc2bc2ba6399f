"""Testing whether a classifier's unfairness is driven by attribute encoding."""

__version__ = "0.1.0"
