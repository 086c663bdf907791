"""Adversarially learned inference laboratory."""

__version__ = "0.1.0"
