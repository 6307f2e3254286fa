"""
speakerid - LPCC Speaker Recognition Toolkit

This package contains the LPCC front-end, the cepstral parameterizations,
the VQ and covariance-matrix classifiers and the mismatch experiment
harness used to build speaker identification and verification tables.
"""

__version__ = "1.0.0"
__author__ = "speakerid Team"
