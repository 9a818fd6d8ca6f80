"""Network inversion toolkit: conditioned-generator inversion of trained
classifiers, garbage-class OOD detection with uncertainty scoring, and
training-data reconstruction auditing."""

__version__ = "0.1.0"
