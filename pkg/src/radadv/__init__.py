"""Adversarial-attack and interpretability harness for small
range-Doppler gesture classifiers, built on a taped numpy autodiff core."""

__version__ = "0.1.0"

from .tensor import Tape, Tensor, backward, grad_check  # noqa: F401
