"""Quantum-limited multiparameter timing estimation for two incoherent pulses.

Parameters are the centroid ``tau0``, the separation ``tau`` and the weight
``q`` of the earlier pulse. Internally all times are measured in units of the
pulse RMS width ``sigma``.
"""
from .estimation import Estimate, invert_gls, ml_estimate
from .information import crlb, direct_fisher, povm_fisher, qfi_matrix
from .measurement import ChannelProbabilities, ExactForward, ResponseModel, canonical_projectors, channel_probabilities
from .pulse_modes import PulseParams, PulseShape

__version__ = "0.1.0"

__all__ = [
    "ChannelProbabilities",
    "Estimate",
    "ExactForward",
    "PulseParams",
    "PulseShape",
    "ResponseModel",
    "canonical_projectors",
    "channel_probabilities",
    "crlb",
    "direct_fisher",
    "invert_gls",
    "ml_estimate",
    "povm_fisher",
    "qfi_matrix",
]
