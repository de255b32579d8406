"""Unit-based speech-to-speech translation built from scratch at desk scale.

Speech is discretised into semantic units, translated by a decoder-only
unit language model, given durations by a second language model, turned
into residual-vector-quantised codec tokens by an autoregressive plus
non-autoregressive language model, and decoded back to a waveform.
"""

__version__ = "0.1.0"
