"""Decoder-only transformers: causal LM, NAR codec-level model, training, decoding."""
